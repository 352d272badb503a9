//! End-to-end verification studies: discrete spectra across refinement
//! levels, Richardson extrapolation per eigenvalue track, the interlacing and
//! union-of-spectra checks, the trial-subspace Rayleigh bound, the
//! Neumann exploration, and the divergence boundary-trace diagnostic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, AssembledPencil, OperatorKind};
use crate::eigensolve::{
    dense_generalized_eigen, gradient_deflation, solve_lowest, EigenPair, Preconditioner,
    SolveOptions, Spectrum,
};
use crate::error::{Error, Result};
use crate::mesh::{build_box_mesh, BoxSpec, TetMesh};
use crate::oracle::{
    box_modes_below, box_spectrum, cube_spectrum_exact, interlace_check_with_tols, InterlaceRecord,
    SpectrumFamily,
};

/// Crude single-level error allowance when no refinement data exists.
const SINGLE_LEVEL_REL_RESIDUAL: f64 = 0.05;

// ---------------------------------------------------------------------------
// Richardson extrapolation
// ---------------------------------------------------------------------------

/// Extrapolation of one eigenvalue track over nested refinements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackFit {
    pub index: usize,
    pub raw: Vec<f64>,
    pub extrapolated: f64,
    /// Fitted convergence rate; present only with >= 3 monotone levels.
    pub rate: Option<f64>,
    /// Estimated remaining model error of the extrapolated value.
    pub residual: f64,
}

/// Richardson-extrapolate a track of values computed at mesh sizes shrinking
/// by `ratio` per level (coarsest first). The rate is fitted from the last
/// three levels and clamped to [1, 4]; with fewer levels the model rate 2 is
/// assumed; non-monotone tails fall back to the finest value with a
/// conservative residual.
pub fn richardson(values: &[f64], ratio: f64) -> TrackFit {
    assert!(!values.is_empty());
    assert!(ratio > 1.0);
    let raw = values.to_vec();
    let vc = *values.last().unwrap();
    if values.len() == 1 {
        return TrackFit {
            index: 0,
            raw,
            extrapolated: vc,
            rate: None,
            residual: SINGLE_LEVEL_REL_RESIDUAL * vc.abs().max(1e-300),
        };
    }
    let vb = values[values.len() - 2];
    if values.len() == 2 {
        let extrapolated = vc + (vc - vb) / (ratio.powi(2) - 1.0);
        return TrackFit {
            index: 0,
            raw,
            extrapolated,
            rate: None,
            residual: (extrapolated - vc).abs(),
        };
    }
    let va = values[values.len() - 3];
    let d1 = vb - va;
    let d2 = vc - vb;
    if d1 * d2 <= 0.0 || d2.abs() < 1e-15 * vc.abs().max(1.0) {
        // non-monotone or stagnated: no reliable rate
        return TrackFit {
            index: 0,
            raw,
            extrapolated: vc,
            rate: None,
            residual: d2.abs().max(1e-15 * vc.abs()),
        };
    }
    let p = (d1.abs() / d2.abs()).ln() / ratio.ln();
    let p = p.clamp(1.0, 4.0);
    let extrapolated = vc + d2 / (ratio.powf(p) - 1.0);
    TrackFit {
        index: 0,
        raw,
        extrapolated,
        rate: Some(p),
        residual: (extrapolated - vc).abs(),
    }
}

/// Per-operator raw values and fitted tracks over the refinement levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub operator: String,
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub tracks: Vec<TrackFit>,
}

impl ConvergenceTable {
    /// Tracks matched across levels by ascending index: spectra arrive
    /// sorted, and proximity matching with ascending tie-break reduces to
    /// index matching for non-crossing tracks.
    fn fit(operator: String, levels: Vec<usize>, h: Vec<f64>, per_level: &[Vec<f64>]) -> Self {
        let ratio = if levels.len() >= 2 {
            levels[levels.len() - 1] as f64 / levels[levels.len() - 2] as f64
        } else {
            2.0
        };
        let count = per_level.iter().map(|v| v.len()).min().unwrap_or(0);
        let tracks = (0..count)
            .map(|i| {
                let values: Vec<f64> = per_level.iter().map(|v| v[i]).collect();
                let mut fit = richardson(&values, ratio);
                fit.index = i;
                fit
            })
            .collect();
        ConvergenceTable {
            operator,
            levels,
            h,
            tracks,
        }
    }
}

// ---------------------------------------------------------------------------
// Study specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DomainSpec {
    /// Box (0,a)x(0,b)x(0,c), meshed at the study's refinement levels.
    Box { a: f64, b: f64, c: f64 },
    /// Pre-built mesh (single level, no refinement sequence).
    MeshFile(String),
}

impl DomainSpec {
    pub fn cube(side: f64) -> DomainSpec {
        DomainSpec::Box {
            a: side,
            b: side,
            c: side,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DomainSpec::Box { a, b, c } => format!("box({a}, {b}, {c})"),
            DomainSpec::MeshFile(p) => format!("mesh({p})"),
        }
    }

    fn mesh_at_level(&self, n: usize) -> Result<TetMesh> {
        match self {
            DomainSpec::Box { a, b, c } => build_box_mesh(&BoxSpec::new(*a, *b, *c, n, n, n)),
            DomainSpec::MeshFile(path) => {
                let text = std::fs::read_to_string(path)?;
                TetMesh::read_json(&text)
            }
        }
    }

    /// Exact integer spectra exist only for the equal-side pi cube.
    fn is_pi_cube(&self) -> bool {
        match self {
            DomainSpec::Box { a, b, c } => {
                let pi = std::f64::consts::PI;
                (a - pi).abs() < 1e-15 && (b - pi).abs() < 1e-15 && (c - pi).abs() < 1e-15
            }
            DomainSpec::MeshFile(_) => false,
        }
    }
}

/// Everything needed to reproduce one verification study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySpec {
    pub domain: DomainSpec,
    pub kmax: usize,
    /// Eigenvalue tracks requested by the union check.
    pub nev: usize,
    /// Box subdivisions per refinement level (coarsest first).
    pub levels: Vec<usize>,
    pub order: usize,
    pub solver_tol: f64,
    /// Skip FEM entirely and verify on enumerated spectra.
    pub oracle_only: bool,
    pub seed: u64,
}

impl StudySpec {
    pub fn new(domain: DomainSpec, kmax: usize, levels: Vec<usize>) -> StudySpec {
        StudySpec {
            domain,
            kmax,
            nev: 6,
            levels,
            order: 1,
            solver_tol: 1e-8,
            oracle_only: false,
            seed: 0x5eed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kmax == 0 {
            return Err(Error::InvalidSpec("kmax must be >= 1".into()));
        }
        if !self.oracle_only && self.levels.is_empty() {
            return Err(Error::InvalidSpec(
                "need at least one refinement level".into(),
            ));
        }
        Ok(())
    }

    fn solve_opts(&self) -> SolveOptions {
        SolveOptions {
            tol: self.solver_tol,
            preconditioner: Preconditioner::IncompleteCholesky,
            seed: self.seed,
            ..SolveOptions::default()
        }
    }

    fn box_sides(&self) -> Result<(f64, f64, f64)> {
        match &self.domain {
            DomainSpec::Box { a, b, c } => Ok((*a, *b, *c)),
            DomainSpec::MeshFile(_) => Err(Error::InvalidSpec(
                "oracle spectra need a box domain".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Interlacing study
// ---------------------------------------------------------------------------

/// Full record of one interlacing verification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterlaceReport {
    pub domain: String,
    pub kmax: usize,
    /// "oracle" or "fem+richardson".
    pub provenance: String,
    pub records: Vec<InterlaceRecord>,
    pub tolerances: Vec<f64>,
    pub overall_pass: bool,
    /// Convergence tables for the curl-curl and Dirichlet tracks (FEM runs).
    pub convergence: Vec<ConvergenceTable>,
    /// Raw spectra per level, for the CSV export.
    pub spectra: Vec<Spectrum>,
}

impl InterlaceReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# Interlacing check: alpha_(2k+1) <= lambda_k\n\ndomain: {}\nprovenance: {}\noverall: {}\n\n",
            self.domain,
            self.provenance,
            if self.overall_pass { "PASS" } else { "FAIL" }
        ));
        s.push_str("| k | alpha_(2k+1) | lambda_k | margin | tol | verdict |\n");
        s.push_str("|---|--------------|----------|--------|-----|--------|\n");
        for (r, tol) in self.records.iter().zip(&self.tolerances) {
            s.push_str(&format!(
                "| {} | {:.9} | {:.9} | {:.9} | {:.2e} | {} |\n",
                r.k,
                r.alpha_2k1,
                r.lambda_k,
                r.margin,
                tol,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        for table in &self.convergence {
            s.push_str(&format!("\n## Convergence: {}\n\n", table.operator));
            s.push_str("| track | raw values | extrapolated | rate | residual |\n");
            s.push_str("|-------|------------|--------------|------|----------|\n");
            for t in &table.tracks {
                let raw: Vec<String> = t.raw.iter().map(|v| format!("{v:.6}")).collect();
                s.push_str(&format!(
                    "| {} | {} | {:.9} | {} | {:.2e} |\n",
                    t.index + 1,
                    raw.join(", "),
                    t.extrapolated,
                    t.rate.map_or("-".into(), |p| format!("{p:.2}")),
                    t.residual
                ));
            }
        }
        s
    }

    /// Raw spectra per level as CSV (operator, level h, index, value, residual).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("operator,h,dofs,index,value,residual\n");
        for sp in &self.spectra {
            for (i, (v, r)) in sp.values.iter().zip(&sp.residuals).enumerate() {
                s.push_str(&format!(
                    "{},{:.17e},{},{},{:.17e},{:.17e}\n",
                    sp.operator, sp.h, sp.dofs, i, v, r
                ));
            }
        }
        s
    }
}

fn solve_operator_spectrum(
    mesh: &TetMesh,
    op: OperatorKind,
    order: usize,
    nev: usize,
    opts: &SolveOptions,
) -> Result<(Spectrum, Vec<EigenPair>)> {
    let pencil = assemble(mesh, op, order)?;
    let deflation = if op == OperatorKind::CurlCurl {
        Some(gradient_deflation(mesh)?)
    } else {
        None
    };
    let pairs = solve_lowest(
        &pencil.stiffness,
        &pencil.mass,
        nev,
        deflation.as_ref(),
        opts,
    )?;
    let spectrum = Spectrum::from_pairs(op, mesh.h_max(), order, pencil.dofs.free_count, &pairs);
    Ok((spectrum, pairs))
}

/// Verify the interlacing inequality. Oracle mode enumerates exact spectra
/// with tolerance 0; FEM mode computes both spectra at each refinement level,
/// extrapolates per track, and compares with the per-k tolerance
/// `max(2 * extrapolation residual, 1e-6 * lambda_k)`. Unresolved solver
/// pairs surface through the spectra's flagged lists, never silently.
pub fn run_interlace_study(spec: &StudySpec) -> Result<InterlaceReport> {
    spec.validate()?;
    let kmax = spec.kmax;
    if spec.oracle_only {
        let (alpha, lambda) = if spec.domain.is_pi_cube() {
            let a = cube_spectrum_exact(SpectrumFamily::Maxwell, 2 * kmax + 1)?;
            let l = cube_spectrum_exact(SpectrumFamily::Dirichlet, kmax)?;
            (
                a.into_iter().map(|v| v as f64).collect::<Vec<f64>>(),
                l.into_iter().map(|v| v as f64).collect::<Vec<f64>>(),
            )
        } else {
            let (a, b, c) = spec.box_sides()?;
            (
                box_spectrum(SpectrumFamily::Maxwell, a, b, c, 2 * kmax + 1)?,
                box_spectrum(SpectrumFamily::Dirichlet, a, b, c, kmax)?,
            )
        };
        let check = interlace_check_with_tols(&alpha, &lambda, kmax, &vec![0.0; kmax])?;
        return Ok(InterlaceReport {
            domain: spec.domain.describe(),
            kmax,
            provenance: "oracle".into(),
            records: check.records,
            tolerances: vec![0.0; kmax],
            overall_pass: check.all_pass,
            convergence: Vec::new(),
            spectra: Vec::new(),
        });
    }

    let opts = spec.solve_opts();
    let mut alpha_levels: Vec<Vec<f64>> = Vec::new();
    let mut lambda_levels: Vec<Vec<f64>> = Vec::new();
    let mut spectra = Vec::new();
    let mut hs = Vec::new();
    for &n in &spec.levels {
        let mesh = spec.domain.mesh_at_level(n)?;
        hs.push(mesh.h_max());
        let (s_alpha, _) =
            solve_operator_spectrum(&mesh, OperatorKind::CurlCurl, 1, 2 * kmax + 1, &opts)?;
        let (s_lambda, _) = solve_operator_spectrum(
            &mesh,
            OperatorKind::DirichletLaplacian,
            spec.order,
            kmax,
            &opts,
        )?;
        alpha_levels.push(s_alpha.values.clone());
        lambda_levels.push(s_lambda.values.clone());
        spectra.push(s_alpha);
        spectra.push(s_lambda);
    }
    let alpha_table = ConvergenceTable::fit(
        "curlcurl".into(),
        spec.levels.clone(),
        hs.clone(),
        &alpha_levels,
    );
    let lambda_table =
        ConvergenceTable::fit("dirichlet".into(), spec.levels.clone(), hs, &lambda_levels);
    let alpha_hat: Vec<f64> = alpha_table.tracks.iter().map(|t| t.extrapolated).collect();
    let lambda_hat: Vec<f64> = lambda_table.tracks.iter().map(|t| t.extrapolated).collect();
    let tols: Vec<f64> = (1..=kmax)
        .map(|k| {
            let res = alpha_table.tracks[2 * k].residual + lambda_table.tracks[k - 1].residual;
            (2.0 * res).max(1e-6 * lambda_hat[k - 1].abs())
        })
        .collect();
    let check = interlace_check_with_tols(&alpha_hat, &lambda_hat, kmax, &tols)?;
    Ok(InterlaceReport {
        domain: spec.domain.describe(),
        kmax,
        provenance: "fem+richardson".into(),
        records: check.records,
        tolerances: tols,
        overall_pass: check.all_pass,
        convergence: vec![alpha_table, lambda_table],
        spectra,
    })
}

// ---------------------------------------------------------------------------
// Union-of-spectra check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnionTrackRecord {
    pub index: usize,
    pub oracle_value: f64,
    pub fem_extrapolated: f64,
    pub deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnionReport {
    pub domain: String,
    pub nev: usize,
    pub oracle_union: Vec<f64>,
    pub tracks: Vec<UnionTrackRecord>,
    /// Counting identity |{union <= V}| = |{Dirichlet <= V}| + |{Maxwell <= V}|
    /// evaluated at a probe ceiling on the oracle data.
    pub counting_ceiling: f64,
    pub counting_union: usize,
    pub counting_parts: usize,
    pub counting_exact: bool,
    pub overall_pass: bool,
    pub convergence: Option<ConvergenceTable>,
}

/// Count oracle eigenvalues (with multiplicity) at or below the ceiling.
pub fn count_at_or_below(family: SpectrumFamily, a: f64, b: f64, c: f64, ceiling: f64) -> usize {
    match family {
        SpectrumFamily::BForm => {
            count_at_or_below(SpectrumFamily::Dirichlet, a, b, c, ceiling)
                + count_at_or_below(SpectrumFamily::Maxwell, a, b, c, ceiling)
        }
        _ => box_modes_below(family, a, b, c, ceiling)
            .iter()
            .map(|(m, _)| m.multiplicity())
            .sum(),
    }
}

/// Compare the FEM div-curl spectrum against the merged oracle union of the
/// Dirichlet and Maxwell spectra, per extrapolated track. Refused (by
/// assembly) on non-convex domains.
pub fn run_union_check(spec: &StudySpec, track_rel_tol: f64) -> Result<UnionReport> {
    spec.validate()?;
    let (a, b, c) = spec.box_sides()?;
    let nev = spec.nev;
    let oracle_union = box_spectrum(SpectrumFamily::BForm, a, b, c, nev)?;

    // counting identity on oracle data at a ceiling between eigenvalues
    let ceiling = oracle_union[nev - 1] + 0.5;
    let counting_union = count_at_or_below(SpectrumFamily::BForm, a, b, c, ceiling);
    let counting_parts = count_at_or_below(SpectrumFamily::Dirichlet, a, b, c, ceiling)
        + count_at_or_below(SpectrumFamily::Maxwell, a, b, c, ceiling);
    let counting_exact = counting_union == counting_parts;

    if spec.oracle_only {
        let tracks = (0..nev)
            .map(|i| UnionTrackRecord {
                index: i,
                oracle_value: oracle_union[i],
                fem_extrapolated: oracle_union[i],
                deviation: 0.0,
                tol: 0.0,
                pass: true,
            })
            .collect();
        return Ok(UnionReport {
            domain: spec.domain.describe(),
            nev,
            oracle_union,
            tracks,
            counting_ceiling: ceiling,
            counting_union,
            counting_parts,
            counting_exact,
            overall_pass: counting_exact,
            convergence: None,
        });
    }

    let opts = spec.solve_opts();
    let mut per_level = Vec::new();
    let mut hs = Vec::new();
    for &n in &spec.levels {
        let mesh = spec.domain.mesh_at_level(n)?;
        hs.push(mesh.h_max());
        let (s, _) = solve_operator_spectrum(&mesh, OperatorKind::BForm, 1, nev, &opts)?;
        per_level.push(s.values.clone());
    }
    let table = ConvergenceTable::fit("bform".into(), spec.levels.clone(), hs, &per_level);
    let mut tracks = Vec::with_capacity(nev);
    for i in 0..nev {
        let fit = &table.tracks[i];
        let deviation = (fit.extrapolated - oracle_union[i]).abs();
        let tol = (2.0 * fit.residual).max(track_rel_tol * oracle_union[i].abs());
        tracks.push(UnionTrackRecord {
            index: i,
            oracle_value: oracle_union[i],
            fem_extrapolated: fit.extrapolated,
            deviation,
            tol,
            pass: deviation <= tol,
        });
    }
    let overall_pass = counting_exact && tracks.iter().all(|t: &UnionTrackRecord| t.pass);
    Ok(UnionReport {
        domain: spec.domain.describe(),
        nev,
        oracle_union,
        tracks,
        counting_ceiling: ceiling,
        counting_union,
        counting_parts,
        counting_exact,
        overall_pass,
        convergence: Some(table),
    })
}

// ---------------------------------------------------------------------------
// Trial-subspace bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialDecompositionRow {
    pub eigen_index: usize,
    pub component: usize,
    /// div-curl energy of the single-component field phi_j e_c.
    pub sb_energy: f64,
    /// Sum of component gradient energies of the same field.
    pub grad_energy: f64,
    /// The integration-by-parts cross terms (vanish for conforming H01
    /// components, up to rounding).
    pub cross_terms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSubspaceReport {
    pub k: usize,
    pub dimension: usize,
    pub lambda_k: f64,
    pub max_quotient: f64,
    /// max_quotient / lambda_k.
    pub ratio: f64,
    pub pass: bool,
    pub decomposition: Vec<TrialDecompositionRow>,
}

/// The variational mechanism behind the interlacing inequality, discretely:
/// place the first k Dirichlet eigenfunctions in each vector component (a
/// 3k-dim subspace of the div-curl space), restrict the div-curl pencil to
/// that span, and check its maximal Rayleigh quotient is at most lambda_k^h.
/// Componentwise integration by parts is exact for conforming P1, so this
/// holds to rounding; for k's whose lambda_k is the top of the used block,
/// the quotient equals lambda_k^h.
pub fn run_trial_subspace_check(
    mesh: &TetMesh,
    k: usize,
    opts: &SolveOptions,
) -> Result<TrialSubspaceReport> {
    if k == 0 {
        return Err(Error::InvalidSpec("k must be >= 1".into()));
    }
    let lap = assemble(mesh, OperatorKind::DirichletLaplacian, 1)?;
    let pairs = solve_lowest(&lap.stiffness, &lap.mass, k, None, opts)?;
    let lambda_k = pairs[k - 1].value;
    let bform: AssembledPencil = assemble(mesh, OperatorKind::BForm, 1)?;

    // trial vectors: eigenfunction j in component c, in BForm free dofs
    let nb = bform.dofs.free_count;
    let mut trial = DMatrix::zeros(nb, 3 * k);
    for (v, frame) in bform.dofs.vertex_frames.iter().enumerate() {
        if frame.directions.len() != 3 {
            continue; // boundary vertices carry no H01 component dofs
        }
        let Some(p1_dof) = lap.dofs.entity_to_dof[v] else {
            continue;
        };
        for (j, pair) in pairs.iter().enumerate() {
            let val = pair.vector[p1_dof];
            for c in 0..3 {
                trial[(frame.first_dof + c, 3 * j + c)] = val;
            }
        }
    }

    let k_trial = bform.stiffness.mul_mat(&trial);
    let m_trial = bform.mass.mul_mat(&trial);
    let a = trial.transpose() * &k_trial;
    let b = trial.transpose() * &m_trial;
    let (vals, _) = dense_generalized_eigen(&a, &b)
        .map_err(|_| Error::InvalidSpec("trial Gram pencil is rank deficient".into()))?;
    let max_quotient = vals[vals.len() - 1];

    // decomposition table: sb(u,u) vs componentwise gradient energy
    let mut decomposition = Vec::with_capacity(3 * k);
    for (j, pair) in pairs.iter().enumerate() {
        let grad_energy = pair.vector.dot(&lap.stiffness.mul_vec(&pair.vector));
        for c in 0..3 {
            let col = 3 * j + c;
            let sb_energy = a[(col, col)] / b[(col, col)];
            decomposition.push(TrialDecompositionRow {
                eigen_index: j + 1,
                component: c,
                sb_energy,
                grad_energy,
                cross_terms: sb_energy - grad_energy,
            });
        }
    }

    let pass = max_quotient <= lambda_k * (1.0 + 1e-8);
    Ok(TrialSubspaceReport {
        k,
        dimension: 3 * k,
        lambda_k,
        max_quotient,
        ratio: max_quotient / lambda_k,
        pass,
        decomposition,
    })
}

// ---------------------------------------------------------------------------
// Neumann exploration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumannRecord {
    pub k: usize,
    pub mu_k_plus_3: f64,
    pub lambda_k: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumannReport {
    pub domain: String,
    pub kmax: usize,
    /// Always true: this comparison is reported, never gated.
    pub exploratory: bool,
    pub records: Vec<NeumannRecord>,
    pub all_margins_positive: bool,
    pub provenance: String,
}

/// Tabulate mu_{k+3} against lambda_k (the conjectured Neumann-Dirichlet
/// inequality the interlacing result feeds into). Reported as exploratory:
/// no verdict is gated on it.
pub fn run_neumann_exploration(spec: &StudySpec) -> Result<NeumannReport> {
    spec.validate()?;
    let kmax = spec.kmax;
    let (mu, lambda, provenance) = if spec.oracle_only {
        let (a, b, c) = spec.box_sides()?;
        (
            box_spectrum(SpectrumFamily::Neumann, a, b, c, kmax + 3)?,
            box_spectrum(SpectrumFamily::Dirichlet, a, b, c, kmax)?,
            "oracle".to_string(),
        )
    } else {
        let opts = spec.solve_opts();
        let n = *spec.levels.last().ok_or(Error::InvalidSpec(
            "need a refinement level for FEM Neumann data".into(),
        ))?;
        let mesh = spec.domain.mesh_at_level(n)?;
        let (s_mu, _) = solve_operator_spectrum(
            &mesh,
            OperatorKind::NeumannLaplacian,
            spec.order,
            kmax + 3,
            &opts,
        )?;
        let (s_lam, _) = solve_operator_spectrum(
            &mesh,
            OperatorKind::DirichletLaplacian,
            spec.order,
            kmax,
            &opts,
        )?;
        (s_mu.values, s_lam.values, format!("fem(n={n})"))
    };
    if mu.len() < kmax + 3 || lambda.len() < kmax {
        return Err(Error::InsufficientSpectrum {
            needed: kmax + 3,
            available: mu.len().min(lambda.len()),
        });
    }
    let records: Vec<NeumannRecord> = (1..=kmax)
        .map(|k| NeumannRecord {
            k,
            mu_k_plus_3: mu[k + 2],
            lambda_k: lambda[k - 1],
            margin: lambda[k - 1] - mu[k + 2],
        })
        .collect();
    let all_margins_positive = records.iter().all(|r| r.margin > 0.0);
    Ok(NeumannReport {
        domain: spec.domain.describe(),
        kmax,
        exploratory: true,
        records,
        all_margins_positive,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// Divergence boundary-trace diagnostic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivTraceRecord {
    pub eigen_index: usize,
    pub eigenvalue: f64,
    /// Share of the div-curl energy carried by the divergence part; near 1
    /// for gradient-type eigenvectors, near 0 for Maxwell-type.
    pub div_energy_fraction: f64,
    pub interior_rms: f64,
    pub boundary_rms: f64,
    /// boundary_rms / interior_rms; meaningful for gradient-type vectors.
    pub trace_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivTraceReport {
    pub domain: String,
    pub records: Vec<DivTraceRecord>,
}

/// Expand a BForm free-dof vector to per-vertex 3-vectors through the frames.
fn expand_vector_field(
    mesh: &TetMesh,
    pencil: &AssembledPencil,
    u: &DVector<f64>,
) -> Vec<[f64; 3]> {
    let mut field = vec![[0.0; 3]; mesh.vertex_count()];
    for (v, frame) in pencil.dofs.vertex_frames.iter().enumerate() {
        for (i, dir) in frame.directions.iter().enumerate() {
            let q = u[frame.first_dof + i];
            for d in 0..3 {
                field[v][d] += q * dir[d];
            }
        }
    }
    field
}

/// For each eigenvector of the div-curl pencil: compute the piecewise
/// constant divergence, L2-project it onto P1, and compare its RMS over
/// boundary vertices to its RMS over interior vertices. For converged
/// gradient-type eigenvectors the boundary share shrinks under refinement
/// (the projected divergence approaches an H01 function); for Maxwell-type
/// eigenvectors the divergence itself shrinks. Diagnostic only.
pub fn run_div_trace_diagnostic(
    mesh: &TetMesh,
    pencil: &AssembledPencil,
    pairs: &[EigenPair],
) -> Result<DivTraceReport> {
    let mass_full = assemble(mesh, OperatorKind::NeumannLaplacian, 1)?.mass;
    let mut records = Vec::with_capacity(pairs.len());
    for (idx, pair) in pairs.iter().enumerate() {
        let field = expand_vector_field(mesh, pencil, &pair.vector);
        // piecewise-constant divergence and its energy
        let mut div_energy = 0.0;
        let mut rhs = DVector::zeros(mesh.vertex_count());
        for t in 0..mesh.tet_count() {
            let tet = mesh.tets[t];
            let geom = crate::elements::TetGeometry::new([
                mesh.vertices[tet[0]],
                mesh.vertices[tet[1]],
                mesh.vertices[tet[2]],
                mesh.vertices[tet[3]],
            ])?;
            let mut div_t = 0.0;
            for (i, &v) in tet.iter().enumerate() {
                for c in 0..3 {
                    div_t += field[v][c] * geom.grads[i][c];
                }
            }
            div_energy += geom.volume * div_t * div_t;
            for &v in &tet {
                rhs[v] += geom.volume / 4.0 * div_t;
            }
        }
        // L2 projection onto P1 (full vertex space)
        let diag = mass_full.diagonal();
        let (proj, _) = crate::eigensolve::pcg(
            &mass_full,
            &rhs,
            &|r| DVector::from_fn(r.len(), |i, _| r[i] / diag[i]),
            1e-12,
            1000,
        );
        let mut int_sum = 0.0;
        let mut int_n = 0usize;
        let mut bdy_sum = 0.0;
        let mut bdy_n = 0usize;
        for (v, &flag) in mesh.boundary_vertex_flags.iter().enumerate() {
            if flag {
                bdy_sum += proj[v] * proj[v];
                bdy_n += 1;
            } else {
                int_sum += proj[v] * proj[v];
                int_n += 1;
            }
        }
        let interior_rms = if int_n > 0 {
            (int_sum / int_n as f64).sqrt()
        } else {
            0.0
        };
        let boundary_rms = if bdy_n > 0 {
            (bdy_sum / bdy_n as f64).sqrt()
        } else {
            0.0
        };
        records.push(DivTraceRecord {
            eigen_index: idx,
            eigenvalue: pair.value,
            div_energy_fraction: div_energy / pair.value.max(1e-300),
            interior_rms,
            boundary_rms,
            trace_ratio: boundary_rms / interior_rms.max(1e-300),
        });
    }
    Ok(DivTraceReport {
        domain: format!("mesh with {} vertices", mesh.vertex_count()),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pi_cube_study(kmax: usize, levels: Vec<usize>) -> StudySpec {
        StudySpec::new(DomainSpec::cube(PI), kmax, levels)
    }

    #[test]
    fn richardson_recovers_quadratic_model() {
        // v(h) = 1 + 3 h^2 sampled at h = 1/4, 1/8, 1/16
        let values = [1.0 + 3.0 / 16.0, 1.0 + 3.0 / 64.0, 1.0 + 3.0 / 256.0];
        let fit = richardson(&values, 2.0);
        assert!((fit.extrapolated - 1.0).abs() < 1e-12);
        assert!((fit.rate.unwrap() - 2.0).abs() < 1e-10);
        assert!(fit.residual <= (values[2] - values[1]).abs());
    }

    #[test]
    fn richardson_rate_is_clamped() {
        // decaying much faster than h^4
        let values = [2.0, 1.0 + 1e-6, 1.0 + 1e-12];
        let fit = richardson(&values, 2.0);
        assert_eq!(fit.rate, Some(4.0));
    }

    #[test]
    fn richardson_non_monotone_falls_back() {
        let values = [1.1, 0.9, 1.05];
        let fit = richardson(&values, 2.0);
        assert_eq!(fit.rate, None);
        assert_eq!(fit.extrapolated, 1.05);
        assert!(fit.residual > 0.0);
    }

    #[test]
    fn richardson_stays_between_model_extensions() {
        // monotone decreasing: extrapolated below finest, within one gap
        let values = [3.2, 3.05, 3.0125];
        let fit = richardson(&values, 2.0);
        assert!(fit.extrapolated <= values[2]);
        assert!((fit.extrapolated - values[2]).abs() <= (values[2] - values[1]).abs());
    }

    #[test]
    fn oracle_interlace_study_kmax_50_is_fast_and_passes() {
        let t0 = std::time::Instant::now();
        let mut spec = pi_cube_study(50, vec![]);
        spec.oracle_only = true;
        let report = run_interlace_study(&spec).unwrap();
        assert!(report.overall_pass);
        assert_eq!(report.records.len(), 50);
        // strict margins on the cube
        assert!(report.records.iter().all(|r| r.margin >= 1.0));
        assert!(t0.elapsed().as_secs_f64() < 1.0, "oracle mode must be fast");
    }

    #[test]
    fn oracle_interlace_margins_match_enumeration() {
        let mut spec = pi_cube_study(3, vec![]);
        spec.oracle_only = true;
        let report = run_interlace_study(&spec).unwrap();
        let margins: Vec<f64> = report.records.iter().map(|r| r.margin).collect();
        assert_eq!(margins, vec![1.0, 3.0, 1.0]);
    }

    #[test]
    fn report_is_a_pure_function_of_inputs() {
        let mut spec = pi_cube_study(10, vec![]);
        spec.oracle_only = true;
        let a = crate::report::to_json_string(&run_interlace_study(&spec).unwrap()).unwrap();
        let b = crate::report::to_json_string(&run_interlace_study(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fem_interlace_study_tiny_mesh() {
        // levels {2,4}: barely resolves kmax=1 but exercises the full path
        let spec = pi_cube_study(1, vec![2, 4]);
        let report = run_interlace_study(&spec).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.provenance, "fem+richardson");
        assert!(
            report.records[0].margin > 0.0,
            "alpha_3 < lambda_1 already visible"
        );
        assert!(!report.to_markdown().is_empty());
        assert!(report.to_csv().lines().count() > 3);
    }

    #[test]
    fn union_check_oracle_counting_identity() {
        let mut spec = pi_cube_study(1, vec![]);
        spec.oracle_only = true;
        spec.nev = 6;
        let report = run_union_check(&spec, 0.02).unwrap();
        assert!(report.counting_exact);
        assert!(report.overall_pass);
        let expect = [2.0, 2.0, 2.0, 3.0, 3.0, 3.0];
        for (got, want) in report.oracle_union.iter().zip(expect) {
            assert_eq!(*got, want);
        }
    }

    #[test]
    fn union_check_fem_small() {
        let mut spec = pi_cube_study(1, vec![3, 6]);
        spec.nev = 3;
        let report = run_union_check(&spec, 0.10).unwrap();
        // first three tracks all converge to the Maxwell 2-cluster
        for t in &report.tracks {
            assert!((t.fem_extrapolated - 2.0).abs() < 0.2, "{t:?}");
        }
    }

    #[test]
    fn trial_subspace_equality_at_k_1() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let opts = SolveOptions {
            tol: 1e-11,
            ..SolveOptions::default()
        };
        let report = run_trial_subspace_check(&mesh, 1, &opts).unwrap();
        assert!(report.pass);
        assert!(
            (report.max_quotient - report.lambda_k).abs() <= 1e-10 * report.lambda_k,
            "quotient {} vs lambda_1 {}",
            report.max_quotient,
            report.lambda_k
        );
        // cross terms vanish for H01 components
        for row in &report.decomposition {
            assert!(row.cross_terms.abs() <= 1e-9 * row.grad_energy.max(1.0));
        }
    }

    #[test]
    fn trial_subspace_bound_at_k_2_and_3() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let opts = SolveOptions {
            tol: 1e-11,
            ..SolveOptions::default()
        };
        for k in [2, 3] {
            let report = run_trial_subspace_check(&mesh, k, &opts).unwrap();
            assert!(report.pass, "k={k}: {report:?}");
            assert_eq!(report.dimension, 3 * k);
        }
    }

    #[test]
    fn random_vector_spans_respect_the_lower_bound() {
        // sanity: any 3k-dim span has max quotient >= eta_1^h
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 3)).unwrap();
        let b = assemble(&mesh, OperatorKind::BForm, 1).unwrap();
        let (dense_vals, _) =
            dense_generalized_eigen(&b.stiffness.to_dense(), &b.mass.to_dense()).unwrap();
        let eta1 = dense_vals[0];
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = b.dofs.free_count;
        let span = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0f64));
        let a = span.transpose() * b.stiffness.to_dense() * &span;
        let g = span.transpose() * b.mass.to_dense() * &span;
        let (vals, _) = dense_generalized_eigen(&a, &g).unwrap();
        assert!(vals[vals.len() - 1] >= eta1 - 1e-10);
    }

    #[test]
    fn neumann_exploration_oracle() {
        let mut spec = pi_cube_study(20, vec![]);
        spec.oracle_only = true;
        let report = run_neumann_exploration(&spec).unwrap();
        assert!(report.exploratory);
        assert!(report.all_margins_positive);
        assert_eq!(report.records[0].mu_k_plus_3, 1.0); // mu_4 = 1
        assert_eq!(report.records[0].lambda_k, 3.0);
    }

    #[test]
    fn neumann_exploration_needs_enough_spectrum() {
        let mut spec = pi_cube_study(0, vec![]);
        spec.oracle_only = true;
        assert!(run_neumann_exploration(&spec).is_err());
    }

    #[test]
    fn neumann_as_alpha_is_a_negative_control() {
        // mu_1 = 0 makes the shifted comparison fail immediately
        let mu = box_spectrum(SpectrumFamily::Neumann, PI, PI, PI, 11).unwrap();
        let check = crate::oracle::interlace_check(&mu, &mu, 5, 0.0).unwrap();
        assert!(!check.all_pass);
        assert!(check.records[0].margin < 0.0);
    }

    #[test]
    fn div_trace_trends_under_refinement() {
        // gradient-type track: boundary/interior ratio shrinks;
        // Maxwell-type tracks: the interior divergence itself shrinks
        let mut gradient_ratios = Vec::new();
        let mut maxwell_rms = Vec::new();
        for n in [4usize, 8] {
            let mesh = build_box_mesh(&BoxSpec::cube(PI, n)).unwrap();
            let pencil = assemble(&mesh, OperatorKind::BForm, 1).unwrap();
            let opts = SolveOptions {
                tol: 1e-9,
                preconditioner: Preconditioner::IncompleteCholesky,
                ..SolveOptions::default()
            };
            let pairs = solve_lowest(&pencil.stiffness, &pencil.mass, 6, None, &opts).unwrap();
            let report = run_div_trace_diagnostic(&mesh, &pencil, &pairs).unwrap();
            let gradient = report
                .records
                .iter()
                .max_by(|x, y| x.div_energy_fraction.total_cmp(&y.div_energy_fraction))
                .unwrap();
            // The eta=3 cluster mixes gradient-type and Maxwell-type
            // eigenvectors (they share the eigenvalue), but mixing only
            // rescales the divergence field, so the trace ratio of the
            // most divergence-heavy record still tracks the gradient mode.
            assert!(gradient.div_energy_fraction > 0.3, "{gradient:?}");
            gradient_ratios.push(gradient.trace_ratio);
            // the first three tracks form the pure Maxwell 2-cluster
            let max_rms = report.records[..3]
                .iter()
                .map(|r| r.interior_rms)
                .fold(0.0f64, f64::max);
            maxwell_rms.push(max_rms);
        }
        assert!(
            gradient_ratios[1] < gradient_ratios[0],
            "gradient track ratio: {gradient_ratios:?}"
        );
        assert!(
            maxwell_rms[1] < maxwell_rms[0],
            "Maxwell track divergence rms: {maxwell_rms:?}"
        );
    }

    #[test]
    fn div_trace_classifies_tracks() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let pencil = assemble(&mesh, OperatorKind::BForm, 1).unwrap();
        let opts = SolveOptions {
            tol: 1e-9,
            preconditioner: Preconditioner::IncompleteCholesky,
            ..SolveOptions::default()
        };
        let pairs = solve_lowest(&pencil.stiffness, &pencil.mass, 4, None, &opts).unwrap();
        let report = run_div_trace_diagnostic(&mesh, &pencil, &pairs).unwrap();
        // lowest three tracks approximate the Maxwell 2-cluster:
        // divergence-free, so the div energy fraction is near zero
        for r in &report.records[..3] {
            assert!(r.div_energy_fraction < 0.2, "Maxwell-type track: {r:?}");
        }
        // a non-eigenvector control with unit divergence: u = (x, 0, 0).
        // Its projected divergence is near 1 everywhere, so the boundary
        // trace ratio stays O(1).
        let mut u = DVector::zeros(pencil.dofs.free_count);
        for (v, frame) in pencil.dofs.vertex_frames.iter().enumerate() {
            let target = [mesh.vertices[v][0], 0.0, 0.0];
            for (i, dir) in frame.directions.iter().enumerate() {
                u[frame.first_dof + i] =
                    target[0] * dir[0] + target[1] * dir[1] + target[2] * dir[2];
            }
        }
        let fake = [EigenPair {
            value: 1.0,
            vector: u,
            residual: 1.0,
            converged: false,
        }];
        let control = run_div_trace_diagnostic(&mesh, &pencil, &fake).unwrap();
        assert!(
            control.records[0].trace_ratio > 0.3,
            "{:?}",
            control.records[0]
        );
    }
}
