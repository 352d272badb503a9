//! Command-line front end: mesh generation/import, spectrum solves, oracle
//! enumerations, and the verification studies, with reproducible outputs.
//!
//! Exit codes: 0 success (all gated checks pass), 1 a gated verification
//! check failed, 2 invalid input or execution error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use curlspec::assembly::{assemble, OperatorKind};
use curlspec::eigensolve::{
    gradient_deflation, solve_lowest, solve_shift_invert, zero_threshold, Preconditioner,
    SolveOptions, Spectrum,
};
use curlspec::mesh::{build_box_mesh, read_gmsh, BoxSpec, TetMesh};
use curlspec::oracle::{box_spectrum, interlace_check, SpectrumFamily};
use curlspec::report::write_json_file;
use curlspec::verify::{
    run_div_trace_diagnostic, run_interlace_study, run_neumann_exploration,
    run_trial_subspace_check, run_union_check, DomainSpec, StudySpec,
};

/// Parse a length that may be the literal "pi" (or "2pi", "pi/2", ...).
fn parse_length(s: &str) -> Result<f64, String> {
    let t = s.trim().to_ascii_lowercase();
    let pi = std::f64::consts::PI;
    if t == "pi" {
        return Ok(pi);
    }
    if let Some(mult) = t.strip_suffix("pi") {
        if let Ok(m) = mult.parse::<f64>() {
            return Ok(m * pi);
        }
    }
    if let Some(div) = t.strip_prefix("pi/") {
        if let Ok(d) = div.parse::<f64>() {
            return Ok(pi / d);
        }
    }
    t.parse::<f64>().map_err(|e| e.to_string())
}

/// "pi" -> pi cube; "a,b,c" -> box sides (each side accepts pi tokens).
fn parse_box(s: &str) -> Result<Boxed, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.len() {
        1 => {
            let side = parse_length(parts[0])?;
            Ok(Boxed([side; 3]))
        }
        3 => Ok(Boxed([
            parse_length(parts[0])?,
            parse_length(parts[1])?,
            parse_length(parts[2])?,
        ])),
        _ => Err("expected one side or a,b,c".into()),
    }
}

/// Box sides as a clap-friendly newtype.
#[derive(Debug, Clone, Copy, Serialize)]
struct Boxed([f64; 3]);

fn parse_levels(s: &str) -> Result<Levels, String> {
    let levels: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse::<usize>()).collect();
    let levels = levels.map_err(|e| e.to_string())?;
    if levels.is_empty() || levels.contains(&0) {
        return Err("levels must be positive".into());
    }
    Ok(Levels(levels))
}

#[derive(Debug, Clone, Serialize)]
struct Levels(Vec<usize>);

#[derive(Parser, Serialize)]
#[command(
    name = "curlspec",
    version,
    about = "Spectral laboratory for curl-curl vs Laplacian eigenvalue interlacing on tetrahedral meshes"
)]
struct Cli {
    /// Worker thread cap (falls back to CURLSPEC_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized solver starts.
    #[arg(long, global = true, default_value_t = 0x5eed)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Build or import a tetrahedral mesh and write it as JSON.
    #[command(subcommand)]
    Mesh(MeshCmd),
    /// Solve one operator's lowest eigenvalues on a mesh.
    Solve(SolveArgs),
    /// Enumerate a closed-form box spectrum.
    Oracle(OracleArgs),
    /// Run a verification study.
    #[command(subcommand)]
    Verify(VerifyCmd),
}

#[derive(Subcommand, Serialize)]
enum MeshCmd {
    /// Kuhn-triangulated box mesh.
    Box(MeshBoxArgs),
    /// Import a Gmsh MSH (ASCII 2.2/4.1) file.
    Import(MeshImportArgs),
}

#[derive(Args, Serialize)]
struct MeshBoxArgs {
    /// Side length a ("pi" accepted).
    #[arg(long, value_parser = parse_length, default_value = "pi")]
    a: f64,
    /// Side length b (defaults to a).
    #[arg(long, value_parser = parse_length)]
    b: Option<f64>,
    /// Side length c (defaults to a).
    #[arg(long, value_parser = parse_length)]
    c: Option<f64>,
    /// Subdivisions per axis (shorthand for equal nx/ny/nz).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    nz: Option<usize>,
    /// Output mesh JSON path.
    #[arg(long, default_value = "mesh.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MeshImportArgs {
    /// Gmsh .msh file.
    input: PathBuf,
    #[arg(long, default_value = "mesh.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SolveArgs {
    /// dirichlet | neumann | curlcurl | bform
    #[arg(long)]
    op: String,
    /// Mesh JSON file.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value_t = 6)]
    nev: usize,
    /// Element order for the scalar Laplacians (1 or 2).
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Residual tolerance of the iterative solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Use shift-invert Lanczos around this shift instead of the block
    /// iteration; curl-curl zero modes below threshold are filtered.
    #[arg(long)]
    sigma: Option<f64>,
    /// Write the assembled pencil in Matrix Market format into this directory.
    #[arg(long)]
    dump_matrices: Option<PathBuf>,
    #[arg(long, default_value = "spectrum.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    /// dirichlet | neumann | maxwell | bform
    #[arg(long)]
    family: String,
    /// Box: "pi" or "a,b,c" (pi tokens accepted).
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value = "oracle.json")]
    out: PathBuf,
}

#[derive(Subcommand, Serialize)]
enum VerifyCmd {
    /// The interlacing inequality on extrapolated spectra (or on oracles).
    Interlace(InterlaceArgs),
    /// The div-curl spectrum against the merged Dirichlet+Maxwell oracle.
    Union(UnionArgs),
    /// The 3k-dimensional trial-subspace Rayleigh bound.
    TrialSubspace(TrialArgs),
    /// Exploratory mu_{k+3} <= lambda_k table (never gated).
    Neumann(NeumannArgs),
    /// Divergence boundary-trace diagnostic of div-curl eigenvectors.
    Divtrace(DivtraceArgs),
}

#[derive(Args, Serialize)]
struct InterlaceArgs {
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    #[arg(long, default_value_t = 3)]
    kmax: usize,
    /// Box subdivisions per refinement level, coarsest first.
    #[arg(long, value_parser = parse_levels, default_value = "4,8,16")]
    levels: Levels,
    /// Verify on enumerated oracle spectra only (no FEM).
    #[arg(long)]
    oracle_only: bool,
    /// Scalar element order for the Dirichlet side.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Negative control: compare the Neumann spectrum against itself as
    /// (alpha, lambda); reports violations and exits 1.
    #[arg(long)]
    control_neumann_as_alpha: bool,
    /// Report directory (markdown + json + csv).
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct UnionArgs {
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    #[arg(long, default_value_t = 6)]
    nev: usize,
    #[arg(long, value_parser = parse_levels, default_value = "4,8,16")]
    levels: Levels,
    #[arg(long)]
    oracle_only: bool,
    /// Relative per-track tolerance against the oracle union.
    #[arg(long, default_value_t = 0.02)]
    track_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct TrialArgs {
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    /// Box subdivisions of the single mesh used.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    kmax: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct NeumannArgs {
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    #[arg(long, default_value_t = 20)]
    kmax: usize,
    #[arg(long, value_parser = parse_levels, default_value = "8")]
    levels: Levels,
    /// Use enumerated spectra (default); pass --oracle-only=false for FEM.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    oracle_only: bool,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct DivtraceArgs {
    #[arg(long, value_parser = parse_box, default_value = "pi")]
    r#box: Boxed,
    #[arg(long, default_value_t = 6)]
    nev: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

/// Wrapper so list payloads serialize as a flattenable map.
#[derive(Serialize)]
struct ChecksPayload<T: Serialize> {
    checks: Vec<T>,
}

/// Everything an output file needs to reproduce the run.
#[derive(Serialize)]
struct RunConfig {
    argv: Vec<String>,
    seed: u64,
    threads: Option<usize>,
    /// SHA-256 of input file bytes, when the run consumed a file.
    input_sha256: Option<String>,
}

fn hash_file(path: &Path) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Some(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct Output<T: Serialize> {
    config: RunConfig,
    #[serde(flatten)]
    payload: T,
}

fn write_output<T: Serialize>(path: &Path, config: RunConfig, payload: T) -> curlspec::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_json_file(path, &Output { config, payload })
}

fn load_mesh(path: &Path) -> curlspec::Result<TetMesh> {
    let text = std::fs::read_to_string(path)?;
    TetMesh::read_json(&text)
}

fn print_mesh_summary(mesh: &TetMesh) {
    println!(
        "vertices {}  edges {}  faces {}  tets {}  boundary: faces {} vertices {} edges {}  h_max {:.6}",
        mesh.vertex_count(),
        mesh.edge_count(),
        mesh.face_count(),
        mesh.tet_count(),
        mesh.boundary_faces.len(),
        mesh.boundary_vertex_flags.iter().filter(|f| **f).count(),
        mesh.boundary_edge_flags.iter().filter(|f| **f).count(),
        mesh.h_max(),
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads.or_else(|| {
        std::env::var("CURLSPEC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    }) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> curlspec::Result<ExitCode> {
    let config = |input_hash: Option<String>| RunConfig {
        argv: std::env::args().collect(),
        seed: cli.seed,
        threads: cli.threads,
        input_sha256: input_hash,
    };
    let solve_opts = |tol: f64| SolveOptions {
        tol,
        preconditioner: Preconditioner::IncompleteCholesky,
        seed: cli.seed,
        ..SolveOptions::default()
    };

    match &cli.command {
        Command::Mesh(MeshCmd::Box(args)) => {
            let nx = args.nx.or(args.n).unwrap_or(4);
            let ny = args.ny.or(args.n).unwrap_or(nx);
            let nz = args.nz.or(args.n).unwrap_or(nx);
            let spec = BoxSpec::new(
                args.a,
                args.b.unwrap_or(args.a),
                args.c.unwrap_or(args.a),
                nx,
                ny,
                nz,
            );
            let mesh = build_box_mesh(&spec)?;
            write_output(&args.out, config(None), mesh.to_json_value())?;
            print_mesh_summary(&mesh);
            println!("wrote {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Mesh(MeshCmd::Import(args)) => {
            let mesh = read_gmsh(&args.input)?;
            write_output(
                &args.out,
                config(hash_file(&args.input)),
                mesh.to_json_value(),
            )?;
            print_mesh_summary(&mesh);
            println!("validated and wrote {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(args) => {
            let op = OperatorKind::parse(&args.op)?;
            let mesh = load_mesh(&args.mesh)?;
            let pencil = assemble(&mesh, op, args.order)?;
            if let Some(dir) = &args.dump_matrices {
                std::fs::create_dir_all(dir)?;
                let mut kf = std::fs::File::create(dir.join("stiffness.mtx"))?;
                pencil
                    .stiffness
                    .write_matrix_market(&mut kf, &format!("{op} stiffness"))?;
                let mut mf = std::fs::File::create(dir.join("mass.mtx"))?;
                pencil
                    .mass
                    .write_matrix_market(&mut mf, &format!("{op} mass"))?;
            }
            let pairs = if let Some(sigma) = args.sigma {
                let mut pairs =
                    solve_shift_invert(&pencil.stiffness, &pencil.mass, sigma, args.nev)?;
                if op == OperatorKind::CurlCurl {
                    let thr = zero_threshold(sigma);
                    pairs.retain(|p| p.value > thr);
                }
                pairs
            } else {
                let deflation = if op == OperatorKind::CurlCurl {
                    Some(gradient_deflation(&mesh)?)
                } else {
                    None
                };
                solve_lowest(
                    &pencil.stiffness,
                    &pencil.mass,
                    args.nev,
                    deflation.as_ref(),
                    &solve_opts(args.tol),
                )?
            };
            let spectrum =
                Spectrum::from_pairs(op, mesh.h_max(), args.order, pencil.dofs.free_count, &pairs);
            for (i, v) in spectrum.values.iter().enumerate() {
                let flag = if spectrum.flagged.contains(&i) {
                    "  [unconverged]"
                } else {
                    ""
                };
                println!("eta_{} = {v:.12}{flag}", i + 1);
            }
            write_output(&args.out, config(hash_file(&args.mesh)), &spectrum)?;
            println!("wrote {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle(args) => {
            let family = SpectrumFamily::parse(&args.family)?;
            let Boxed([a, b, c]) = args.r#box;
            let values = box_spectrum(family, a, b, c, args.count)?;
            let spectrum = Spectrum::new(
                format!("oracle:{}", family.as_str()),
                0.0,
                0,
                0,
                values,
                vec![0.0; args.count],
                vec![],
            );
            for (i, v) in spectrum.values.iter().enumerate() {
                println!("value_{} = {v:.12}", i + 1);
            }
            write_output(&args.out, config(None), &spectrum)?;
            println!("wrote {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(VerifyCmd::Interlace(args)) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let Boxed([a, b, c]) = args.r#box;
            if args.control_neumann_as_alpha {
                let mu = box_spectrum(SpectrumFamily::Neumann, a, b, c, 2 * args.kmax + 1)?;
                let check = interlace_check(&mu, &mu, args.kmax, 0.0)?;
                for r in &check.records {
                    println!(
                        "k={} alpha_(2k+1)={:.6} lambda_k={:.6} margin={:.6} {}",
                        r.k,
                        r.alpha_2k1,
                        r.lambda_k,
                        r.margin,
                        if r.pass { "pass" } else { "VIOLATION" }
                    );
                }
                write_output(
                    &args.out_dir.join("interlace_control.json"),
                    config(None),
                    &check,
                )?;
                return Ok(if check.all_pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                });
            }
            let mut spec = StudySpec::new(
                DomainSpec::Box { a, b, c },
                args.kmax,
                args.levels.0.clone(),
            );
            spec.oracle_only = args.oracle_only;
            spec.order = args.order;
            spec.solver_tol = args.tol;
            spec.seed = cli.seed;
            let report = run_interlace_study(&spec)?;
            println!("{}", report.to_markdown());
            write_output(&args.out_dir.join("interlace.json"), config(None), &report)?;
            std::fs::write(args.out_dir.join("interlace.md"), report.to_markdown())?;
            std::fs::write(args.out_dir.join("interlace_spectra.csv"), report.to_csv())?;
            Ok(if report.overall_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Verify(VerifyCmd::Union(args)) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let Boxed([a, b, c]) = args.r#box;
            let mut spec = StudySpec::new(DomainSpec::Box { a, b, c }, 1, args.levels.0.clone());
            spec.nev = args.nev;
            spec.oracle_only = args.oracle_only;
            spec.solver_tol = args.tol;
            spec.seed = cli.seed;
            let report = run_union_check(&spec, args.track_tol)?;
            println!(
                "counting identity at V={:.3}: union {} = parts {} ({})",
                report.counting_ceiling,
                report.counting_union,
                report.counting_parts,
                if report.counting_exact {
                    "exact"
                } else {
                    "MISMATCH"
                }
            );
            for t in &report.tracks {
                println!(
                    "track {}: oracle {:.6} fem {:.6} dev {:.2e} tol {:.2e} {}",
                    t.index + 1,
                    t.oracle_value,
                    t.fem_extrapolated,
                    t.deviation,
                    t.tol,
                    if t.pass { "pass" } else { "FAIL" }
                );
            }
            write_output(&args.out_dir.join("union.json"), config(None), &report)?;
            Ok(if report.overall_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Verify(VerifyCmd::TrialSubspace(args)) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let Boxed([a, b, c]) = args.r#box;
            let mesh = build_box_mesh(&BoxSpec::new(a, b, c, args.n, args.n, args.n))?;
            let mut all_pass = true;
            let mut reports = Vec::new();
            for k in 1..=args.kmax {
                let report = run_trial_subspace_check(&mesh, k, &solve_opts(args.tol))?;
                println!(
                    "k={k}: dim {} max quotient {:.12} lambda_k {:.12} ratio {:.12} {}",
                    report.dimension,
                    report.max_quotient,
                    report.lambda_k,
                    report.ratio,
                    if report.pass { "pass" } else { "FAIL" }
                );
                all_pass &= report.pass;
                reports.push(report);
            }
            write_output(
                &args.out_dir.join("trial_subspace.json"),
                config(None),
                ChecksPayload { checks: reports },
            )?;
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Verify(VerifyCmd::Neumann(args)) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let Boxed([a, b, c]) = args.r#box;
            let mut spec = StudySpec::new(
                DomainSpec::Box { a, b, c },
                args.kmax,
                args.levels.0.clone(),
            );
            spec.oracle_only = args.oracle_only;
            spec.seed = cli.seed;
            let report = run_neumann_exploration(&spec)?;
            println!("exploratory mu_(k+3) <= lambda_k [{}]", report.provenance);
            for r in &report.records {
                println!(
                    "k={}: mu_(k+3)={:.6} lambda_k={:.6} margin={:.6}",
                    r.k, r.mu_k_plus_3, r.lambda_k, r.margin
                );
            }
            println!(
                "conjecture status: {}",
                if report.all_margins_positive {
                    "consistent (all margins positive)"
                } else {
                    "margin violation observed"
                }
            );
            write_output(&args.out_dir.join("neumann.json"), config(None), &report)?;
            // exploratory: reported, never gated
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(VerifyCmd::Divtrace(args)) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let Boxed([a, b, c]) = args.r#box;
            let mesh = build_box_mesh(&BoxSpec::new(a, b, c, args.n, args.n, args.n))?;
            let pencil = assemble(&mesh, OperatorKind::BForm, 1)?;
            let pairs = solve_lowest(
                &pencil.stiffness,
                &pencil.mass,
                args.nev,
                None,
                &solve_opts(args.tol),
            )?;
            let report = run_div_trace_diagnostic(&mesh, &pencil, &pairs)?;
            for r in &report.records {
                println!(
                    "eta_{} = {:.6}: div share {:.3}, interior rms {:.3e}, boundary rms {:.3e}, ratio {:.3e}",
                    r.eigen_index + 1,
                    r.eigenvalue,
                    r.div_energy_fraction,
                    r.interior_rms,
                    r.boundary_rms,
                    r.trace_ratio
                );
            }
            write_output(&args.out_dir.join("divtrace.json"), config(None), &report)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
