//! Symmetric generalized eigensolvers for the assembled pencils K x = eta M x.
//!
//! The primary algorithm is a block locally-optimal preconditioned iteration
//! (LOBPCG) for the lowest eigenpairs, with an optional exact kernel deflation
//! by M-orthogonal projection against a supplied basis. A shift-invert
//! Lanczos route and a dense pencil solver complete the toolbox.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::OperatorKind;
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, SymSparse};

/// Relative gap below which adjacent eigenvalues are reported as one cluster.
pub const CLUSTER_GAP: f64 = 1e-6;

/// Default residual tolerance: residual_i <= tol * (|eta_i| + 1).
pub const DEFAULT_TOL: f64 = 1e-8;

/// Outer iteration cap of the block iteration.
pub const MAX_OUTER_ITERATIONS: usize = 500;

/// Shift-invert filtering threshold: values below 1e-8 * max(1, sigma) count
/// as deflated zero modes and are dropped by callers that request it.
pub fn zero_threshold(sigma: f64) -> f64 {
    1e-8 * sigma.max(1.0)
}

/// One converged (or flagged) eigenpair; the vector is M-normalized.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
    /// Estimate of ||K x - eta M x|| in the M^-1 norm (diagonal estimate).
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioner selection for the block iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    /// Diagonal scaling of K + M; always available.
    #[default]
    Diagonal,
    /// Incomplete Cholesky (zero fill) of K + M.
    IncompleteCholesky,
}

/// Tuning knobs; the defaults follow the solver contract.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
    pub seed: u64,
    /// Print per-iteration convergence diagnostics to stderr.
    pub debug: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iterations: MAX_OUTER_ITERATIONS,
            preconditioner: Preconditioner::default(),
            seed: 0x5eed,
            debug: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Incomplete Cholesky and PCG
// ---------------------------------------------------------------------------

/// Zero-fill incomplete Cholesky factor of an SPD matrix, with diagonal
/// shifting on breakdown.
pub struct Ic0 {
    lower: Vec<Vec<(usize, f64)>>,
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl Ic0 {
    pub fn new(a: &SymSparse) -> Result<Ic0> {
        let n = a.dim();
        let base_diag = a.diagonal();
        if base_diag.iter().any(|&d| d <= 0.0) {
            return Err(Error::NotSpd("non-positive diagonal".into()));
        }
        let mut shift = 0.0f64;
        'retry: loop {
            let mut lower: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            let mut diag = vec![0.0f64; n];
            for i in 0..n {
                let (cols, vals) = a.csr().row(i);
                for (&j, &aij) in cols.iter().zip(vals) {
                    if j > i {
                        continue;
                    }
                    if j == i {
                        let mut s = aij * (1.0 + shift);
                        for &(_, lv) in &lower[i] {
                            s -= lv * lv;
                        }
                        if s <= 0.0 {
                            shift = if shift == 0.0 { 1e-3 } else { shift * 10.0 };
                            if shift > 1.0 {
                                return Err(Error::NotSpd("incomplete Cholesky breakdown".into()));
                            }
                            continue 'retry;
                        }
                        diag[i] = s.sqrt();
                    } else {
                        // L_ij = (a_ij - sum_k L_ik L_jk) / L_jj over shared k
                        let mut s = aij;
                        let (ri, rj) = (&lower[i], &lower[j]);
                        let (mut p, mut q) = (0, 0);
                        while p < ri.len() && q < rj.len() {
                            match ri[p].0.cmp(&rj[q].0) {
                                std::cmp::Ordering::Less => p += 1,
                                std::cmp::Ordering::Greater => q += 1,
                                std::cmp::Ordering::Equal => {
                                    s -= ri[p].1 * rj[q].1;
                                    p += 1;
                                    q += 1;
                                }
                            }
                        }
                        lower[i].push((j, s / diag[j]));
                    }
                }
            }
            let mut upper: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (i, row) in lower.iter().enumerate() {
                for &(j, v) in row {
                    upper[j].push((i, v));
                }
            }
            return Ok(Ic0 { lower, upper, diag });
        }
    }

    /// Solve (L L^T) x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.diag.len();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for &(j, v) in &self.lower[i] {
                s -= v * y[j];
            }
            y[i] = s / self.diag[i];
        }
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for &(j, v) in &self.upper[i] {
                s -= v * x[j];
            }
            x[i] = s / self.diag[i];
        }
        x
    }
}

/// Preconditioned conjugate gradients for an SPD system A x = b.
/// Returns (solution, iterations).
pub fn pcg(
    a: &SymSparse,
    b: &DVector<f64>,
    precond: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> (DVector<f64>, usize) {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..max_iter {
        if r.norm() <= rel_tol * b_norm {
            return (x, it);
        }
        let ap = a.mul_vec(&p);
        let denom = p.dot(&ap);
        if denom <= 0.0 {
            return (x, it);
        }
        let alpha = rz / denom;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz.max(f64::MIN_POSITIVE);
        rz = rz_new;
        p = &z + beta * p;
    }
    (x, max_iter)
}

// ---------------------------------------------------------------------------
// Kernel deflation
// ---------------------------------------------------------------------------

/// Exact kernel deflation data: a sparse basis Z of the kernel and the SPD
/// Gram matrix Z^T M Z with its incomplete factorization.
pub struct Deflation {
    pub basis: CsrMatrix,
    gram: SymSparse,
    gram_ic: Ic0,
}

impl Deflation {
    /// `gram` must equal Z^T M Z for the mass matrix the solve will use; for
    /// the gradient embedding this is exactly the P1 Dirichlet stiffness.
    pub fn new(basis: CsrMatrix, gram: SymSparse) -> Result<Deflation> {
        if gram.dim() != basis.ncols {
            return Err(Error::DimensionMismatch(format!(
                "gram {} vs basis columns {}",
                gram.dim(),
                basis.ncols
            )));
        }
        let gram_ic = Ic0::new(&gram)?;
        Ok(Deflation {
            basis,
            gram,
            gram_ic,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols
    }

    /// Remove the M-orthogonal projection onto range(Z) from every column:
    /// x <- x - Z (Z^T M Z)^-1 Z^T M x.
    pub fn project_columns(&self, m: &SymSparse, x: &mut DMatrix<f64>) {
        for j in 0..x.ncols() {
            let col = x.column(j).clone_owned();
            let mx = m.mul_vec(&col);
            let rhs = self.basis.mul_transpose_vec(&mx);
            let (q, _) = pcg(&self.gram, &rhs, &|r| self.gram_ic.solve(r), 1e-13, 2000);
            let zq = self.basis.mul_vec(&q);
            let mut col = x.column_mut(j);
            col -= zq;
        }
    }
}

/// Gradient deflation for the curl-curl pencil of a mesh: basis = gradient
/// embedding, Gram = P1 Dirichlet stiffness (the same integrals exactly).
pub fn gradient_deflation(mesh: &crate::mesh::TetMesh) -> Result<Deflation> {
    let g = crate::assembly::gradient_embedding(mesh)?;
    let lap = crate::assembly::assemble(mesh, OperatorKind::DirichletLaplacian, 1)?;
    Deflation::new(g.matrix, lap.stiffness)
}

// ---------------------------------------------------------------------------
// Block LOBPCG
// ---------------------------------------------------------------------------

/// M-orthonormalize the columns of `s` (SVQB style), dropping near-dependent
/// columns. Returns the kept column count. A clearly negative Gram
/// eigenvalue certifies that M is not positive definite.
fn m_orthonormalize(m: &SymSparse, s: &mut DMatrix<f64>) -> Result<usize> {
    if s.ncols() == 0 {
        return Ok(0);
    }
    let ms = m.mul_mat(s);
    let gram = s.transpose() * &ms;
    let sym = 0.5 * (&gram + gram.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min < -1e-10 * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSpd(format!(
            "mass Gram matrix has a negative eigenvalue {min:e}"
        )));
    }
    if max <= 0.0 {
        *s = DMatrix::zeros(s.nrows(), 0);
        return Ok(0);
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * max)
        .collect();
    let mut q = DMatrix::zeros(s.ncols(), keep.len());
    for (out, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        q.set_column(out, &(eig.eigenvectors.column(i) * scale));
    }
    let reduced = &*s * q;
    *s = reduced;
    Ok(s.ncols())
}

/// M-orthogonalize the columns of `w` against the M-orthonormal block `x`.
fn m_orthogonalize_against(m: &SymSparse, x: &DMatrix<f64>, w: &mut DMatrix<f64>) {
    if x.ncols() == 0 || w.ncols() == 0 {
        return;
    }
    let mw = m.mul_mat(w);
    let coeffs = x.transpose() * mw;
    *w -= x * coeffs;
}

fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(0.5 * (&a + a.transpose()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (out, &i) in order.iter().enumerate() {
        vectors.set_column(out, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Solve for the lowest `nev` eigenpairs of K x = eta M x.
///
/// K must be PSD and M SPD on the free dofs. If a deflation basis is given,
/// all returned vectors are M-orthogonal to its range and the iteration never
/// sees the deflated subspace. Non-convergence after the iteration cap
/// returns the partial result with unconverged pairs flagged.
pub fn solve_lowest(
    k: &SymSparse,
    m: &SymSparse,
    nev: usize,
    deflation: Option<&Deflation>,
    opts: &SolveOptions,
) -> Result<Vec<EigenPair>> {
    let n = k.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "K is {n}x{n}, M is {}x{}",
            m.dim(),
            m.dim()
        )));
    }
    let usable = n - deflation.map_or(0, |d| d.dim());
    if nev == 0 || nev > usable {
        return Err(Error::InsufficientSpectrum {
            needed: nev,
            available: usable,
        });
    }
    let m_diag = m.diagonal();
    if m_diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::NotSpd(
            "mass matrix has a non-positive diagonal".into(),
        ));
    }

    let precond: Box<dyn Fn(&DMatrix<f64>) -> DMatrix<f64>> = match opts.preconditioner {
        Preconditioner::Diagonal => {
            let d = k.diagonal() + &m_diag;
            Box::new(move |r: &DMatrix<f64>| {
                let mut out = r.clone();
                for j in 0..out.ncols() {
                    for i in 0..out.nrows() {
                        out[(i, j)] /= d[i];
                    }
                }
                out
            })
        }
        Preconditioner::IncompleteCholesky => {
            let ic = Ic0::new(&k.add_scaled(m, 1.0))?;
            Box::new(move |r: &DMatrix<f64>| {
                let mut out = DMatrix::zeros(r.nrows(), r.ncols());
                for j in 0..r.ncols() {
                    out.set_column(j, &ic.solve(&r.column(j).clone_owned()));
                }
                out
            })
        }
    };

    let bs = (nev + nev.min(10)).min(usable);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, bs, |_, _| rng.random_range(-1.0..1.0f64));
    if let Some(d) = deflation {
        d.project_columns(m, &mut x);
    }
    m_orthonormalize(m, &mut x)?;
    while x.ncols() < bs {
        // refill columns lost to projection or dependence
        let mut extra = DMatrix::from_fn(n, bs - x.ncols(), |_, _| rng.random_range(-1.0..1.0f64));
        if let Some(d) = deflation {
            d.project_columns(m, &mut extra);
        }
        m_orthogonalize_against(m, &x, &mut extra);
        if m_orthonormalize(m, &mut extra)? == 0 {
            break;
        }
        let cols: Vec<_> = x
            .column_iter()
            .chain(extra.column_iter())
            .map(|c| c.clone_owned())
            .collect();
        x = DMatrix::from_columns(&cols);
    }
    let bs = x.ncols();
    if bs < nev {
        return Err(Error::InsufficientSpectrum {
            needed: nev,
            available: bs,
        });
    }

    let mut p: Option<DMatrix<f64>> = None;
    let mut theta = vec![0.0f64; bs];
    let mut residuals = vec![f64::INFINITY; bs];

    for _iter in 0..opts.max_iterations {
        // Rayleigh-Ritz on the current X (X^T M X = I)
        let kx = k.mul_mat(&x);
        let a = x.transpose() * &kx;
        let (vals, rot) = sorted_eigen(a);
        x = &x * &rot;
        let kx = kx * &rot;
        let mx = m.mul_mat(&x);
        theta[..bs].copy_from_slice(&vals[..bs]);

        // residuals R = K X - M X Theta
        let mut r = kx.clone();
        for j in 0..bs {
            let mxj = mx.column(j);
            let mut rj = r.column_mut(j);
            rj.axpy(-theta[j], &mxj, 1.0);
        }
        for j in 0..bs {
            let rj = r.column(j);
            let mut acc = 0.0;
            for i in 0..n {
                acc += rj[i] * rj[i] / m_diag[i];
            }
            residuals[j] = acc.sqrt();
        }
        if opts.debug {
            eprintln!(
                "iter {_iter}: theta[0..4] = {:?} res[0..4] = {:?}",
                &theta[..4.min(bs)],
                &residuals[..4.min(bs)]
            );
        }
        let converged = (0..nev).all(|j| residuals[j] <= opts.tol * (theta[j].abs() + 1.0));
        if converged {
            break;
        }

        // preconditioned, deflated search directions
        let mut w = precond(&r);
        if let Some(d) = deflation {
            d.project_columns(m, &mut w);
        }
        m_orthogonalize_against(m, &x, &mut w);
        if let Some(pp) = &p {
            m_orthogonalize_against(m, pp, &mut w);
        }
        if m_orthonormalize(m, &mut w)? == 0 {
            break; // stagnation: no new directions
        }

        // trial basis S = [X W P]
        let mut cols: Vec<DVector<f64>> = x.column_iter().map(|c| c.clone_owned()).collect();
        cols.extend(w.column_iter().map(|c| c.clone_owned()));
        if let Some(pp) = &p {
            cols.extend(pp.column_iter().map(|c| c.clone_owned()));
        }
        let mut s = DMatrix::from_columns(&cols);
        let kept = m_orthonormalize(m, &mut s)?;
        if kept < bs {
            break;
        }
        let ks = k.mul_mat(&s);
        let a = s.transpose() * ks;
        let (_vals, vecs) = sorted_eigen(a);
        let c_low = vecs.columns(0, bs).clone_owned();
        let x_new = &s * &c_low;
        // new conjugate directions: the part of x_new outside the old X span
        let mut p_new = x_new.clone();
        m_orthogonalize_against(m, &x, &mut p_new);
        p = if m_orthonormalize(m, &mut p_new)? > 0 {
            Some(p_new)
        } else {
            None
        };
        x = x_new;
        if m_orthonormalize(m, &mut x)? < bs {
            break;
        }
    }

    // final polish: re-project, then one more Rayleigh-Ritz so the columns
    // are eigenvector approximations again (orthonormalization mixes them)
    if let Some(d) = deflation {
        d.project_columns(m, &mut x);
    }
    m_orthonormalize(m, &mut x)?;
    {
        let kx = k.mul_mat(&x);
        let a = x.transpose() * &kx;
        let (_vals, rot) = sorted_eigen(a);
        x = &x * &rot;
    }
    let kx = k.mul_mat(&x);
    let mx = m.mul_mat(&x);
    let mut pairs = Vec::with_capacity(nev);
    for j in 0..nev.min(x.ncols()) {
        let xj = x.column(j).clone_owned();
        let num = xj.dot(&kx.column(j).clone_owned());
        let den = xj.dot(&mx.column(j).clone_owned());
        let value = num / den;
        let mut res = kx.column(j).clone_owned();
        res.axpy(-value, &mx.column(j).clone_owned(), 1.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += res[i] * res[i] / m_diag[i];
        }
        let residual = acc.sqrt() / den.sqrt();
        pairs.push(EigenPair {
            value,
            vector: xj / den.sqrt(),
            residual,
            converged: residual <= opts.tol * (value.abs() + 1.0),
        });
    }
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Shift-invert Lanczos (dense factorization, desk scale)
// ---------------------------------------------------------------------------

/// Size cap for the dense factorization used by the shift-invert route.
pub const SHIFT_INVERT_DENSE_CAP: usize = 4000;

/// Compute the `nev` eigenvalues of K x = eta M x nearest `sigma` via
/// shift-invert Lanczos with full reorthogonalization in the M inner product.
/// The shifted matrix K - sigma M is factorized densely, which caps the
/// problem size; this is the desk-scale alternative to [`solve_lowest`].
pub fn solve_shift_invert(
    k: &SymSparse,
    m: &SymSparse,
    sigma: f64,
    nev: usize,
) -> Result<Vec<EigenPair>> {
    let n = k.dim();
    if n > SHIFT_INVERT_DENSE_CAP {
        return Err(Error::InvalidSpec(format!(
            "shift-invert factorizes densely; {n} dofs exceed the cap {SHIFT_INVERT_DENSE_CAP}"
        )));
    }
    if nev == 0 || nev > n {
        return Err(Error::InsufficientSpectrum {
            needed: nev,
            available: n,
        });
    }
    let shifted = k.add_scaled(m, -sigma).to_dense();
    let lu = shifted.lu();
    let solve = |b: &DVector<f64>| -> Result<DVector<f64>> {
        lu.solve(b).ok_or(Error::SingularShift {
            sigma,
            hint: sigma * (1.0 + 1e-4) + 1e-8,
        })
    };
    // singularity probe: a solve must reproduce its right-hand side
    {
        let probe = DVector::from_fn(n, |i, _| ((i % 7) as f64 - 3.0) / 3.0);
        let x = solve(&probe)?;
        let back = k.mul_vec(&x) - sigma * m.mul_vec(&x);
        if (back - &probe).norm() > 1e-6 * probe.norm() {
            return Err(Error::SingularShift {
                sigma,
                hint: sigma * (1.0 + 1e-4) + 1e-8,
            });
        }
    }

    let steps = (4 * nev + 20).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x51f7);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0f64));
    let nrm = v.dot(&m.mul_vec(&v)).sqrt();
    v /= nrm;

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::new();
    let mut v_prev: Option<DVector<f64>> = None;

    for j in 0..steps {
        basis.push(v.clone());
        // w = (K - sigma M)^-1 M v
        let w = solve(&m.mul_vec(&v))?;
        let mw = m.mul_vec(&w);
        let alpha = v.dot(&mw);
        alphas.push(alpha);
        let mut w = w - alpha * &v;
        if let Some(prev) = &v_prev {
            w -= betas[j - 1] * prev;
        }
        // full reorthogonalization in the M inner product
        for u in &basis {
            let c = u.dot(&m.mul_vec(&w));
            w -= c * u;
        }
        let beta = w.dot(&m.mul_vec(&w)).sqrt();
        if beta < 1e-13 {
            break;
        }
        betas.push(beta);
        v_prev = Some(v);
        v = w / beta;
    }

    let steps = alphas.len();
    let mut t = DMatrix::zeros(steps, steps);
    for i in 0..steps {
        t[(i, i)] = alphas[i];
        if i + 1 < steps {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let (thetas, vecs) = sorted_eigen(t);

    let m_diag = m.diagonal();
    let mut pairs: Vec<EigenPair> = Vec::new();
    for (idx, &th) in thetas.iter().enumerate() {
        if th.abs() < 1e-13 {
            continue;
        }
        let value = sigma + 1.0 / th;
        let mut y = DVector::zeros(n);
        for (bi, u) in basis.iter().enumerate() {
            y += vecs[(bi, idx)] * u;
        }
        let den = y.dot(&m.mul_vec(&y)).sqrt();
        if den < 1e-13 {
            continue;
        }
        y /= den;
        let mut res = k.mul_vec(&y);
        res.axpy(-value, &m.mul_vec(&y), 1.0);
        let mut acc = 0.0;
        for i in 0..n {
            acc += res[i] * res[i] / m_diag[i];
        }
        let residual = acc.sqrt();
        pairs.push(EigenPair {
            value,
            vector: y,
            residual,
            converged: residual <= DEFAULT_TOL * (value.abs() + 1.0) * 10.0,
        });
    }
    pairs.sort_by(|a, b| (a.value - sigma).abs().total_cmp(&(b.value - sigma).abs()));
    pairs.truncate(nev);
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Rayleigh quotient and the dense route
// ---------------------------------------------------------------------------

/// (x.Kx)/(x.Mx); errors on the zero vector.
pub fn rayleigh_quotient(k: &SymSparse, m: &SymSparse, x: &DVector<f64>) -> Result<f64> {
    if x.norm() == 0.0 {
        return Err(Error::InvalidSpec(
            "Rayleigh quotient of the zero vector".into(),
        ));
    }
    let num = x.dot(&k.mul_vec(x));
    let den = x.dot(&m.mul_vec(x));
    Ok(num / den)
}

/// Dense solve of the full symmetric pencil: all eigenvalues ascending with
/// M-orthonormal eigenvectors. The independent small-problem oracle, also
/// used for the small Gram pencils of the trial-subspace check.
pub fn dense_generalized_eigen(
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    if m.nrows() != n || k.ncols() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch("dense pencil".into()));
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotSpd("dense mass matrix".into()))?;
    let l = chol.l();
    let linv = l
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("singular Cholesky factor".into()))?;
    let a = &linv * k * linv.transpose();
    let (values, vecs) = sorted_eigen(a);
    // back-transform: x = L^-T y
    let x = linv.transpose() * vecs;
    Ok((values, x))
}

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

/// Ordered eigenvalue list with residuals, multiplicity clusters, and the
/// discretization descriptor it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub operator: String,
    pub h: f64,
    pub order: usize,
    pub dofs: usize,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    /// 0-based inclusive index ranges of multiplicity clusters.
    pub clusters: Vec<[usize; 2]>,
    /// Pairs the solver flagged as not fully converged, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
}

impl Spectrum {
    pub fn new(
        operator: String,
        h: f64,
        order: usize,
        dofs: usize,
        values: Vec<f64>,
        residuals: Vec<f64>,
        flagged: Vec<usize>,
    ) -> Spectrum {
        let clusters = cluster_indices(&values, CLUSTER_GAP);
        Spectrum {
            operator,
            h,
            order,
            dofs,
            values,
            residuals,
            clusters,
            flagged,
        }
    }

    pub fn from_pairs(
        operator: OperatorKind,
        h: f64,
        order: usize,
        dofs: usize,
        pairs: &[EigenPair],
    ) -> Spectrum {
        Spectrum::new(
            operator.to_string(),
            h,
            order,
            dofs,
            pairs.iter().map(|p| p.value).collect(),
            pairs.iter().map(|p| p.residual).collect(),
            pairs
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.converged)
                .map(|(i, _)| i)
                .collect(),
        )
    }
}

/// Group ascending values into clusters at the given relative gap.
pub fn cluster_indices(values: &[f64], rel_gap: f64) -> Vec<[usize; 2]> {
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = if i == values.len() {
            true
        } else {
            let scale = values[i].abs().max(values[i - 1].abs()).max(1.0);
            values[i] - values[i - 1] > rel_gap * scale
        };
        if split {
            if i > start {
                clusters.push([start, i - 1]);
            }
            start = i;
        }
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, OperatorKind};
    use crate::mesh::{build_box_mesh, BoxSpec};
    use std::f64::consts::PI;

    fn diag_pencil(kd: &[f64]) -> (SymSparse, SymSparse) {
        let n = kd.len();
        let k =
            SymSparse::from_triplets(n, kd.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
                .unwrap();
        let m = SymSparse::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect()).unwrap();
        (k, m)
    }

    #[test]
    fn lowest_of_a_diagonal_pencil() {
        let (k, m) = diag_pencil(&[3.0, 1.0, 2.0]);
        let pairs = solve_lowest(&k, &m, 2, None, &SolveOptions::default()).unwrap();
        assert!((pairs[0].value - 1.0).abs() < 1e-9);
        assert!((pairs[1].value - 2.0).abs() < 1e-9);
        assert!(pairs.iter().all(|p| p.converged));
    }

    #[test]
    fn dirichlet_p1_fundamental_mode_from_above() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 8)).unwrap();
        let p = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let pairs = solve_lowest(&p.stiffness, &p.mass, 1, None, &SolveOptions::default()).unwrap();
        let l1 = pairs[0].value;
        assert!((3.0..=3.2).contains(&l1), "lambda_1^h = {l1}");
    }

    #[test]
    fn curlcurl_with_gradient_deflation_finds_the_first_cluster() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 8)).unwrap();
        let p = assemble(&mesh, OperatorKind::CurlCurl, 1).unwrap();
        let defl = gradient_deflation(&mesh).unwrap();
        assert_eq!(defl.dim(), mesh.interior_vertex_count());
        let opts = SolveOptions {
            preconditioner: Preconditioner::IncompleteCholesky,
            ..SolveOptions::default()
        };
        let pairs = solve_lowest(&p.stiffness, &p.mass, 3, Some(&defl), &opts).unwrap();
        for pair in &pairs {
            assert!(
                (1.9..=2.2).contains(&pair.value),
                "alpha cluster value {}",
                pair.value
            );
        }
        // deflation exactness: far above the zero threshold
        assert!(pairs[0].value > 1e-6 * 2.0);
        // returned vectors are M-orthogonal to the gradient space
        let mx = p.mass.mul_vec(&pairs[0].vector);
        let overlap = defl.basis.mul_transpose_vec(&mx);
        assert!(
            overlap.abs().max() < 1e-8,
            "overlap {}",
            overlap.abs().max()
        );
    }

    #[test]
    fn pairwise_m_orthonormal() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 5)).unwrap();
        let p = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let pairs = solve_lowest(&p.stiffness, &p.mass, 4, None, &SolveOptions::default()).unwrap();
        for i in 0..pairs.len() {
            for j in 0..pairs.len() {
                let d = pairs[i].vector.dot(&p.mass.mul_vec(&pairs[j].vector));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-8, "({i},{j}): {d}");
            }
        }
    }

    #[test]
    fn dense_oracle_equivalence_small_meshes() {
        // iterative solver vs dense pencil solve, <= 300 free dofs
        for (op, spec) in [
            (OperatorKind::DirichletLaplacian, BoxSpec::cube(PI, 5)),
            (OperatorKind::NeumannLaplacian, BoxSpec::cube(PI, 3)),
            (OperatorKind::CurlCurl, BoxSpec::cube(PI, 3)),
            (OperatorKind::BForm, BoxSpec::cube(PI, 3)),
        ] {
            let mesh = build_box_mesh(&spec).unwrap();
            let p = assemble(&mesh, op, 1).unwrap();
            let n = p.dofs.free_count;
            assert!(n <= 300, "{op}: {n} dofs");
            let (dense_vals, _) =
                dense_generalized_eigen(&p.stiffness.to_dense(), &p.mass.to_dense()).unwrap();
            let (defl, skip);
            if op == OperatorKind::CurlCurl {
                defl = Some(gradient_deflation(&mesh).unwrap());
                skip = mesh.interior_vertex_count();
            } else {
                defl = None;
                skip = 0;
            }
            let nev = 10.min(n - skip);
            let opts = SolveOptions {
                tol: 1e-10,
                ..SolveOptions::default()
            };
            let pairs = solve_lowest(&p.stiffness, &p.mass, nev, defl.as_ref(), &opts).unwrap();
            for (i, pair) in pairs.iter().enumerate() {
                let reference = dense_vals[skip + i];
                assert!(
                    (pair.value - reference).abs() <= 1e-8 * reference.abs().max(1.0),
                    "{op} pair {i}: {} vs dense {reference}",
                    pair.value
                );
            }
        }
    }

    #[test]
    fn monotone_refinement_of_dirichlet_values() {
        // nested P1 spaces: lambda_k^h non-increasing under n -> 2n
        let coarse = build_box_mesh(&BoxSpec::cube(PI, 3)).unwrap();
        let fine = build_box_mesh(&BoxSpec::cube(PI, 6)).unwrap();
        let pc = assemble(&coarse, OperatorKind::DirichletLaplacian, 1).unwrap();
        let pf = assemble(&fine, OperatorKind::DirichletLaplacian, 1).unwrap();
        let opts = SolveOptions {
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let vc = solve_lowest(&pc.stiffness, &pc.mass, 5, None, &opts).unwrap();
        let vf = solve_lowest(&pf.stiffness, &pf.mass, 5, None, &opts).unwrap();
        for k in 0..5 {
            assert!(
                vf[k].value <= vc[k].value + 1e-8,
                "k={k}: fine {} vs coarse {}",
                vf[k].value,
                vc[k].value
            );
        }
    }

    #[test]
    fn min_max_upper_bound_for_random_subspaces() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let p = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let n = p.dofs.free_count;
        let (dense_vals, _) =
            dense_generalized_eigen(&p.stiffness.to_dense(), &p.mass.to_dense()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for d in 1..=5usize.min(n) {
            for _ in 0..5 {
                let span = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0f64));
                // max Rayleigh over the span = largest eigenvalue of the
                // restricted pencil
                let a = span.transpose() * p.stiffness.to_dense() * &span;
                let b = span.transpose() * p.mass.to_dense() * &span;
                let (vals, _) = dense_generalized_eigen(&a, &b).unwrap();
                let max_rq = vals[vals.len() - 1];
                assert!(
                    max_rq >= dense_vals[d - 1] - 1e-9 * dense_vals[d - 1].abs(),
                    "d={d}: {max_rq} vs eta_d {}",
                    dense_vals[d - 1]
                );
            }
        }
    }

    #[test]
    fn shift_invert_diagonal_case() {
        let (k, m) = diag_pencil(&[1.0, 2.0, 3.0]);
        let pairs = solve_shift_invert(&k, &m, 2.1, 1).unwrap();
        assert!((pairs[0].value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn shift_invert_at_an_eigenvalue_fails_with_hint() {
        let (k, m) = diag_pencil(&[1.0, 2.0, 3.0]);
        let r = solve_shift_invert(&k, &m, 2.0, 1);
        assert!(matches!(r, Err(Error::SingularShift { .. })));
    }

    #[test]
    fn shift_invert_curlcurl_skips_zero_modes() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let p = assemble(&mesh, OperatorKind::CurlCurl, 1).unwrap();
        let pairs = solve_shift_invert(&p.stiffness, &p.mass, 1.5, 3).unwrap();
        let thr = zero_threshold(1.5);
        for pair in &pairs {
            assert!(
                pair.value > thr,
                "no zero modes near sigma=1.5: {}",
                pair.value
            );
            assert!((1.5..4.0).contains(&pair.value), "value {}", pair.value);
        }
    }

    #[test]
    fn rayleigh_quotient_contract() {
        let (k, m) = diag_pencil(&[1.0, 2.0, 3.0]);
        let e0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!((rayleigh_quotient(&k, &m, &e0).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0f64));
            let q = rayleigh_quotient(&k, &m, &x).unwrap();
            assert!(q >= 1.0 - 1e-12, "min-max lower bound");
        }
        assert!(rayleigh_quotient(&k, &m, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn rayleigh_quotient_of_gradients_in_the_curl_pencil_is_zero() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let curl = assemble(&mesh, OperatorKind::CurlCurl, 1).unwrap();
        let lap = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let g = crate::assembly::gradient_embedding(&mesh).unwrap();
        let pairs =
            solve_lowest(&lap.stiffness, &lap.mass, 1, None, &SolveOptions::default()).unwrap();
        let ge = g.matrix.mul_vec(&pairs[0].vector);
        let q = rayleigh_quotient(&curl.stiffness, &curl.mass, &ge).unwrap();
        assert!(q.abs() <= 1e-10 * pairs[0].value, "quotient {q}");
    }

    #[test]
    fn ic0_solves_improve_conditioning() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 4)).unwrap();
        let p = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let ic = Ic0::new(&p.stiffness).unwrap();
        let b = DVector::from_element(p.dofs.free_count, 1.0);
        let (x, iters) = pcg(&p.stiffness, &b, &|r| ic.solve(r), 1e-12, 500);
        assert!(
            iters < 60,
            "IC(0)-PCG should converge quickly, took {iters}"
        );
        let r = p.stiffness.mul_vec(&x) - &b;
        assert!(r.norm() <= 1e-11 * b.norm());
    }

    #[test]
    fn cluster_grouping() {
        let values = vec![2.0, 2.0 + 1e-9, 2.0 + 2e-9, 3.0, 5.0, 5.0];
        let clusters = cluster_indices(&values, CLUSTER_GAP);
        assert_eq!(clusters, vec![[0, 2], [3, 3], [4, 5]]);
    }

    #[test]
    fn spectrum_serialization_schema() {
        let s = Spectrum::new(
            "dirichlet".into(),
            0.5,
            1,
            100,
            vec![3.0, 6.0],
            vec![1e-9, 1e-9],
            vec![],
        );
        let text = crate::report::to_json_string(&s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["operator"] == "dirichlet");
        assert!(v["values"].as_array().unwrap().len() == 2);
        assert!(v["clusters"].as_array().unwrap().len() == 2);
        let back: Spectrum = serde_json::from_str(&text).unwrap();
        assert_eq!(back.values, s.values);
    }

    #[test]
    fn indefinite_mass_is_a_hard_error() {
        let k = SymSparse::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let m =
            SymSparse::from_triplets(2, vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 4.0), (1, 0, 4.0)])
                .unwrap();
        let r = solve_lowest(&k, &m, 1, None, &SolveOptions::default());
        assert!(matches!(r, Err(Error::NotSpd(_))));
    }

    #[test]
    fn p2_dirichlet_is_much_closer_than_p1() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 3)).unwrap();
        let p1 = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let p2 = assemble(&mesh, OperatorKind::DirichletLaplacian, 2).unwrap();
        let opts = SolveOptions {
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let v1 = solve_lowest(&p1.stiffness, &p1.mass, 1, None, &opts).unwrap()[0].value;
        let v2 = solve_lowest(&p2.stiffness, &p2.mass, 1, None, &opts).unwrap()[0].value;
        assert!(v2 >= 3.0 - 1e-9, "conforming upper bound");
        assert!(
            (v2 - 3.0) < 0.05 * (v1 - 3.0),
            "P1 err {} vs P2 err {}",
            v1 - 3.0,
            v2 - 3.0
        );
    }

    #[test]
    fn nonconvergence_is_flagged_not_hidden() {
        let mesh = build_box_mesh(&BoxSpec::cube(PI, 5)).unwrap();
        let p = assemble(&mesh, OperatorKind::DirichletLaplacian, 1).unwrap();
        let opts = SolveOptions {
            tol: 1e-14,
            max_iterations: 2,
            ..SolveOptions::default()
        };
        let pairs = solve_lowest(&p.stiffness, &p.mass, 3, None, &opts).unwrap();
        assert!(pairs.iter().any(|p| !p.converged));
    }
}
