//! Python bindings: meshes, spectrum solves, box oracles, and the
//! interlacing check, as a thin layer over the core crate.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use curlspec::assembly::{assemble, OperatorKind};
use curlspec::eigensolve::{
    gradient_deflation, solve_lowest, solve_shift_invert, zero_threshold, Preconditioner,
    SolveOptions,
};
use curlspec::mesh::{build_box_mesh, BoxSpec};
use curlspec::oracle;
use curlspec::verify;

fn err(e: curlspec::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Conforming tetrahedral mesh of a polyhedral domain.
#[pyclass(name = "TetMesh")]
struct PyTetMesh {
    inner: curlspec::TetMesh,
}

#[pymethods]
impl PyTetMesh {
    /// Kuhn-triangulated box (0,a)x(0,b)x(0,c) with nx/ny/nz cells per axis.
    #[staticmethod]
    #[pyo3(signature = (a, b, c, nx, ny, nz))]
    fn cuboid(a: f64, b: f64, c: f64, nx: usize, ny: usize, nz: usize) -> PyResult<Self> {
        let inner = build_box_mesh(&BoxSpec::new(a, b, c, nx, ny, nz)).map_err(err)?;
        Ok(PyTetMesh { inner })
    }

    /// Equal-side cube with n cells per axis.
    #[staticmethod]
    fn cube(side: f64, n: usize) -> PyResult<Self> {
        Self::cuboid(side, side, side, n, n, n)
    }

    /// Parse the mesh JSON schema.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = curlspec::TetMesh::read_json(text).map_err(err)?;
        Ok(PyTetMesh { inner })
    }

    /// Read a Gmsh MSH ASCII 2.2/4.1 file.
    #[staticmethod]
    fn from_gmsh(path: &str) -> PyResult<Self> {
        let inner = curlspec::read_gmsh(path).map_err(err)?;
        Ok(PyTetMesh { inner })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    #[getter]
    fn tet_count(&self) -> usize {
        self.inner.tet_count()
    }

    #[getter]
    fn interior_vertex_count(&self) -> usize {
        self.inner.interior_vertex_count()
    }

    #[getter]
    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    #[getter]
    fn h_max(&self) -> f64 {
        self.inner.h_max()
    }

    #[getter]
    fn is_convex(&self) -> bool {
        self.inner.is_convex()
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_json(&mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }

    fn __repr__(&self) -> String {
        format!(
            "TetMesh(vertices={}, edges={}, tets={}, h_max={:.6})",
            self.inner.vertex_count(),
            self.inner.edge_count(),
            self.inner.tet_count(),
            self.inner.h_max()
        )
    }
}

/// Ordered eigenvalues with residuals and multiplicity clusters.
#[pyclass(name = "Spectrum")]
struct PySpectrum {
    #[pyo3(get)]
    operator: String,
    #[pyo3(get)]
    values: Vec<f64>,
    #[pyo3(get)]
    residuals: Vec<f64>,
    #[pyo3(get)]
    clusters: Vec<(usize, usize)>,
    #[pyo3(get)]
    dofs: usize,
    #[pyo3(get)]
    h: f64,
    #[pyo3(get)]
    flagged: Vec<usize>,
}

#[pymethods]
impl PySpectrum {
    fn __repr__(&self) -> String {
        format!(
            "Spectrum(operator='{}', values={:?})",
            self.operator, self.values
        )
    }
}

/// Solve the lowest eigenvalues of one operator on a mesh.
///
/// op: "dirichlet" | "neumann" | "curlcurl" | "bform". The curl-curl pencil
/// is deflated by its exact gradient kernel. Passing a shift switches to
/// shift-invert Lanczos around it (curl-curl zero modes filtered).
#[pyfunction]
#[pyo3(signature = (mesh, op, nev, order = 1, tol = 1e-8, shift = None, seed = 0x5eed))]
fn solve(
    mesh: &PyTetMesh,
    op: &str,
    nev: usize,
    order: usize,
    tol: f64,
    shift: Option<f64>,
    seed: u64,
) -> PyResult<PySpectrum> {
    let op = OperatorKind::parse(op).map_err(err)?;
    let pencil = assemble(&mesh.inner, op, order).map_err(err)?;
    let pairs = if let Some(sigma) = shift {
        let mut pairs =
            solve_shift_invert(&pencil.stiffness, &pencil.mass, sigma, nev).map_err(err)?;
        if op == OperatorKind::CurlCurl {
            let thr = zero_threshold(sigma);
            pairs.retain(|p| p.value > thr);
        }
        pairs
    } else {
        let deflation = if op == OperatorKind::CurlCurl {
            Some(gradient_deflation(&mesh.inner).map_err(err)?)
        } else {
            None
        };
        let opts = SolveOptions {
            tol,
            preconditioner: Preconditioner::IncompleteCholesky,
            seed,
            ..SolveOptions::default()
        };
        solve_lowest(
            &pencil.stiffness,
            &pencil.mass,
            nev,
            deflation.as_ref(),
            &opts,
        )
        .map_err(err)?
    };
    let s = curlspec::eigensolve::Spectrum::from_pairs(
        op,
        mesh.inner.h_max(),
        order,
        pencil.dofs.free_count,
        &pairs,
    );
    Ok(PySpectrum {
        operator: s.operator,
        values: s.values,
        residuals: s.residuals,
        clusters: s.clusters.iter().map(|c| (c[0], c[1])).collect(),
        dofs: s.dofs,
        h: s.h,
        flagged: s.flagged,
    })
}

/// First `count` closed-form eigenvalues of a box.
/// family: "dirichlet" | "neumann" | "maxwell" | "bform" (the union).
#[pyfunction]
fn box_spectrum(family: &str, a: f64, b: f64, c: f64, count: usize) -> PyResult<Vec<f64>> {
    let family = oracle::SpectrumFamily::parse(family).map_err(err)?;
    oracle::box_spectrum(family, a, b, c, count).map_err(err)
}

/// Exact integer spectrum l^2 + m^2 + n^2 of the (0,pi)^3 cube.
#[pyfunction]
fn cube_spectrum_exact(family: &str, count: usize) -> PyResult<Vec<u64>> {
    let family = oracle::SpectrumFamily::parse(family).map_err(err)?;
    oracle::cube_spectrum_exact(family, count).map_err(err)
}

/// One row of the interlacing table.
#[pyclass(name = "InterlaceRecord", skip_from_py_object)]
#[derive(Clone)]
struct PyInterlaceRecord {
    #[pyo3(get)]
    k: usize,
    #[pyo3(get)]
    alpha_2k1: f64,
    #[pyo3(get)]
    lambda_k: f64,
    #[pyo3(get)]
    margin: f64,
    #[pyo3(get)]
    pass_: bool,
}

/// Check alpha_{2k+1} <= lambda_k for k = 1..=kmax.
/// Returns (all_pass, records).
#[pyfunction]
#[pyo3(signature = (alpha, lambda, kmax, tol = 0.0))]
fn interlace_check(
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    kmax: usize,
    tol: f64,
) -> PyResult<(bool, Vec<PyInterlaceRecord>)> {
    let check = oracle::interlace_check(&alpha, &lambda, kmax, tol).map_err(err)?;
    let records = check
        .records
        .iter()
        .map(|r| PyInterlaceRecord {
            k: r.k,
            alpha_2k1: r.alpha_2k1,
            lambda_k: r.lambda_k,
            margin: r.margin,
            pass_: r.pass,
        })
        .collect();
    Ok((check.all_pass, records))
}

/// Trial-subspace Rayleigh bound on one mesh: the first k Dirichlet
/// eigenfunctions placed in each vector component span a 3k-dim subspace of
/// the div-curl space whose maximal Rayleigh quotient is at most lambda_k^h.
/// Returns (max_quotient, lambda_k, pass).
#[pyfunction]
#[pyo3(signature = (mesh, k, tol = 1e-10))]
fn trial_subspace_check(mesh: &PyTetMesh, k: usize, tol: f64) -> PyResult<(f64, f64, bool)> {
    let opts = SolveOptions {
        tol,
        preconditioner: Preconditioner::IncompleteCholesky,
        ..SolveOptions::default()
    };
    let r = verify::run_trial_subspace_check(&mesh.inner, k, &opts).map_err(err)?;
    Ok((r.max_quotient, r.lambda_k, r.pass))
}

/// Full interlacing study as a JSON report string (see the CLI for the
/// same output as files).
#[pyfunction]
#[pyo3(signature = (kmax, levels, side = std::f64::consts::PI, oracle_only = false))]
fn interlace_study_json(
    kmax: usize,
    levels: Vec<usize>,
    side: f64,
    oracle_only: bool,
) -> PyResult<String> {
    let mut spec = verify::StudySpec::new(verify::DomainSpec::cube(side), kmax, levels);
    spec.oracle_only = oracle_only;
    let report = verify::run_interlace_study(&spec).map_err(err)?;
    curlspec::report::to_json_string(&report).map_err(err)
}

#[pymodule]
fn curlspec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTetMesh>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyInterlaceRecord>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(box_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(cube_spectrum_exact, m)?)?;
    m.add_function(wrap_pyfunction!(interlace_check, m)?)?;
    m.add_function(wrap_pyfunction!(trial_subspace_check, m)?)?;
    m.add_function(wrap_pyfunction!(interlace_study_json, m)?)?;
    Ok(())
}
