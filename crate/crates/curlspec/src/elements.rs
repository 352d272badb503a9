//! Reference-element definitions, quadrature, and per-tet local matrices for
//! P1/P2 Lagrange scalar elements and lowest-order Nédélec edge elements.
//!
//! All basis functions are built directly from the physical barycentric
//! gradients, so no explicit reference-to-physical transform bookkeeping is
//! needed: the Nédélec construction from `lambda_i grad(lambda_j)` realizes
//! the covariant transform implicitly.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TET_EDGE_VERTICES;

/// Geometry of a single positively oriented tetrahedron: its volume and the
/// (constant) gradients of the four barycentric coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TetGeometry {
    pub volume: f64,
    pub grads: [Vector3<f64>; 4],
}

impl TetGeometry {
    pub fn new(p: [[f64; 3]; 4]) -> Result<TetGeometry> {
        let p0 = Vector3::from(p[0]);
        let cols = [
            Vector3::from(p[1]) - p0,
            Vector3::from(p[2]) - p0,
            Vector3::from(p[3]) - p0,
        ];
        let jac = Matrix3::from_columns(&cols);
        let det = jac.determinant();
        let volume = det / 6.0;
        if volume <= 0.0 {
            return Err(Error::DegenerateTet { tet: 0, volume });
        }
        let inv = jac
            .try_inverse()
            .ok_or(Error::DegenerateTet { tet: 0, volume })?;
        // grad(lambda_{1..3}) are rows of J^{-1}; grad(lambda_0) balances them.
        let g1 = Vector3::new(inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]);
        let g2 = Vector3::new(inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]);
        let g3 = Vector3::new(inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]);
        let g0 = -(g1 + g2 + g3);
        Ok(TetGeometry {
            volume,
            grads: [g0, g1, g2, g3],
        })
    }
}

/// Quadrature rule on the reference tet in barycentric coordinates.
/// Weights are relative (they sum to 1) and are scaled by the tet volume
/// at the point of use.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

fn orbit_s31(a: f64, w: f64, pts: &mut Vec<[f64; 4]>, wts: &mut Vec<f64>) {
    let b = (1.0 - a) / 3.0;
    for i in 0..4 {
        let mut p = [b; 4];
        p[i] = a;
        pts.push(p);
        wts.push(w);
    }
}

fn orbit_s22(c: f64, w: f64, pts: &mut Vec<[f64; 4]>, wts: &mut Vec<f64>) {
    let d = (1.0 - 2.0 * c) / 2.0;
    for i in 0..3 {
        for j in (i + 1)..4 {
            let mut p = [d; 4];
            p[i] = c;
            p[j] = c;
            pts.push(p);
            wts.push(w);
        }
    }
}

/// Symmetric quadrature rule exact on polynomials of the given degree.
/// Degrees 1 through 4 are supplied; all weights are positive.
pub fn quadrature(degree: usize) -> Result<QuadratureRule> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match degree {
        1 => {
            points.push([0.25; 4]);
            weights.push(1.0);
        }
        2 => {
            // (5 + 3 sqrt 5)/20 and the matching weight 1/4
            let a = (5.0 + 3.0 * 5.0_f64.sqrt()) / 20.0;
            orbit_s31(a, 0.25, &mut points, &mut weights);
        }
        3 => {
            // Two S31 orbits with rational data: face centroids and (5/8, 1/8^3).
            orbit_s31(0.0, 0.09, &mut points, &mut weights);
            orbit_s31(0.625, 0.16, &mut points, &mut weights);
        }
        4 => {
            orbit_s31(
                0.7217942490673266,
                0.07349304311636178,
                &mut points,
                &mut weights,
            );
            orbit_s31(
                0.06734224221009827,
                0.11268792571801547,
                &mut points,
                &mut weights,
            );
            orbit_s22(
                0.04550370412565009,
                0.042546020777081826,
                &mut points,
                &mut weights,
            );
        }
        d => {
            return Err(Error::InvalidSpec(format!(
                "quadrature degree {d} unsupported (1..=4)"
            )))
        }
    }
    Ok(QuadratureRule {
        degree,
        points,
        weights,
    })
}

/// Stiffness/mass pair of one element; n is 4 (P1), 10 (P2), or 6 (Nédélec).
#[derive(Debug, Clone)]
pub struct LocalMatrices {
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
}

/// Local matrices of the scalar Lagrange element of order 1 or 2.
///
/// P1 uses the closed-form constant-gradient stiffness and the exact
/// barycentric mass `(vol/20)(1 + delta_ij)`. P2 integrates with rules of
/// matching degree, which are exact for these polynomial integrands.
pub fn lagrange_local(geom: &TetGeometry, order: usize) -> Result<LocalMatrices> {
    match order {
        1 => {
            let mut stiffness = DMatrix::zeros(4, 4);
            let mut mass = DMatrix::zeros(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    stiffness[(i, j)] = geom.volume * geom.grads[i].dot(&geom.grads[j]);
                    mass[(i, j)] = geom.volume / 20.0 * if i == j { 2.0 } else { 1.0 };
                }
            }
            Ok(LocalMatrices { stiffness, mass })
        }
        2 => {
            // Nodes: 4 vertices then the 6 edges in canonical order.
            let value = |k: usize, lam: &[f64; 4]| -> f64 {
                if k < 4 {
                    lam[k] * (2.0 * lam[k] - 1.0)
                } else {
                    let (a, b) = TET_EDGE_VERTICES[k - 4];
                    4.0 * lam[a] * lam[b]
                }
            };
            let grad = |k: usize, lam: &[f64; 4]| -> Vector3<f64> {
                if k < 4 {
                    geom.grads[k] * (4.0 * lam[k] - 1.0)
                } else {
                    let (a, b) = TET_EDGE_VERTICES[k - 4];
                    4.0 * (geom.grads[a] * lam[b] + geom.grads[b] * lam[a])
                }
            };
            let qs = quadrature(2)?;
            let qm = quadrature(4)?;
            let mut stiffness = DMatrix::zeros(10, 10);
            let mut mass = DMatrix::zeros(10, 10);
            for (p, w) in qs.points.iter().zip(&qs.weights) {
                let gs: Vec<Vector3<f64>> = (0..10).map(|k| grad(k, p)).collect();
                for i in 0..10 {
                    for j in 0..10 {
                        stiffness[(i, j)] += w * geom.volume * gs[i].dot(&gs[j]);
                    }
                }
            }
            for (p, w) in qm.points.iter().zip(&qm.weights) {
                let vs: Vec<f64> = (0..10).map(|k| value(k, p)).collect();
                for i in 0..10 {
                    for j in 0..10 {
                        mass[(i, j)] += w * geom.volume * vs[i] * vs[j];
                    }
                }
            }
            Ok(LocalMatrices { stiffness, mass })
        }
        o => Err(Error::InvalidSpec(format!(
            "Lagrange order {o} unsupported (1 or 2)"
        ))),
    }
}

/// Local matrices of the lowest-order Nédélec edge element (first kind).
///
/// Basis per local edge (a,b): `sign * (lambda_a grad(lambda_b) -
/// lambda_b grad(lambda_a))`, where the sign aligns the local traversal with
/// the global lo->hi edge orientation. The curl of each basis function is the
/// constant `sign * 2 grad(lambda_a) x grad(lambda_b)`, so the curl-curl
/// matrix is exact; the edge mass matrix uses a degree-2 rule, exact for the
/// quadratic integrand.
pub fn nedelec_local(geom: &TetGeometry, signs: [i8; 6]) -> Result<LocalMatrices> {
    let curls: Vec<Vector3<f64>> = TET_EDGE_VERTICES
        .iter()
        .zip(&signs)
        .map(|(&(a, b), &s)| 2.0 * f64::from(s) * geom.grads[a].cross(&geom.grads[b]))
        .collect();
    let mut stiffness = DMatrix::zeros(6, 6);
    for i in 0..6 {
        for j in 0..6 {
            stiffness[(i, j)] = geom.volume * curls[i].dot(&curls[j]);
        }
    }
    let q = quadrature(2)?;
    let mut mass = DMatrix::zeros(6, 6);
    for (p, w) in q.points.iter().zip(&q.weights) {
        let basis: Vec<Vector3<f64>> = TET_EDGE_VERTICES
            .iter()
            .zip(&signs)
            .map(|(&(a, b), &s)| f64::from(s) * (geom.grads[b] * p[a] - geom.grads[a] * p[b]))
            .collect();
        for i in 0..6 {
            for j in 0..6 {
                mass[(i, j)] += w * geom.volume * basis[i].dot(&basis[j]);
            }
        }
    }
    Ok(LocalMatrices { stiffness, mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    const REFERENCE_TET: [[f64; 3]; 4] = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Closed-form integral of a barycentric monomial over the reference tet,
    /// normalized by the volume: a!b!c!d! * 6 / (a+b+c+d+3)!.
    fn monomial_moment(e: [usize; 4]) -> f64 {
        let s: usize = e.iter().sum();
        6.0 * e.iter().map(|&k| factorial(k)).product::<f64>() / factorial(s + 3)
    }

    fn rule_moment(rule: &QuadratureRule, e: [usize; 4]) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| {
                w * p
                    .iter()
                    .zip(&e)
                    .map(|(x, &k)| x.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    fn monomials_of_degree(deg: usize) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for a in 0..=deg {
            for b in 0..=deg - a {
                for c in 0..=deg - a - b {
                    out.push([a, b, c, deg - a - b - c]);
                }
            }
        }
        out
    }

    fn random_tet(rng: &mut impl Rng) -> TetGeometry {
        loop {
            let p: [[f64; 3]; 4] =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            if let Ok(g) = TetGeometry::new(p) {
                if g.volume > 1e-3 {
                    return g;
                }
            }
        }
    }

    #[test]
    fn quadrature_exactness_on_declared_degrees() {
        for degree in 1..=4 {
            let rule = quadrature(degree).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            for deg in 0..=degree {
                for e in monomials_of_degree(deg) {
                    let exact = monomial_moment(e);
                    let got = rule_moment(&rule, e);
                    assert!(
                        (got - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                        "rule {degree} monomial {e:?}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree_one_rule_is_the_centroid() {
        let rule = quadrature(1).unwrap();
        assert_eq!(rule.points, vec![[0.25; 4]]);
        assert_eq!(rule.weights, vec![1.0]);
    }

    #[test]
    fn degree_two_rule_matches_lambda_squared() {
        let rule = quadrature(2).unwrap();
        assert_eq!(rule.points.len(), 4);
        // integral of lambda_1^2 over the reference tet is vol/10
        let got = rule_moment(&rule, [2, 0, 0, 0]);
        assert!((got - 0.1).abs() < 1e-14);
    }

    #[test]
    fn degree_three_rule_misses_a_quartic() {
        let rule = quadrature(3).unwrap();
        let exact = monomial_moment([4, 0, 0, 0]);
        let got = rule_moment(&rule, [4, 0, 0, 0]);
        assert!(
            (got - exact).abs() > 1e-6,
            "a degree-3 rule must not integrate quartics exactly"
        );
    }

    #[test]
    fn unsupported_degree_rejected() {
        assert!(quadrature(0).is_err());
        assert!(quadrature(5).is_err());
    }

    #[test]
    fn p1_mass_matches_closed_form() {
        let geom = TetGeometry::new(REFERENCE_TET).unwrap();
        let local = lagrange_local(&geom, 1).unwrap();
        let vol = geom.volume;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { vol / 10.0 } else { vol / 20.0 };
                assert!((local.mass[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn p1_stiffness_row_sums_vanish() {
        let geom = TetGeometry::new(REFERENCE_TET).unwrap();
        let local = lagrange_local(&geom, 1).unwrap();
        for i in 0..4 {
            let s: f64 = (0..4).map(|j| local.stiffness[(i, j)]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn p1_stiffness_psd_with_one_zero_mode() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let geom = random_tet(&mut rng);
            let local = lagrange_local(&geom, 1).unwrap();
            let eig = nalgebra::SymmetricEigen::new(local.stiffness.clone());
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            let scale = vals[3].max(1.0);
            assert!(vals[0].abs() < 1e-12 * scale, "kernel of constants");
            assert!(vals[1] > 1e-10 * scale, "exactly one zero eigenvalue");
        }
    }

    #[test]
    fn p2_stiffness_annihilates_constants_and_matches_p1_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let geom = random_tet(&mut rng);
            let local = lagrange_local(&geom, 2).unwrap();
            // constants: all vertex dofs 1, edge dofs 1 (since N_i sum to 1)
            let ones = DMatrix::from_element(10, 1, 1.0);
            let r = &local.stiffness * &ones;
            assert!(
                r.abs().max() < 1e-12,
                "P2 stiffness kernel contains constants"
            );
            // linear function x: vertex values + edge midpoint values reproduce
            // the P1 interpolant, so energies agree with the P1 stiffness.
            let p1 = lagrange_local(&geom, 1).unwrap();
            // choose the linear function lambda_0
            let mut coeffs = DMatrix::zeros(10, 1);
            coeffs[(0, 0)] = 1.0;
            for (k, &(a, b)) in TET_EDGE_VERTICES.iter().enumerate() {
                let mid = 0.5 * ((a == 0) as usize as f64 + (b == 0) as usize as f64);
                coeffs[(4 + k, 0)] = mid;
            }
            let e2 = (coeffs.transpose() * &local.stiffness * &coeffs)[(0, 0)];
            let e1 = p1.stiffness[(0, 0)];
            assert!((e2 - e1).abs() < 1e-11 * e1.abs().max(1.0));
        }
    }

    #[test]
    fn nedelec_curl_matrix_has_rank_three() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let geom = random_tet(&mut rng);
            let local = nedelec_local(&geom, [1; 6]).unwrap();
            let eig = nalgebra::SymmetricEigen::new(local.stiffness.clone());
            let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
            vals.sort_by(f64::total_cmp);
            let scale = vals[5].max(1.0);
            let rank = vals.iter().filter(|&&v| v > 1e-10 * scale).count();
            assert_eq!(rank, 3, "constant curls span a 3-dim space");
        }
    }

    #[test]
    fn nedelec_annihilates_hat_gradients() {
        // grad of the hat at local vertex v has edge coefficients
        // (lambda_v at edge end) - (lambda_v at edge start) = {-1, 0, +1}.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let geom = random_tet(&mut rng);
            let local = nedelec_local(&geom, [1; 6]).unwrap();
            for v in 0..4 {
                let mut coeff = DMatrix::zeros(6, 1);
                for (k, &(a, b)) in TET_EDGE_VERTICES.iter().enumerate() {
                    coeff[(k, 0)] = f64::from(u8::from(b == v)) - f64::from(u8::from(a == v));
                }
                let r = &local.stiffness * &coeff;
                // row sums of a PSD matrix cancel to rounding; scale by the
                // largest entry magnitude that enters each sum
                let scale = local.stiffness.abs().max().max(1.0);
                assert!(
                    r.abs().max() <= 1e-14 * 6.0 * scale,
                    "curl of gradient vanishes: residual {} vs scale {scale}",
                    r.abs().max()
                );
            }
        }
    }

    #[test]
    fn nedelec_mass_is_spd() {
        let geom = TetGeometry::new(REFERENCE_TET).unwrap();
        let local = nedelec_local(&geom, [1, -1, 1, -1, 1, -1]).unwrap();
        assert!(nalgebra::Cholesky::new(local.mass).is_some());
    }

    #[test]
    fn pushforward_consistency_p1() {
        // Stiffness from the direct constant-gradient formula must match the
        // quadrature route grad = sum over points of w*vol*g_i.g_j (which is
        // the same numbers assembled differently).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let q = quadrature(2).unwrap();
        for _ in 0..50 {
            let geom = random_tet(&mut rng);
            let direct = lagrange_local(&geom, 1).unwrap().stiffness;
            let mut via_quad = DMatrix::zeros(4, 4);
            for w in &q.weights {
                for i in 0..4 {
                    for j in 0..4 {
                        via_quad[(i, j)] += w * geom.volume * geom.grads[i].dot(&geom.grads[j]);
                    }
                }
            }
            let diff = (&direct - &via_quad).abs().max();
            assert!(diff <= 1e-12 * direct.abs().max().max(1.0));
        }
    }

    #[test]
    fn local_matrices_symmetric_and_mass_pd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let geom = random_tet(&mut rng);
            for local in [
                lagrange_local(&geom, 1).unwrap(),
                lagrange_local(&geom, 2).unwrap(),
                nedelec_local(&geom, [1; 6]).unwrap(),
            ] {
                let s = &local.stiffness;
                let m = &local.mass;
                let sym_s = (s - s.transpose()).abs().max();
                let sym_m = (m - m.transpose()).abs().max();
                assert!(sym_s <= 1e-14 * s.abs().max().max(1.0));
                assert!(sym_m <= 1e-14 * m.abs().max().max(1.0));
                assert!(nalgebra::Cholesky::new(m.clone()).is_some(), "mass SPD");
            }
        }
    }
}
