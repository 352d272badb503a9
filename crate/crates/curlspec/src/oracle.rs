//! Closed-form spectra of boxes with exact multiplicity bookkeeping, and the
//! interlacing check `alpha_{2k+1} <= lambda_k` on arbitrary spectra.
//!
//! Eigenvalues are repeated per multiplicity so list indices match the
//! counted-with-multiplicities convention directly. For the equal-side cube
//! with side pi the eigenvalues are the integers `l^2 + m^2 + n^2`, and the
//! integer enumerations make tie detection and interlacing margins exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which classical box spectrum to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumFamily {
    /// Dirichlet Laplacian: l, m, n >= 1.
    Dirichlet,
    /// Neumann Laplacian: l, m, n >= 0; first value 0.
    Neumann,
    /// Maxwell cavity (curl-curl): at most one index zero, not all zero;
    /// multiplicity 2 when all three are positive, 1 when one index is zero.
    Maxwell,
    /// Union of Dirichlet and Maxwell: the div-curl form spectrum.
    BForm,
}

impl SpectrumFamily {
    pub fn parse(s: &str) -> Result<SpectrumFamily> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(SpectrumFamily::Dirichlet),
            "neumann" => Ok(SpectrumFamily::Neumann),
            "maxwell" | "curlcurl" => Ok(SpectrumFamily::Maxwell),
            "bform" | "union" => Ok(SpectrumFamily::BForm),
            other => Err(Error::InvalidSpec(format!(
                "unknown spectrum family {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SpectrumFamily::Dirichlet => "dirichlet",
            SpectrumFamily::Neumann => "neumann",
            SpectrumFamily::Maxwell => "maxwell",
            SpectrumFamily::BForm => "bform",
        }
    }
}

/// One separable box mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeIndex {
    pub l: u32,
    pub m: u32,
    pub n: u32,
    pub family: SpectrumFamily,
}

impl ModeIndex {
    /// Multiplicity of the eigenvalue this ordered triple contributes.
    pub fn multiplicity(&self) -> usize {
        match self.family {
            SpectrumFamily::Maxwell => {
                if self.l > 0 && self.m > 0 && self.n > 0 {
                    2
                } else {
                    1
                }
            }
            _ => 1,
        }
    }
}

fn check_box(a: f64, b: f64, c: f64, count: usize) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "box sides must be positive: ({a}, {b}, {c})"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidSpec("count must be >= 1".into()));
    }
    Ok(())
}

/// All admissible modes with eigenvalue <= ceiling, sorted by value.
/// The index bounds `l <= a sqrt(V)/pi` (etc.) make the sweep provably
/// exhaustive below the ceiling.
pub fn box_modes_below(
    family: SpectrumFamily,
    a: f64,
    b: f64,
    c: f64,
    ceiling: f64,
) -> Vec<(ModeIndex, f64)> {
    assert!(
        family != SpectrumFamily::BForm,
        "enumerate the union via its two parts"
    );
    let pi = std::f64::consts::PI;
    let bound = |side: f64| (side * ceiling.max(0.0).sqrt() / pi).floor() as u32;
    let (lmax, mmax, nmax) = (bound(a), bound(b), bound(c));
    let value = |l: u32, m: u32, n: u32| {
        pi * pi
            * (f64::from(l * l) / (a * a) + f64::from(m * m) / (b * b) + f64::from(n * n) / (c * c))
    };
    let admissible = |l: u32, m: u32, n: u32| match family {
        SpectrumFamily::Dirichlet => l >= 1 && m >= 1 && n >= 1,
        SpectrumFamily::Neumann => true,
        SpectrumFamily::Maxwell => {
            let zeros = [l, m, n].iter().filter(|&&x| x == 0).count();
            zeros <= 1
        }
        SpectrumFamily::BForm => unreachable!(),
    };
    let mut out = Vec::new();
    for l in 0..=lmax {
        for m in 0..=mmax {
            for n in 0..=nmax {
                if !admissible(l, m, n) {
                    continue;
                }
                let v = value(l, m, n);
                if v <= ceiling {
                    out.push((ModeIndex { l, m, n, family }, v));
                }
            }
        }
    }
    out.sort_by(|x, y| x.1.total_cmp(&y.1));
    out
}

/// First `count` eigenvalues of the family on the box, ascending, repeated
/// with multiplicity. The enumeration ceiling grows until the requested
/// count is certified complete.
pub fn box_spectrum(
    family: SpectrumFamily,
    a: f64,
    b: f64,
    c: f64,
    count: usize,
) -> Result<Vec<f64>> {
    check_box(a, b, c, count)?;
    if family == SpectrumFamily::BForm {
        let d = box_spectrum(SpectrumFamily::Dirichlet, a, b, c, count)?;
        let x = box_spectrum(SpectrumFamily::Maxwell, a, b, c, count)?;
        let mut merged: Vec<f64> = d.into_iter().chain(x).collect();
        merged.sort_by(f64::total_cmp);
        merged.truncate(count);
        return Ok(merged);
    }
    // Weyl-informed initial ceiling, grown geometrically if short.
    let vol = a * b * c;
    let mut ceiling = (6.0 * std::f64::consts::PI.powi(2) * count as f64 / vol).powf(2.0 / 3.0)
        + 20.0 / (a.min(b).min(c)).powi(2);
    loop {
        let modes = box_modes_below(family, a, b, c, ceiling);
        let mut values = Vec::new();
        for (mode, v) in &modes {
            for _ in 0..mode.multiplicity() {
                values.push(*v);
            }
        }
        if values.len() >= count {
            values.sort_by(f64::total_cmp);
            values.truncate(count);
            return Ok(values);
        }
        ceiling *= 2.0;
    }
}

pub fn box_dirichlet_spectrum(a: f64, b: f64, c: f64, count: usize) -> Result<Vec<f64>> {
    box_spectrum(SpectrumFamily::Dirichlet, a, b, c, count)
}

pub fn box_neumann_spectrum(a: f64, b: f64, c: f64, count: usize) -> Result<Vec<f64>> {
    box_spectrum(SpectrumFamily::Neumann, a, b, c, count)
}

pub fn box_maxwell_spectrum(a: f64, b: f64, c: f64, count: usize) -> Result<Vec<f64>> {
    box_spectrum(SpectrumFamily::Maxwell, a, b, c, count)
}

/// First `count` eigenvalues of the family on the cube (0,pi)^3 as exact
/// integers `l^2 + m^2 + n^2`, repeated with multiplicity.
pub fn cube_spectrum_exact(family: SpectrumFamily, count: usize) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::InvalidSpec("count must be >= 1".into()));
    }
    if family == SpectrumFamily::BForm {
        let d = cube_spectrum_exact(SpectrumFamily::Dirichlet, count)?;
        let x = cube_spectrum_exact(SpectrumFamily::Maxwell, count)?;
        let mut merged: Vec<u64> = d.into_iter().chain(x).collect();
        merged.sort_unstable();
        merged.truncate(count);
        return Ok(merged);
    }
    let admissible = |l: u64, m: u64, n: u64| match family {
        SpectrumFamily::Dirichlet => l >= 1 && m >= 1 && n >= 1,
        SpectrumFamily::Neumann => true,
        SpectrumFamily::Maxwell => [l, m, n].iter().filter(|&&x| x == 0).count() <= 1,
        SpectrumFamily::BForm => unreachable!(),
    };
    let mult = |l: u64, m: u64, n: u64| -> usize {
        if family == SpectrumFamily::Maxwell && l > 0 && m > 0 && n > 0 {
            2
        } else {
            1
        }
    };
    let mut ceiling = 4 + (count as u64).pow(2).isqrt().max(9);
    loop {
        let lmax = ceiling.isqrt();
        let mut values = Vec::new();
        for l in 0..=lmax {
            for m in 0..=lmax {
                for n in 0..=lmax {
                    let v = l * l + m * m + n * n;
                    if v <= ceiling && admissible(l, m, n) {
                        for _ in 0..mult(l, m, n) {
                            values.push(v);
                        }
                    }
                }
            }
        }
        if values.len() >= count {
            values.sort_unstable();
            values.truncate(count);
            return Ok(values);
        }
        ceiling *= 2;
    }
}

// ---------------------------------------------------------------------------
// Interlacing check
// ---------------------------------------------------------------------------

/// One row of the interlacing table: compares alpha_{2k+1} with lambda_k,
/// both 1-based with multiplicities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterlaceRecord {
    pub k: usize,
    pub alpha_2k1: f64,
    pub lambda_k: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Result of the interlacing comparison for k = 1..=kmax.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterlaceCheck {
    pub records: Vec<InterlaceRecord>,
    pub all_pass: bool,
    pub tol: f64,
}

/// Check `alpha_{2k+1} <= lambda_k` for k = 1..=kmax with the given
/// tolerance: a record passes iff `margin = lambda_k - alpha_{2k+1} >= -tol`.
/// Use tol = 0 for oracle inputs and a discretization allowance for FEM data.
pub fn interlace_check(
    alpha: &[f64],
    lambda: &[f64],
    kmax: usize,
    tol: f64,
) -> Result<InterlaceCheck> {
    interlace_check_with_tols(alpha, lambda, kmax, &vec![tol; kmax])
}

/// Variant with one tolerance per k (used with extrapolated uncertainties).
pub fn interlace_check_with_tols(
    alpha: &[f64],
    lambda: &[f64],
    kmax: usize,
    tols: &[f64],
) -> Result<InterlaceCheck> {
    if kmax == 0 {
        return Err(Error::InvalidSpec("kmax must be >= 1".into()));
    }
    if alpha.len() < 2 * kmax + 1 {
        return Err(Error::InsufficientSpectrum {
            needed: 2 * kmax + 1,
            available: alpha.len(),
        });
    }
    if lambda.len() < kmax || tols.len() < kmax {
        return Err(Error::InsufficientSpectrum {
            needed: kmax,
            available: lambda.len().min(tols.len()),
        });
    }
    let mut records = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let alpha_2k1 = alpha[2 * k]; // 1-based index 2k+1
        let lambda_k = lambda[k - 1];
        let margin = lambda_k - alpha_2k1;
        records.push(InterlaceRecord {
            k,
            alpha_2k1,
            lambda_k,
            margin,
            pass: margin >= -tols[k - 1],
        });
    }
    let all_pass = records.iter().all(|r| r.pass);
    let tol = tols[..kmax].iter().fold(0.0f64, |a, &t| a.max(t));
    Ok(InterlaceCheck {
        records,
        all_pass,
        tol,
    })
}

/// Exact integer variant for the (0,pi)^3 cube: margins are integers and the
/// strictness of each inequality is decided without tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactInterlaceRecord {
    pub k: usize,
    pub alpha_2k1: u64,
    pub lambda_k: u64,
    /// lambda_k - alpha_{2k+1}; positive means strictly interlaced.
    pub margin: i64,
    pub strict: bool,
}

pub fn interlace_check_exact(
    alpha: &[u64],
    lambda: &[u64],
    kmax: usize,
) -> Result<Vec<ExactInterlaceRecord>> {
    if alpha.len() < 2 * kmax + 1 {
        return Err(Error::InsufficientSpectrum {
            needed: 2 * kmax + 1,
            available: alpha.len(),
        });
    }
    if lambda.len() < kmax {
        return Err(Error::InsufficientSpectrum {
            needed: kmax,
            available: lambda.len(),
        });
    }
    Ok((1..=kmax)
        .map(|k| {
            let a = alpha[2 * k];
            let l = lambda[k - 1];
            ExactInterlaceRecord {
                k,
                alpha_2k1: a,
                lambda_k: l,
                margin: l as i64 - a as i64,
                strict: a < l,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    #[test]
    fn cube_dirichlet_first_values() {
        let v = box_dirichlet_spectrum(PI, PI, PI, 7).unwrap();
        let expect = [3.0, 6.0, 6.0, 6.0, 9.0, 9.0, 9.0];
        for (got, want) in v.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn unit_cube_fundamental_scales() {
        let v = box_dirichlet_spectrum(1.0, 1.0, 1.0, 1).unwrap();
        assert!((v[0] - 3.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn cube_neumann_first_values() {
        let v = box_neumann_spectrum(PI, PI, PI, 5).unwrap();
        let expect = [0.0, 1.0, 1.0, 1.0, 2.0];
        for (got, want) in v.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{v:?}");
        }
        // mu_2 = 1 <= alpha_1 = 2 on the convex cube
        let alpha = box_maxwell_spectrum(PI, PI, PI, 1).unwrap();
        assert!(v[1] <= alpha[0]);
    }

    #[test]
    fn cube_maxwell_first_values() {
        let v = box_maxwell_spectrum(PI, PI, PI, 11).unwrap();
        let expect = [2.0, 2.0, 2.0, 3.0, 3.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0];
        for (got, want) in v.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn exact_cube_enumerations_match_float_route() {
        for family in [
            SpectrumFamily::Dirichlet,
            SpectrumFamily::Neumann,
            SpectrumFamily::Maxwell,
            SpectrumFamily::BForm,
        ] {
            let exact = cube_spectrum_exact(family, 60).unwrap();
            let float = box_spectrum(family, PI, PI, PI, 60).unwrap();
            for (e, f) in exact.iter().zip(&float) {
                assert!((*e as f64 - f).abs() < 1e-9, "{family:?}: {e} vs {f}");
            }
        }
    }

    #[test]
    fn maxwell_multiplicity_equals_te_tm_double_count() {
        // Independent double enumeration on a general box: TM modes need
        // l,m >= 1 and n >= 0; TE modes need n >= 1 and (l,m) != (0,0).
        let (a, b, c) = (PI, 1.3 * PI, 0.7 * PI);
        let ceiling = 60.0;
        let mut by_value: BTreeMap<i64, usize> = BTreeMap::new();
        let quant = |v: f64| (v * 1e9).round() as i64;
        for (mode, v) in box_modes_below(SpectrumFamily::Maxwell, a, b, c, ceiling) {
            *by_value.entry(quant(v)).or_insert(0) += mode.multiplicity();
        }
        let mut te_tm: BTreeMap<i64, usize> = BTreeMap::new();
        let val = |l: u32, m: u32, n: u32| {
            PI * PI
                * (f64::from(l * l) / (a * a)
                    + f64::from(m * m) / (b * b)
                    + f64::from(n * n) / (c * c))
        };
        let top = 40u32;
        for l in 0..=top {
            for m in 0..=top {
                for n in 0..=top {
                    let v = val(l, m, n);
                    if v > ceiling {
                        continue;
                    }
                    if l >= 1 && m >= 1 {
                        *te_tm.entry(quant(v)).or_insert(0) += 1; // TM
                    }
                    if n >= 1 && (l, m) != (0, 0) {
                        *te_tm.entry(quant(v)).or_insert(0) += 1; // TE
                    }
                }
            }
        }
        assert_eq!(by_value, te_tm);
    }

    #[test]
    fn scaling_covariance() {
        let s = 2.5;
        for family in [
            SpectrumFamily::Dirichlet,
            SpectrumFamily::Neumann,
            SpectrumFamily::Maxwell,
        ] {
            let base = box_spectrum(family, 1.0, 1.3, 0.8, 40).unwrap();
            let scaled = box_spectrum(family, s, 1.3 * s, 0.8 * s, 40).unwrap();
            for (b, sc) in base.iter().zip(&scaled) {
                assert!(
                    (sc - b / (s * s)).abs() <= 1e-12 * b.abs().max(1.0),
                    "{family:?}"
                );
            }
        }
    }

    #[test]
    fn weyl_counting_bracket() {
        // N(V) for Dirichlet grows like (vol / 6 pi^2) V^{3/2}
        let (a, b, c) = (PI, PI, PI);
        let ceiling = 400.0;
        let n = box_modes_below(SpectrumFamily::Dirichlet, a, b, c, ceiling).len() as f64;
        let weyl = a * b * c / (6.0 * PI * PI) * ceiling.powf(1.5);
        let ratio = n / weyl;
        assert!((0.5..2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn enumeration_is_exhaustive_below_returned_max() {
        let (a, b, c) = (PI, 1.1 * PI, 0.9 * PI);
        let values = box_dirichlet_spectrum(a, b, c, 25).unwrap();
        let vmax = values[values.len() - 1];
        // brute-force sweep with a generous index margin must find the same
        // leading multiset
        let mut brute = Vec::new();
        for l in 1..=30u32 {
            for m in 1..=30u32 {
                for n in 1..=30u32 {
                    let v = PI
                        * PI
                        * (f64::from(l * l) / (a * a)
                            + f64::from(m * m) / (b * b)
                            + f64::from(n * n) / (c * c));
                    if v <= vmax + 1e-12 {
                        brute.push(v);
                    }
                }
            }
        }
        brute.sort_by(f64::total_cmp);
        assert!(brute.len() >= values.len());
        for (got, want) in values.iter().zip(&brute) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn interlace_cube_oracle_passes() {
        let alpha = box_maxwell_spectrum(PI, PI, PI, 7).unwrap();
        let lambda = box_dirichlet_spectrum(PI, PI, PI, 3).unwrap();
        let check = interlace_check(&alpha, &lambda, 3, 0.0).unwrap();
        assert!(check.all_pass);
        assert_eq!(check.records[0].alpha_2k1, 2.0);
        assert_eq!(check.records[0].lambda_k, 3.0);
        assert_eq!(check.records[0].margin, 1.0);
        assert_eq!(check.records[1].margin, 3.0);
        assert_eq!(check.records[2].margin, 1.0);
    }

    #[test]
    fn interlace_exact_strict_up_to_k_50() {
        let alpha = cube_spectrum_exact(SpectrumFamily::Maxwell, 101).unwrap();
        let lambda = cube_spectrum_exact(SpectrumFamily::Dirichlet, 50).unwrap();
        let records = interlace_check_exact(&alpha, &lambda, 50).unwrap();
        for r in &records {
            assert!(r.strict, "k = {}: {} vs {}", r.k, r.alpha_2k1, r.lambda_k);
            assert!(r.margin >= 1);
        }
    }

    #[test]
    fn interlace_same_list_is_a_negative_control() {
        let lambda = box_dirichlet_spectrum(PI, PI, PI, 21).unwrap();
        let check = interlace_check(&lambda, &lambda, 10, 0.0).unwrap();
        assert!(!check.all_pass);
        for r in &check.records {
            // fails exactly where lambda_{2k+1} > lambda_k
            assert_eq!(r.pass, lambda[2 * r.k] <= lambda[r.k - 1]);
        }
        assert!(check.records.iter().any(|r| r.margin < 0.0));
    }

    #[test]
    fn interlace_insufficient_input_errors() {
        let alpha = vec![1.0; 5];
        let lambda = vec![1.0; 2];
        assert!(interlace_check(&alpha, &lambda, 3, 0.0).is_err());
        assert!(interlace_check(&alpha, &lambda, 2, 0.0).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn spectra_are_ascending_and_positive_where_expected(
            count in 1usize..60,
            a in 0.5f64..3.0, b in 0.5f64..3.0, c in 0.5f64..3.0,
        ) {
            for family in [SpectrumFamily::Dirichlet, SpectrumFamily::Neumann, SpectrumFamily::Maxwell] {
                let v = box_spectrum(family, a, b, c, count).unwrap();
                proptest::prop_assert_eq!(v.len(), count);
                for w in v.windows(2) {
                    proptest::prop_assert!(w[0] <= w[1]);
                }
                match family {
                    SpectrumFamily::Neumann => proptest::prop_assert_eq!(v[0], 0.0),
                    _ => proptest::prop_assert!(v[0] > 0.0),
                }
            }
        }
    }
}
