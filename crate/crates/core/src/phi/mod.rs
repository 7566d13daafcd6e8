//! φ-function evaluation.
//!
//! `φ_0(z) = e^z`, `φ_ℓ(z) = Σ_i z^i / (i+ℓ)!`. Scalars use a shifted Taylor
//! series near the origin and the recurrence `φ_ℓ = (φ_{ℓ-1} - 1/(ℓ-1)!)/z`
//! elsewhere. Matrix actions go through contour quadrature or polynomials.

mod contour;
mod dense;
mod poly;

pub use contour::{contour_for_spectrum, contour_nodes, ContourKind, ContourSpec, QuadratureNodes};
pub use dense::{matvec, matvec_adj, phi_apply_dense, phi_apply_diag, resolvent_inverses};
pub use poly::{phi_apply_poly, poly_coefficients, PolyBasis};

use crate::error::{EtdError, Result};
use crate::linalg::C64;
use serde::{Deserialize, Serialize};

pub const MAX_ELL: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiBackendConfig {
    pub series_threshold: f64,
    pub series_terms: usize,
    pub contour: ContourSpec,
}

impl Default for PhiBackendConfig {
    fn default() -> Self {
        Self { series_threshold: 1.0, series_terms: 25, contour: ContourSpec::default() }
    }
}

impl PhiBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_threshold >= 0.0) || !self.series_threshold.is_finite() {
            return Err(EtdError::InvalidInput("series_threshold must be a finite nonnegative number".into()));
        }
        if self.series_terms < 5 {
            return Err(EtdError::InvalidInput("series_terms must be at least 5".into()));
        }
        self.contour.validate()
    }
}

/// Axis-aligned box containing the spectrum of an operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBound {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl SpectrumBound {
    pub fn real(lo: f64, hi: f64) -> Self {
        Self { re_min: lo, re_max: hi, im_min: 0.0, im_max: 0.0 }
    }

    pub fn from_values(vals: &[C64]) -> Self {
        let mut b = Self {
            re_min: f64::INFINITY,
            re_max: f64::NEG_INFINITY,
            im_min: f64::INFINITY,
            im_max: f64::NEG_INFINITY,
        };
        for v in vals {
            b.re_min = b.re_min.min(v.re);
            b.re_max = b.re_max.max(v.re);
            b.im_min = b.im_min.min(v.im);
            b.im_max = b.im_max.max(v.im);
        }
        if vals.is_empty() {
            b = Self::real(0.0, 0.0);
        }
        b
    }

    pub fn scaled(&self, h: f64) -> Self {
        let (a, b) = (self.re_min * h, self.re_max * h);
        let (c, d) = (self.im_min * h, self.im_max * h);
        Self { re_min: a.min(b), re_max: a.max(b), im_min: c.min(d), im_max: c.max(d) }
    }

    pub fn center(&self) -> C64 {
        C64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    /// Largest distance from `c` to any point of the box.
    pub fn max_distance(&self, c: C64) -> f64 {
        let dx = (self.re_min - c.re).abs().max((self.re_max - c.re).abs());
        let dy = (self.im_min - c.im).abs().max((self.im_max - c.im).abs());
        dx.hypot(dy)
    }
}

/// Below this modulus the series is used for a given `ell`, whatever the
/// configured threshold: the recurrence loses digits near the origin and the
/// loss grows with `ell`.
fn series_radius(ell: usize, threshold: f64) -> f64 {
    threshold.max(0.5 * ell as f64 - 1.0)
}

pub fn inv_factorial(n: usize) -> f64 {
    let mut f = 1.0f64;
    for k in 2..=n {
        f *= k as f64;
    }
    1.0 / f
}

fn series(ell: usize, z: C64, min_terms: usize) -> C64 {
    let mut term = C64::new(inv_factorial(ell), 0.0);
    let mut sum = term;
    for i in 1..400 {
        term = term * z / (i + ell) as f64;
        sum += term;
        if i >= min_terms && term.norm() <= 1e-17 * sum.norm() {
            break;
        }
    }
    sum
}

fn recurrence(ell: usize, z: C64) -> C64 {
    let mut p = z.exp();
    for j in 1..=ell {
        p = (p - inv_factorial(j - 1)) / z;
    }
    p
}

/// φ_ℓ(z) for a single complex argument.
pub fn phi_scalar(ell: usize, z: C64, cfg: &PhiBackendConfig) -> Result<C64> {
    if ell > MAX_ELL {
        return Err(EtdError::InvalidInput(format!("ell = {ell} exceeds {MAX_ELL}")));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(EtdError::InvalidInput(format!("non-finite argument {z}")));
    }
    if z.norm() < series_radius(ell, cfg.series_threshold) {
        Ok(series(ell, z, cfg.series_terms))
    } else {
        Ok(recurrence(ell, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PhiBackendConfig {
        PhiBackendConfig::default()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn values_at_origin_are_inverse_factorials() {
        for ell in 0..=MAX_ELL {
            assert_eq!(phi_scalar(ell, c(0.0, 0.0), &cfg()).unwrap().re, inv_factorial(ell));
        }
        assert_eq!(phi_scalar(2, c(0.0, 0.0), &cfg()).unwrap(), c(0.5, 0.0));
    }

    #[test]
    fn closed_form_phi1() {
        let v = phi_scalar(1, c(-2.0, 0.0), &cfg()).unwrap();
        let exact = ((-2.0f64).exp() - 1.0) / -2.0;
        assert!((v.re - exact).abs() < 1e-15);
        assert!((v.re - 0.4323323583816936).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn real_argument_gives_real_value() {
        for &x in &[-500.0, -3.0, -0.7, -0.1, 0.3, 2.0, 40.0] {
            for ell in 0..=MAX_ELL {
                assert_eq!(phi_scalar(ell, c(x, 0.0), &cfg()).unwrap().im, 0.0);
            }
        }
    }

    #[test]
    fn recurrence_invariant_away_from_origin() {
        let zs = [c(-1.0, 0.0), c(1.5, 0.0), c(-30.0, 2.0), c(0.0, 4.0), c(-7.0, -7.0), c(-999.0, 0.0)];
        for z in zs {
            for ell in 1..=3 {
                let p = phi_scalar(ell, z, &cfg()).unwrap();
                let q = phi_scalar(ell - 1, z, &cfg()).unwrap();
                let rhs = (q - inv_factorial(ell - 1)) / z;
                assert!((p - rhs).norm() <= 1e-12 * (1.0 + p.norm()), "ell={ell} z={z}");
            }
        }
    }

    #[test]
    fn series_and_recurrence_agree_near_switch() {
        for ell in 0..=MAX_ELL {
            let r = series_radius(ell, 1.0);
            for k in 0..16 {
                let th = std::f64::consts::PI * k as f64 / 8.0;
                let z = C64::from_polar(r * 1.0001, th);
                let a = series(ell, z, 25);
                let b = recurrence(ell, z);
                assert!((a - b).norm() <= 1e-13 * a.norm(), "ell={ell} z={z}");
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(phi_scalar(9, c(0.0, 0.0), &cfg()).is_err());
        assert!(phi_scalar(1, c(f64::NAN, 0.0), &cfg()).is_err());
        let bad = PhiBackendConfig { series_terms: 3, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
