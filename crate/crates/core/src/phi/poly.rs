use super::{inv_factorial, phi_scalar, PhiBackendConfig};
use crate::error::{EtdError, Result};
use crate::linalg::{CVec, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::matvec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyBasis {
    /// Truncated Taylor series, for ‖L‖ ≤ 1.
    Monomial,
    /// Chebyshev interpolant on [−1, 1]; the caller maps the spectrum there.
    Chebyshev,
}

/// Coefficients `c_j` of φ_ℓ in the chosen basis, `j = 0..=degree`.
pub fn poly_coefficients(ell: usize, degree: usize, basis: PolyBasis) -> Result<Vec<f64>> {
    if degree < 1 {
        return Err(EtdError::InvalidInput("polynomial degree must be at least 1".into()));
    }
    match basis {
        PolyBasis::Monomial => Ok((0..=degree).map(|j| inv_factorial(j + ell)).collect()),
        PolyBasis::Chebyshev => {
            let n = degree + 1;
            let cfg = PhiBackendConfig::default();
            let f: Vec<f64> = (0..n)
                .map(|k| {
                    let x = (PI * (k as f64 + 0.5) / n as f64).cos();
                    phi_scalar(ell, C64::new(x, 0.0), &cfg).map(|v| v.re)
                })
                .collect::<Result<_>>()?;
            Ok((0..n)
                .map(|j| {
                    let s: f64 = (0..n).map(|k| f[k] * (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos()).sum();
                    if j == 0 {
                        s / n as f64
                    } else {
                        2.0 * s / n as f64
                    }
                })
                .collect())
        }
    }
}

/// Polynomial approximation of φ_ℓ(L)w.
pub fn phi_apply_poly(ell: usize, l: &DMatrix<C64>, w: &[C64], degree: usize, basis: PolyBasis) -> Result<CVec> {
    let coef = poly_coefficients(ell, degree, basis)?;
    if l.nrows() != w.len() || l.ncols() != w.len() {
        return Err(EtdError::Dimension("operator and vector sizes differ".into()));
    }
    let mut out: CVec = w.iter().map(|x| x * coef[0]).collect();
    match basis {
        PolyBasis::Monomial => {
            let mut p = w.to_vec();
            for c in &coef[1..] {
                p = matvec(l, &p);
                crate::linalg::axpy(C64::new(*c, 0.0), &p, &mut out);
            }
        }
        PolyBasis::Chebyshev => {
            let mut prev = w.to_vec();
            let mut cur = matvec(l, w);
            crate::linalg::axpy(C64::new(coef[1], 0.0), &cur, &mut out);
            for c in &coef[2..] {
                let lc = matvec(l, &cur);
                let next: CVec = lc.iter().zip(&prev).map(|(a, b)| 2.0 * a - b).collect();
                crate::linalg::axpy(C64::new(*c, 0.0), &next, &mut out);
                prev = std::mem::replace(&mut cur, next);
            }
        }
    }
    Ok(out)
}
