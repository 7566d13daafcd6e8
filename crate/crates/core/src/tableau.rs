//! Exponential Runge–Kutta tableaux as linear combinations of φ-functions.

use crate::error::{EtdError, Result};
use crate::linalg::C64;
use crate::phi::{phi_scalar, PhiBackendConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    CoxMatthews,
    Krogstad,
    HochbruckOstermann,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Euler, Scheme::CoxMatthews, Scheme::Krogstad, Scheme::HochbruckOstermann];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::CoxMatthews => "cox_matthews",
            Scheme::Krogstad => "krogstad",
            Scheme::HochbruckOstermann => "hochbruck_ostermann",
        }
    }

    pub fn nominal_order(self) -> f64 {
        match self {
            Scheme::Euler => 1.0,
            _ => 4.0,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = EtdError;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| EtdError::InvalidInput(format!("unknown scheme '{s}'")))
    }
}

/// `weight · φ_ell(node_scale · τL)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiTerm {
    pub ell: usize,
    pub node_scale: f64,
    pub weight: f64,
}

impl PhiTerm {
    pub fn eval(&self, z: C64, cfg: &PhiBackendConfig) -> Result<C64> {
        Ok(self.weight * phi_scalar(self.ell, z * self.node_scale, cfg)?)
    }
}

pub fn eval_terms(terms: &[PhiTerm], z: C64, cfg: &PhiBackendConfig) -> Result<C64> {
    terms.iter().map(|t| t.eval(z, cfg)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableauSpec {
    pub scheme: Scheme,
    pub s: usize,
    pub c: Vec<f64>,
    /// `a[i][j]` for `j < i`; rows have length `i`.
    pub a: Vec<Vec<Vec<PhiTerm>>>,
    pub b: Vec<Vec<PhiTerm>>,
}

fn t(ell: usize, node_scale: f64, weight: f64) -> PhiTerm {
    PhiTerm { ell, node_scale, weight }
}

fn neg(terms: &[PhiTerm]) -> Vec<PhiTerm> {
    terms.iter().map(|x| t(x.ell, x.node_scale, -x.weight)).collect()
}

/// Merge terms sharing `(ell, node_scale)` and drop zero weights.
fn merged(terms: Vec<PhiTerm>) -> Vec<PhiTerm> {
    let mut out: Vec<PhiTerm> = Vec::new();
    for x in terms {
        match out.iter_mut().find(|y| y.ell == x.ell && y.node_scale == x.node_scale) {
            Some(y) => y.weight += x.weight,
            None => out.push(x),
        }
    }
    out.retain(|x| x.weight != 0.0);
    out
}

fn rk4_weights() -> Vec<Vec<PhiTerm>> {
    vec![
        vec![t(1, 1.0, 1.0), t(2, 1.0, -3.0), t(3, 1.0, 4.0)],
        vec![t(2, 1.0, 2.0), t(3, 1.0, -4.0)],
        vec![t(2, 1.0, 2.0), t(3, 1.0, -4.0)],
        vec![t(2, 1.0, -1.0), t(3, 1.0, 4.0)],
    ]
}

pub fn make_tableau(scheme: Scheme) -> TableauSpec {
    let h = 0.5;
    match scheme {
        Scheme::Euler => TableauSpec { scheme, s: 1, c: vec![0.0], a: vec![vec![]], b: vec![vec![t(1, 1.0, 1.0)]] },
        Scheme::CoxMatthews => TableauSpec {
            scheme,
            s: 4,
            c: vec![0.0, h, h, 1.0],
            a: vec![
                vec![],
                vec![vec![t(1, h, 0.5)]],
                vec![vec![], vec![t(1, h, 0.5)]],
                vec![vec![t(1, 1.0, 1.0), t(1, h, -1.0)], vec![], vec![t(1, h, 1.0)]],
            ],
            b: rk4_weights(),
        },
        Scheme::Krogstad => TableauSpec {
            scheme,
            s: 4,
            c: vec![0.0, h, h, 1.0],
            a: vec![
                vec![],
                vec![vec![t(1, h, 0.5)]],
                vec![vec![t(1, h, 0.5), t(2, h, -1.0)], vec![t(2, h, 1.0)]],
                vec![vec![t(1, 1.0, 1.0), t(2, 1.0, -2.0)], vec![], vec![t(2, 1.0, 2.0)]],
            ],
            b: rk4_weights(),
        },
        Scheme::HochbruckOstermann => {
            let a52 = vec![t(2, h, 0.5), t(3, 1.0, -1.0), t(2, 1.0, 0.25), t(3, h, -0.5)];
            let mut a54 = vec![t(2, h, 0.25)];
            a54.extend(neg(&a52));
            let mut a51 = vec![t(1, h, 0.5), t(2, h, -0.25)];
            a51.extend(neg(&a52));
            TableauSpec {
                scheme,
                s: 5,
                c: vec![0.0, h, h, 1.0, h],
                a: vec![
                    vec![],
                    vec![vec![t(1, h, 0.5)]],
                    vec![vec![t(1, h, 0.5), t(2, h, -1.0)], vec![t(2, h, 1.0)]],
                    vec![vec![t(1, 1.0, 1.0), t(2, 1.0, -2.0)], vec![t(2, 1.0, 1.0)], vec![t(2, 1.0, 1.0)]],
                    vec![merged(a51), a52.clone(), a52, merged(a54)],
                ],
                b: vec![
                    vec![t(1, 1.0, 1.0), t(2, 1.0, -3.0), t(3, 1.0, 4.0)],
                    vec![],
                    vec![],
                    vec![t(2, 1.0, -1.0), t(3, 1.0, 4.0)],
                    vec![t(2, 1.0, 4.0), t(3, 1.0, -8.0)],
                ],
            }
        }
    }
}

impl TableauSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c.len() == self.s
            && self.b.len() == self.s
            && self.a.len() == self.s
            && self.a.iter().enumerate().all(|(i, row)| row.len() == i)
            && self.a.iter().flatten().flatten().chain(self.b.iter().flatten()).all(|x| {
                x.weight.is_finite() && x.node_scale > 0.0 && x.node_scale <= 1.0 && x.ell <= crate::phi::MAX_ELL
            });
        if ok {
            Ok(())
        } else {
            Err(EtdError::InvalidInput(format!("malformed tableau for {}", self.scheme)))
        }
    }

    /// Every `(ell, node_scale)` the step needs, including exponentials.
    pub fn phi_keys(&self) -> Vec<(usize, f64)> {
        let mut keys: Vec<(usize, f64)> = vec![(0, 1.0)];
        keys.extend(self.c.iter().filter(|&&c| c > 0.0).map(|&c| (0, c)));
        for x in self.a.iter().flatten().flatten().chain(self.b.iter().flatten()) {
            keys.push((x.ell, x.node_scale));
        }
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keys.dedup();
        keys
    }

    /// Largest violation of `Σ b_i = φ_1(z)` and `Σ_j a_ij = c_i φ_1(c_i z)`.
    pub fn consistency_error(&self, z: C64, cfg: &PhiBackendConfig) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut sb = C64::new(0.0, 0.0);
        for bi in &self.b {
            sb += eval_terms(bi, z, cfg)?;
        }
        worst = worst.max((sb - phi_scalar(1, z, cfg)?).norm());
        for (i, row) in self.a.iter().enumerate().skip(1) {
            let mut s = C64::new(0.0, 0.0);
            for aij in row {
                s += eval_terms(aij, z, cfg)?;
            }
            worst = worst.max((s - self.c[i] * phi_scalar(1, z * self.c[i], cfg)?).norm());
        }
        Ok(worst)
    }
}
