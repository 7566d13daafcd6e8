//! Small dense test problem `y' = A(m) y + m₂ ⊙ y²` with `A(m) = A₀ + m₁ D`.
//!
//! In state-dependent form the quadratic term is relinearized every step:
//! `L_k = A(m) + diag(2 m₂ ⊙ y_k)` and `n_k(y) = m₂ ⊙ y² − 2 m₂ ⊙ y_k ⊙ y`.

use crate::error::{EtdError, Result};
use crate::linalg::{CVec, C64};
use crate::problem::{EvalPoint, LinearOperator, ModelLayout, SemilinearProblem};
use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct ToyProblem {
    n: usize,
    a0: DMatrix<f64>,
    d: Vec<f64>,
    state_dependent: bool,
    layout: ModelLayout,
}

pub fn make_toy_problem(n: usize, seed: u64, state_dependent: bool) -> Result<ToyProblem> {
    if !(2..=16).contains(&n) {
        return Err(EtdError::InvalidInput(format!("toy problem size {n} outside 2..=16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a0 = -(DMatrix::identity(n, n) * 0.5 + &b * b.transpose() / n as f64);
    let d = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let layout = ModelLayout { segments: vec![("m1".into(), 1), ("m2".into(), n)] };
    Ok(ToyProblem { n, a0, d, state_dependent, layout })
}

impl ToyProblem {
    pub fn default_model(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut m = vec![0.3];
        m.extend((0..self.n).map(|_| rng.gen_range(-0.5..0.5)));
        m
    }

    pub fn initial_state(&self, seed: u64) -> CVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1717);
        (0..self.n).map(|_| C64::new(0.5 * rng.sample::<f64, _>(StandardNormal), 0.0)).collect()
    }

    pub fn with_state_dependence(&self, on: bool) -> Self {
        Self { state_dependent: on, ..self.clone() }
    }

    fn m2<'a>(&self, m: &'a [f64]) -> &'a [f64] {
        &m[1..]
    }

    /// Full right-hand side `A(m) y + m₂ ⊙ y²`.
    pub fn rhs(&self, m: &[f64], y: &[C64]) -> CVec {
        let a = self.a(m);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| y[j] * a[(i, j)]).sum::<C64>() + y[i] * y[i] * m[1 + i])
            .collect()
    }

    fn a(&self, m: &[f64]) -> DMatrix<f64> {
        let mut a = self.a0.clone();
        for i in 0..self.n {
            a[(i, i)] += m[0] * self.d[i];
        }
        a
    }
}

impl SemilinearProblem for ToyProblem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn model_layout(&self) -> &ModelLayout {
        &self.layout
    }

    fn depends_on_state(&self) -> bool {
        self.state_dependent
    }

    fn depends_on_model(&self) -> bool {
        true
    }

    fn build_operator(&self, at: &EvalPoint) -> Result<LinearOperator> {
        let mut l = self.a(at.m).map(|x| C64::new(x, 0.0));
        if self.state_dependent {
            for i in 0..self.n {
                l[(i, i)] += 2.0 * at.m[1 + i] * at.yk[i];
            }
        }
        Ok(LinearOperator::dense_bounded(l))
    }

    fn n(&self, at: &EvalPoint, y: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n)
            .map(|i| {
                let base = m2[i] * y[i] * y[i];
                if self.state_dependent {
                    base - 2.0 * m2[i] * at.yk[i] * y[i]
                } else {
                    base
                }
            })
            .collect()
    }

    fn n_dy(&self, at: &EvalPoint, y: &[C64], v: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n)
            .map(|i| {
                let k = if self.state_dependent { y[i] - at.yk[i] } else { y[i] };
                2.0 * m2[i] * k * v[i]
            })
            .collect()
    }

    fn n_dy_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n)
            .map(|i| {
                let k = if self.state_dependent { y[i] - at.yk[i] } else { y[i] };
                (2.0 * m2[i] * k).conj() * z[i]
            })
            .collect()
    }

    fn n_dm(&self, at: &EvalPoint, y: &[C64], w: &[f64]) -> CVec {
        (0..self.n)
            .map(|i| {
                let s = if self.state_dependent { y[i] * y[i] - 2.0 * at.yk[i] * y[i] } else { y[i] * y[i] };
                s * w[1 + i]
            })
            .collect()
    }

    fn n_dm_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> Vec<f64> {
        let mut g = vec![0.0];
        g.extend((0..self.n).map(|i| {
            let s = if self.state_dependent { y[i] * y[i] - 2.0 * at.yk[i] * y[i] } else { y[i] * y[i] };
            (s.conj() * z[i]).re
        }));
        g
    }

    fn n_dyk(&self, at: &EvalPoint, y: &[C64], v: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n).map(|i| if self.state_dependent { -2.0 * m2[i] * y[i] * v[i] } else { C64::new(0.0, 0.0) }).collect()
    }

    fn n_dyk_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n)
            .map(|i| if self.state_dependent { (-2.0 * m2[i] * y[i]).conj() * z[i] } else { C64::new(0.0, 0.0) })
            .collect()
    }

    fn op_dyk(&self, at: &EvalPoint, v: &[C64], dir: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n).map(|i| if self.state_dependent { 2.0 * m2[i] * dir[i] * v[i] } else { C64::new(0.0, 0.0) }).collect()
    }

    fn op_dyk_adj(&self, at: &EvalPoint, v: &[C64], z: &[C64]) -> CVec {
        let m2 = self.m2(at.m);
        (0..self.n)
            .map(|i| if self.state_dependent { (2.0 * m2[i] * v[i]).conj() * z[i] } else { C64::new(0.0, 0.0) })
            .collect()
    }

    fn op_dm(&self, at: &EvalPoint, v: &[C64], dir: &[f64]) -> CVec {
        (0..self.n)
            .map(|i| {
                let mut r = dir[0] * self.d[i] * v[i];
                if self.state_dependent {
                    r += 2.0 * dir[1 + i] * at.yk[i] * v[i];
                }
                r
            })
            .collect()
    }

    fn op_dm_adj(&self, at: &EvalPoint, v: &[C64], z: &[C64]) -> Vec<f64> {
        let mut g = vec![(0..self.n).map(|i| (v[i].conj() * self.d[i] * z[i]).re).sum()];
        g.extend((0..self.n).map(|i| if self.state_dependent { ((2.0 * at.yk[i] * v[i]).conj() * z[i]).re } else { 0.0 }));
        g
    }

    fn observe(&self, y: &[C64]) -> Vec<f64> {
        y.iter().map(|v| v.re).collect()
    }

    fn observe_adjoint(&self, u: &[f64]) -> CVec {
        u.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> (CVec, Vec<f64>) {
        let y = (0..self.n).map(|_| C64::new(0.5 * rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
        let mut m = vec![rng.gen_range(-0.5..0.5)];
        m.extend((0..self.n).map(|_| rng.gen_range(-0.5..0.5)));
        (y, m)
    }
}
