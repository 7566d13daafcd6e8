//! Reusable consistency tests: the discrete dot-product test and adjoint
//! gradients against central differences.

use crate::adjoint::{misfit_gradient, solve_adjoint, AdjointSource};
use crate::error::Result;
use crate::forward::{integrate, ForwardTrace, Mode};
use crate::linalg::{dot, dot_real, CVec, C64};
use crate::observation::ObservationSet;
use crate::phi::PhiBackendConfig;
use crate::problem::{SemilinearProblem, TimeGrid};
use crate::tableau::TableauSpec;
use crate::tangent::{solve_linearized, TangentSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

fn randc(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    (0..n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
}

/// Relative gap `|⟨v(q), θ⟩ − ⟨q, λ(θ)⟩| / max(|·|)` for `pairs` random
/// source pairs; returns the largest.
pub fn adjoint_identity_gap(trace: &ForwardTrace, problem: &dyn SemilinearProblem, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = trace.states[0].len();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mut q = TangentSource::zeros(trace);
        q.initial = randc(&mut rng, n);
        q.stages.iter_mut().flatten().for_each(|s| *s = randc(&mut rng, n));
        q.states.iter_mut().for_each(|s| *s = randc(&mut rng, n));
        let mut th = AdjointSource::zeros(trace);
        th.stages.iter_mut().flatten().for_each(|s| *s = randc(&mut rng, n));
        th.states.iter_mut().for_each(|s| *s = randc(&mut rng, n));

        let v = solve_linearized(trace, problem, &q)?;
        let l = solve_adjoint(trace, problem, &th)?;
        let mut lhs = C64::new(0.0, 0.0);
        for (a, b) in th.states.iter().zip(&v.states) {
            lhs += dot(a, b);
        }
        for (a, b) in th.stages.iter().flatten().zip(v.stages.iter().flatten()) {
            lhs += dot(a, b);
        }
        let mut rhs = dot(&l.states[0], &q.initial);
        for (a, b) in l.states[1..].iter().zip(&q.states) {
            rhs += dot(a, b);
        }
        for (a, b) in l.stages.iter().flatten().zip(q.stages.iter().flatten()) {
            rhs += dot(a, b);
        }
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()).max(1e-300));
    }
    Ok(worst)
}

/// One direction of a gradient check: the adjoint directional derivative and
/// the relative error of central differences at each step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub adjoint: f64,
    pub eps: Vec<f64>,
    pub rel_errors: Vec<f64>,
}

impl DirectionCheck {
    pub fn best(&self) -> f64 {
        self.rel_errors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Convergence order of the central-difference error between the two
    /// largest steps, where truncation dominates roundoff; 2 when clean.
    pub fn observed_order(&self) -> f64 {
        if self.eps.len() < 2 {
            return f64::NAN;
        }
        (self.rel_errors[0] / self.rel_errors[1]).ln() / (self.eps[0] / self.eps[1]).ln()
    }
}

pub struct GradientCase<'a> {
    pub problem: &'a dyn SemilinearProblem,
    pub tableau: &'a TableauSpec,
    pub mode: Mode,
    pub phi: &'a PhiBackendConfig,
    pub y0: &'a [C64],
    pub grid: &'a TimeGrid,
    pub observations: &'a ObservationSet,
}

impl GradientCase<'_> {
    pub fn misfit(&self, m: &[f64]) -> Result<f64> {
        let trace = integrate(self.problem, self.tableau, self.y0, m, self.grid, self.mode, self.phi)?;
        Ok(misfit_gradient(&trace, self.problem, self.observations)?.value)
    }

    /// Compares `∇M · w` with central differences of `M` along random unit
    /// directions `w`, one entry per direction.
    pub fn check(&self, m: &[f64], directions: usize, eps: &[f64], seed: u64) -> Result<Vec<DirectionCheck>> {
        let trace = integrate(self.problem, self.tableau, self.y0, m, self.grid, self.mode, self.phi)?;
        let grad = misfit_gradient(&trace, self.problem, self.observations)?.gradient;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(directions);
        for _ in 0..directions {
            let mut w: Vec<f64> = (0..m.len()).map(|_| rng.sample(StandardNormal)).collect();
            let nw = dot_real(&w, &w).sqrt();
            w.iter_mut().for_each(|x| *x /= nw);
            let adjoint = dot_real(&grad, &w);
            let mut rel_errors = Vec::with_capacity(eps.len());
            for &e in eps {
                let at = |s: f64| -> Vec<f64> { m.iter().zip(&w).map(|(a, b)| a + s * b).collect() };
                let fd = (self.misfit(&at(e))? - self.misfit(&at(-e))?) / (2.0 * e);
                rel_errors.push((fd - adjoint).abs() / adjoint.abs().max(fd.abs()).max(1e-300));
            }
            out.push(DirectionCheck { adjoint, eps: eps.to_vec(), rel_errors });
        }
        Ok(out)
    }
}
