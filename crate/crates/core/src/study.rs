//! Convergence-order estimates for the forward state, the adjoint state and
//! the gradient against a fine reference run.

use crate::adjoint::model_gradient;
use crate::error::{EtdError, Result};
use crate::forward::{integrate, l2_distance, ForwardTrace, Mode};
use crate::linalg::{to_complex, CVec, C64};
use crate::phi::PhiBackendConfig;
use crate::problem::{SemilinearProblem, TimeGrid};
use crate::tableau::{make_tableau, Scheme};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Y,
    Lambda,
    Grad,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Y, Quantity::Lambda, Quantity::Grad];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Y => "y",
            Quantity::Lambda => "lambda",
            Quantity::Grad => "grad",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudySetup {
    pub schemes: Vec<Scheme>,
    /// Step sizes, any order.
    pub taus: Vec<f64>,
    pub t_final: f64,
    /// Observation spacing of the objective `½ Σ ‖d(t_j)‖²`.
    pub obs_every: f64,
    pub mode: Mode,
    pub phi: PhiBackendConfig,
}

/// One run's final state, adjoint initial value and gradient.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub y: CVec,
    pub lambda: CVec,
    pub grad: Vec<f64>,
}

impl Snapshot {
    fn error(&self, reference: &Snapshot, q: Quantity) -> f64 {
        match q {
            Quantity::Y => l2_distance(&self.y, &reference.y),
            Quantity::Lambda => l2_distance(&self.lambda, &reference.lambda),
            Quantity::Grad => l2_distance(&to_complex(&self.grad), &to_complex(&reference.grad)),
        }
    }
}

fn obs_steps(grid: &TimeGrid, every: f64, t_final: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut j = 1;
    while j as f64 * every <= t_final * (1.0 + 1e-12) {
        out.push(grid.index_of(j as f64 * every)?);
        j += 1;
    }
    Ok(out)
}

pub fn snapshot(
    problem: &dyn SemilinearProblem,
    scheme: Scheme,
    y0: &[C64],
    m: &[f64],
    tau: f64,
    setup: &StudySetup,
) -> Result<Snapshot> {
    let grid = TimeGrid::uniform(setup.t_final, tau)?;
    let trace = integrate(problem, &make_tableau(scheme), y0, m, &grid, setup.mode, &setup.phi)?;
    let steps = obs_steps(&grid, setup.obs_every, setup.t_final)?;
    let theta = data_sources(&trace, problem, &steps);
    let (grad, lambda) = model_gradient(&trace, problem, &|k| theta[k].clone())?;
    Ok(Snapshot { y: trace.final_state().to_vec(), lambda, grad })
}

/// Adjoint sources of `½ Σ ‖d(t_j)‖²` (zero observed data).
fn data_sources(trace: &ForwardTrace, problem: &dyn SemilinearProblem, steps: &[usize]) -> Vec<Option<CVec>> {
    let mut theta = vec![None; trace.num_steps() + 1];
    for &k in steps {
        theta[k] = Some(problem.observe_adjoint(&problem.observe(&trace.states[k])));
    }
    theta
}

/// Error of every scheme and step against the reference, for one initial
/// condition: `errors[scheme][tau][quantity]`. A diverging run records
/// infinite errors.
pub fn study_errors(
    problem: &dyn SemilinearProblem,
    y0: &[C64],
    m: &[f64],
    setup: &StudySetup,
    reference: &Snapshot,
) -> Result<Vec<Vec<[f64; 3]>>> {
    setup
        .schemes
        .iter()
        .map(|&s| {
            setup
                .taus
                .iter()
                .map(|&tau| match snapshot(problem, s, y0, m, tau, setup) {
                    Ok(snap) => Ok(Quantity::ALL.map(|q| snap.error(reference, q))),
                    Err(EtdError::Divergence { .. }) => Ok([f64::INFINITY; 3]),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect()
}

/// `log₂(e(2τ)/e(τ))` for consecutive ladder rungs, or NaN if either error
/// is at roundoff.
pub fn pair_order(coarse_err: f64, fine_err: f64, coarse_tau: f64, fine_tau: f64) -> f64 {
    if !(coarse_err > 0.0 && fine_err > 0.0) || !coarse_err.is_finite() || !fine_err.is_finite() {
        return f64::NAN;
    }
    (coarse_err / fine_err).ln() / (coarse_tau / fine_tau).ln()
}

/// Averages per-seed estimates. For exponential Euler only, estimates
/// outside `nominal ± 0.5` are dropped first.
pub fn average_orders(scheme: Scheme, estimates: &[f64]) -> f64 {
    let nominal = scheme.nominal_order();
    let kept: Vec<f64> = estimates
        .iter()
        .copied()
        .filter(|p| p.is_finite())
        .filter(|p| scheme != Scheme::Euler || (p - nominal).abs() < 0.5)
        .collect();
    if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub scheme: String,
    pub quantity: String,
    pub pair: String,
    pub p: f64,
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub rows: Vec<OrderRow>,
    /// `errors[seed][scheme][tau][quantity]`
    pub errors: Vec<Vec<Vec<[f64; 3]>>>,
    pub taus: Vec<f64>,
    /// `(seed index, scheme, tau)` of every run that diverged.
    pub flagged: Vec<(usize, String, f64)>,
}

/// Full study: one Krogstad reference at half the smallest step per initial
/// condition, then orders for every consecutive pair of steps.
pub fn order_study(
    problem: &dyn SemilinearProblem,
    initial: &[CVec],
    m: &[f64],
    setup: &StudySetup,
) -> Result<StudyResult> {
    if setup.taus.len() < 2 {
        return Err(EtdError::InvalidInput("order study needs at least two step sizes".into()));
    }
    let mut taus = setup.taus.clone();
    taus.sort_by(|a, b| b.partial_cmp(a).expect("finite steps"));
    let setup = StudySetup { taus, ..setup.clone() };
    let tau_ref = setup.taus.last().copied().expect("non-empty") / 2.0;
    let per_seed = crate::linalg::ordered_map(initial.len(), |i| {
        let reference = snapshot(problem, Scheme::Krogstad, &initial[i], m, tau_ref, &setup)?;
        study_errors(problem, &initial[i], m, &setup, &reference)
    });
    let errors = per_seed.into_iter().collect::<Result<Vec<_>>>()?;
    let mut flagged = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        for (si, scheme) in setup.schemes.iter().enumerate() {
            for (ti, tau) in setup.taus.iter().enumerate() {
                if e[si][ti].iter().any(|x| x.is_infinite()) {
                    flagged.push((i, scheme.name().to_string(), *tau));
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (si, &scheme) in setup.schemes.iter().enumerate() {
        for (qi, q) in Quantity::ALL.iter().enumerate() {
            for t in 0..setup.taus.len() - 1 {
                let (tc, tf) = (setup.taus[t], setup.taus[t + 1]);
                let est: Vec<f64> = errors.iter().map(|e| pair_order(e[si][t][qi], e[si][t + 1][qi], tc, tf)).collect();
                rows.push(OrderRow {
                    scheme: scheme.name().into(),
                    quantity: q.name().into(),
                    pair: format!("{tc}/{tf}"),
                    p: average_orders(scheme, &est),
                });
            }
        }
    }
    Ok(StudyResult { rows, errors, taus: setup.taus, flagged })
}
