//! Forward ETDRK integration.
//!
//! One step from `y_k`:
//! `ẙ_i = e^{c_iτL} y_k + τ Σ_{j<i} a_ij(τL) Y_j`, `Y_i = n(ẙ_i, t_k + c_iτ)`,
//! `y_{k+1} = e^{τL} y_k + τ Σ_i b_i(τL) Y_i`.

use crate::error::{EtdError, Result};
use crate::linalg::{all_finite, axpy, CVec, C64};
use crate::operator::StepOperator;
use crate::phi::PhiBackendConfig;
use crate::problem::{EvalPoint, SemilinearProblem, TimeGrid};
use crate::tableau::TableauSpec;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// L is built once from the initial state.
    #[serde(rename = "fixed_L", alias = "fixed_l")]
    FixedL,
    /// L is rebuilt from every step's starting state.
    #[serde(rename = "rosenbrock")]
    Rosenbrock,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub grid: TimeGrid,
    pub tableau: TableauSpec,
    pub mode: Mode,
    pub model: Vec<f64>,
    pub states: Vec<CVec>,
    /// Stage arguments ẙ per step.
    pub stage_args: Vec<Vec<CVec>>,
    /// Stage values Y per step.
    pub stages: Vec<Vec<CVec>>,
    pub operators: Vec<Arc<StepOperator>>,
}

impl ForwardTrace {
    pub fn num_steps(&self) -> usize {
        self.grid.num_steps()
    }

    pub fn final_state(&self) -> &[C64] {
        self.states.last().expect("trace holds y_0")
    }

    /// Evaluation point of stage `i` in step `k` (from `y_k`).
    pub fn stage_point(&self, k: usize, i: usize) -> EvalPoint<'_> {
        let op = &self.operators[k];
        EvalPoint {
            m: &self.model,
            yk: &self.states[op.lin_index],
            t: self.grid.times[k] + self.tableau.c[i] * self.grid.steps[k],
        }
    }

    /// Evaluation point of step `k`'s operator.
    pub fn operator_point(&self, k: usize) -> EvalPoint<'_> {
        let op = &self.operators[k];
        EvalPoint { m: &self.model, yk: &self.states[op.lin_index], t: self.grid.times[op.lin_index] }
    }
}

pub struct StepResult {
    pub next: CVec,
    pub stage_args: Vec<CVec>,
    pub stages: Vec<CVec>,
}

/// Advance one step with a prepared operator record.
pub fn advance(
    problem: &dyn SemilinearProblem,
    tab: &TableauSpec,
    op: &StepOperator,
    yk: &[C64],
    lin_state: &[C64],
    m: &[f64],
    tk: f64,
    step: usize,
) -> Result<StepResult> {
    let tau = op.tau;
    let mut args = Vec::with_capacity(tab.s);
    let mut stages: Vec<CVec> = Vec::with_capacity(tab.s);
    for i in 0..tab.s {
        let mut arg = op.phi(0, tab.c[i], yk)?;
        for (j, aij) in tab.a[i].iter().enumerate() {
            if !aij.is_empty() {
                axpy(C64::new(tau, 0.0), &op.combo(aij, &stages[j])?, &mut arg);
            }
        }
        let at = EvalPoint { m, yk: lin_state, t: tk + tab.c[i] * tau };
        let y = problem.n(&at, &arg);
        if !all_finite(&y) {
            return Err(EtdError::Divergence { step });
        }
        args.push(arg);
        stages.push(y);
    }
    let mut next = op.phi(0, 1.0, yk)?;
    for (i, bi) in tab.b.iter().enumerate() {
        if !bi.is_empty() {
            axpy(C64::new(tau, 0.0), &op.combo(bi, &stages[i])?, &mut next);
        }
    }
    if !all_finite(&next) {
        return Err(EtdError::Divergence { step });
    }
    Ok(StepResult { next, stage_args: args, stages })
}

/// One step from `y_k`, building the operator at `(m, y_k, t_k)`.
pub fn step_forward(
    problem: &dyn SemilinearProblem,
    tab: &TableauSpec,
    yk: &[C64],
    m: &[f64],
    tk: f64,
    tau: f64,
    cfg: &PhiBackendConfig,
) -> Result<(StepResult, StepOperator)> {
    let l = problem.build_operator(&EvalPoint { m, yk, t: tk })?;
    let op = StepOperator::build(l, tau, 0, &tab.phi_keys(), cfg)?;
    let r = advance(problem, tab, &op, yk, yk, m, tk, 0)?;
    Ok((r, op))
}

pub fn integrate(
    problem: &dyn SemilinearProblem,
    tab: &TableauSpec,
    y0: &[C64],
    m: &[f64],
    grid: &TimeGrid,
    mode: Mode,
    cfg: &PhiBackendConfig,
) -> Result<ForwardTrace> {
    tab.validate()?;
    cfg.validate()?;
    if y0.len() != problem.state_dim() {
        return Err(EtdError::Dimension(format!("y0 has {} entries, problem {}", y0.len(), problem.state_dim())));
    }
    if m.len() != problem.model_dim() {
        return Err(EtdError::Dimension(format!("model has {} entries, problem {}", m.len(), problem.model_dim())));
    }
    if mode == Mode::FixedL && problem.depends_on_state() {
        return Err(EtdError::InvalidInput("fixed-L mode needs an operator that does not depend on the state".into()));
    }
    let keys = tab.phi_keys();
    let k = grid.num_steps();
    let mut states = Vec::with_capacity(k + 1);
    states.push(y0.to_vec());
    let mut stage_args = Vec::with_capacity(k);
    let mut stages = Vec::with_capacity(k);
    let mut operators: Vec<Arc<StepOperator>> = Vec::with_capacity(k);
    let fixed_l = match mode {
        Mode::FixedL if k > 0 => Some(problem.build_operator(&EvalPoint { m, yk: y0, t: grid.times[0] })?),
        _ => None,
    };
    let mut shared: HashMap<u64, Arc<StepOperator>> = HashMap::new();
    for step in 0..k {
        let tau = grid.steps[step];
        let op = match &fixed_l {
            Some(l) => match shared.get(&tau.to_bits()) {
                Some(op) => op.clone(),
                None => {
                    let op = Arc::new(StepOperator::build(l.clone(), tau, 0, &keys, cfg)?);
                    shared.insert(tau.to_bits(), op.clone());
                    op
                }
            },
            None => {
                let l = problem.build_operator(&EvalPoint { m, yk: &states[step], t: grid.times[step] })?;
                Arc::new(StepOperator::build(l, tau, step, &keys, cfg)?)
            }
        };
        let lin = &states[op.lin_index];
        let r = advance(problem, tab, &op, &states[step], lin, m, grid.times[step], step)?;
        states.push(r.next);
        stage_args.push(r.stage_args);
        stages.push(r.stages);
        operators.push(op);
    }
    Ok(ForwardTrace { grid: grid.clone(), tableau: tab.clone(), mode, model: m.to_vec(), states, stage_args, stages, operators })
}

/// Discrete L2 distance.
pub fn l2_distance(a: &[C64], b: &[C64]) -> f64 {
    let mut d = a.to_vec();
    axpy(C64::new(-1.0, 0.0), b, &mut d);
    crate::linalg::norm(&d)
}
