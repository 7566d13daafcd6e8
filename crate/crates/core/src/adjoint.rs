//! Adjoint problem `(∂t/∂y)^H λ = θ` by backward substitution, the
//! transposed sensitivity `J^T u` and misfit gradients.

use crate::error::{EtdError, Result};
use crate::forward::ForwardTrace;
use crate::linalg::{add_assign, add_assign_real, axpy, scale, zeros, CVec, C64};
use crate::observation::ObservationSet;
use crate::operator::{exp_term, DerivKit, KitCache};
use crate::problem::SemilinearProblem;
use crate::tableau::{PhiTerm, Scheme};
use crate::tangent::state_terms_active;

/// `states[k]` pairs with `v_k` (k = 0..=K); `stages[k][i]` with `V_{k+1,i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSource {
    pub states: Vec<CVec>,
    pub stages: Vec<Vec<CVec>>,
}

impl AdjointSource {
    pub fn zeros(trace: &ForwardTrace) -> Self {
        let n = trace.states[0].len();
        let k = trace.num_steps();
        Self { states: vec![zeros(n); k + 1], stages: vec![vec![zeros(n); trace.tableau.s]; k] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSolution {
    pub states: Vec<CVec>,
    pub stages: Vec<Vec<CVec>>,
}

/// Stage adjoints of one step.
pub struct StepAdjoint {
    /// λ_k = θ_k + everything step k feeds back.
    pub lambda: CVec,
    /// Λ_i
    pub stages: Vec<CVec>,
    /// (∂n/∂y)^H Λ_i
    pub hat: Vec<CVec>,
}

/// Adjoint of linearized step `k`, given λ_{k+1}.
pub fn adjoint_step(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    k: usize,
    kit: Option<&DerivKit>,
    lam_next: &[C64],
    theta_k: &[C64],
    stage_src: Option<&[CVec]>,
) -> Result<StepAdjoint> {
    let tab = &trace.tableau;
    let op = &trace.operators[k];
    let tau = C64::new(op.tau, 0.0);
    let n = lam_next.len();
    let mut stages = vec![zeros(n); tab.s];
    let mut hat = vec![zeros(n); tab.s];
    for i in (0..tab.s).rev() {
        let mut li = stage_src.map(|s| s[i].clone()).unwrap_or_else(|| zeros(n));
        if !tab.b[i].is_empty() {
            axpy(tau, &op.combo_adj(&tab.b[i], lam_next)?, &mut li);
        }
        for j in i + 1..tab.s {
            let aji = &tab.a[j][i];
            if !aji.is_empty() {
                axpy(tau, &op.combo_adj(aji, &hat[j])?, &mut li);
            }
        }
        let at = trace.stage_point(k, i);
        hat[i] = problem.n_dy_adj(&at, &trace.stage_args[k][i], &li);
        stages[i] = li;
    }
    let mut lambda = theta_k.to_vec();
    add_assign(&mut lambda, &op.phi_adj(0, 1.0, lam_next)?);
    for i in 0..tab.s {
        add_assign(&mut lambda, &op.phi_adj(0, tab.c[i], &hat[i])?);
    }
    if let Some(kit) = kit {
        let yk = &trace.states[k];
        let at_op = trace.operator_point(k);
        let dlt = |v: &[C64], z: &[C64]| problem.op_dyk_adj(&at_op, v, z);
        for i in 0..tab.s {
            let at = trace.stage_point(k, i);
            add_assign(&mut lambda, &problem.n_dyk_adj(&at, &trace.stage_args[k][i], &stages[i]));
            if let Some(e) = exp_term(tab.c[i]) {
                kit.transpose(&e, yk, &dlt, &hat[i], &mut lambda)?;
            }
            let th = scale(tau, &hat[i]);
            for (j, aij) in tab.a[i].iter().enumerate() {
                if !aij.is_empty() {
                    kit.transpose(aij, &trace.stages[k][j], &dlt, &th, &mut lambda)?;
                }
            }
        }
        kit.transpose(&exp_term(1.0).expect("c = 1"), yk, &dlt, lam_next, &mut lambda)?;
        let tl = scale(tau, lam_next);
        for (i, bi) in tab.b.iter().enumerate() {
            if !bi.is_empty() {
                kit.transpose(bi, &trace.stages[k][i], &dlt, &tl, &mut lambda)?;
            }
        }
    }
    Ok(StepAdjoint { lambda, stages, hat })
}

/// The adjoint Krogstad step written out term by term.
pub fn adjoint_step_krogstad(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    k: usize,
    kit: Option<&DerivKit>,
    lam: &[C64],
    theta_k: &[C64],
    stage_src: Option<&[CVec]>,
) -> Result<StepAdjoint> {
    if trace.tableau.scheme != Scheme::Krogstad {
        return Err(EtdError::InvalidInput(format!("expected a Krogstad trace, got {}", trace.tableau.scheme)));
    }
    let op = &trace.operators[k];
    let tau = op.tau;
    let h = 0.5;
    let n = lam.len();
    let pa = |ell: usize, c: f64, z: &[C64]| op.phi_adj(ell, c, z);
    let lin = |src: Option<usize>, a: &[(f64, CVec)]| -> CVec {
        let mut out = match (src, stage_src) {
            (Some(i), Some(s)) => s[i].clone(),
            _ => zeros(n),
        };
        for (w, x) in a {
            axpy(C64::new(*w, 0.0), x, &mut out);
        }
        out
    };
    let nh = |i: usize, l: &[C64]| problem.n_dy_adj(&trace.stage_point(k, i), &trace.stage_args[k][i], l);

    let l4 = lin(Some(3), &[(4.0 * tau, pa(3, 1.0, lam)?), (-tau, pa(2, 1.0, lam)?)]);
    let h4 = nh(3, &l4);
    let l3 = lin(Some(2), &[(2.0 * tau, pa(2, 1.0, lam)?), (-4.0 * tau, pa(3, 1.0, lam)?), (2.0 * tau, pa(2, 1.0, &h4)?)]);
    let h3 = nh(2, &l3);
    let l2 = lin(Some(1), &[(2.0 * tau, pa(2, 1.0, lam)?), (-4.0 * tau, pa(3, 1.0, lam)?), (tau, pa(2, h, &h3)?)]);
    let h2 = nh(1, &l2);
    let l1 = lin(
        Some(0),
        &[
            (tau, pa(1, 1.0, lam)?),
            (-3.0 * tau, pa(2, 1.0, lam)?),
            (4.0 * tau, pa(3, 1.0, lam)?),
            (0.5 * tau, pa(1, h, &h2)?),
            (0.5 * tau, pa(1, h, &h3)?),
            (-tau, pa(2, h, &h3)?),
            (tau, pa(1, 1.0, &h4)?),
            (-2.0 * tau, pa(2, 1.0, &h4)?),
        ],
    );
    let h1 = nh(0, &l1);
    let mut lambda = lin(
        None,
        &[(1.0, theta_k.to_vec()), (1.0, pa(0, 1.0, lam)?), (1.0, h1.clone()), (1.0, pa(0, h, &h2)?), (1.0, pa(0, h, &h3)?), (1.0, pa(0, 1.0, &h4)?)],
    );
    let stages = vec![l1, l2, l3, l4];
    let hat = vec![h1, h2, h3, h4];
    if let Some(kit) = kit {
        let yk = &trace.states[k];
        let ys = &trace.stages[k];
        let at_op = trace.operator_point(k);
        let dlt = |v: &[C64], z: &[C64]| problem.op_dyk_adj(&at_op, v, z);
        let term = |ell, c, weight| [PhiTerm { ell, node_scale: c, weight }];
        for i in 0..4 {
            let at = trace.stage_point(k, i);
            add_assign(&mut lambda, &problem.n_dyk_adj(&at, &trace.stage_args[k][i], &stages[i]));
        }
        let th2 = scale(C64::new(tau, 0.0), &hat[1]);
        let th3 = scale(C64::new(tau, 0.0), &hat[2]);
        let th4 = scale(C64::new(tau, 0.0), &hat[3]);
        let tl = scale(C64::new(tau, 0.0), lam);
        let contributions: [(&[PhiTerm], &CVec, &CVec); 19] = [
            (&term(0, h, 1.0), yk, &hat[1]),
            (&term(0, h, 1.0), yk, &hat[2]),
            (&term(0, 1.0, 1.0), yk, &hat[3]),
            (&term(1, h, 0.5), &ys[0], &th2),
            (&term(1, h, 0.5), &ys[0], &th3),
            (&term(2, h, -1.0), &ys[0], &th3),
            (&term(2, h, 1.0), &ys[1], &th3),
            (&term(1, 1.0, 1.0), &ys[0], &th4),
            (&term(2, 1.0, -2.0), &ys[0], &th4),
            (&term(2, 1.0, 2.0), &ys[2], &th4),
            (&term(0, 1.0, 1.0), yk, &lam.to_vec()),
            (&term(1, 1.0, 1.0), &ys[0], &tl),
            (&term(2, 1.0, -3.0), &ys[0], &tl),
            (&term(3, 1.0, 4.0), &ys[0], &tl),
            (&term(2, 1.0, 2.0), &ys[1], &tl),
            (&term(3, 1.0, -4.0), &ys[1], &tl),
            (&term(2, 1.0, 2.0), &ys[2], &tl),
            (&term(3, 1.0, -4.0), &ys[2], &tl),
            (&term(2, 1.0, -1.0), &ys[3], &tl),
        ];
        for (t, w, z) in contributions {
            kit.transpose(t, w, &dlt, z, &mut lambda)?;
        }
        kit.transpose(&term(3, 1.0, 4.0), &ys[3], &dlt, &tl, &mut lambda)?;
    }
    Ok(StepAdjoint { lambda, stages, hat })
}

/// Backward sweep; `visit(k, λ_{k+1}, step adjoint)` sees every step.
fn sweep(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    theta: &dyn Fn(usize) -> Option<CVec>,
    stage_src: Option<&[Vec<CVec>]>,
    visit: &mut dyn FnMut(usize, &[C64], &StepAdjoint) -> Result<()>,
) -> Result<CVec> {
    let n = trace.states[0].len();
    let kk = trace.num_steps();
    let braces = state_terms_active(trace, problem);
    let mut kits = KitCache::default();
    let mut lam = theta(kk).unwrap_or_else(|| zeros(n));
    for k in (0..kk).rev() {
        let kit = if braces { Some(kits.get(&trace.operators[k])?) } else { None };
        let th = theta(k).unwrap_or_else(|| zeros(n));
        let st = adjoint_step(trace, problem, k, kit, &lam, &th, stage_src.map(|s| s[k].as_slice()))?;
        visit(k, &lam, &st)?;
        lam = st.lambda;
    }
    Ok(lam)
}

pub fn solve_adjoint(trace: &ForwardTrace, problem: &dyn SemilinearProblem, source: &AdjointSource) -> Result<AdjointSolution> {
    let n = trace.states[0].len();
    let kk = trace.num_steps();
    if source.states.len() != kk + 1
        || source.stages.len() != kk
        || source.states.iter().any(|v| v.len() != n)
        || source.stages.iter().any(|s| s.len() != trace.tableau.s || s.iter().any(|v| v.len() != n))
    {
        return Err(EtdError::Dimension("adjoint source does not match the trace".into()));
    }
    let mut states = vec![zeros(n); kk + 1];
    let mut stages = vec![Vec::new(); kk];
    states[kk] = source.states[kk].clone();
    let theta = |k: usize| Some(source.states[k].clone());
    let lam0 = sweep(trace, problem, &theta, Some(&source.stages), &mut |k, _, st| {
        stages[k] = st.stages.clone();
        if k > 0 {
            states[k] = st.lambda.clone();
        }
        Ok(())
    })?;
    states[0] = lam0;
    Ok(AdjointSolution { states, stages })
}

/// Contribution of step `k` to `(∂t/∂m)^H` applied to the adjoint, negated
/// (i.e. the gradient with respect to `m`).
fn model_gradient_step(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    k: usize,
    kit: Option<&DerivKit>,
    lam_next: &[C64],
    st: &StepAdjoint,
    grad: &mut Vec<f64>,
) -> Result<()> {
    let tab = &trace.tableau;
    let tau = C64::new(trace.grid.steps[k], 0.0);
    for i in 0..tab.s {
        let at = trace.stage_point(k, i);
        add_assign_real(grad, &problem.n_dm_adj(&at, &trace.stage_args[k][i], &st.stages[i]));
    }
    if let Some(kit) = kit {
        let yk = &trace.states[k];
        let at_op = trace.operator_point(k);
        let dlt = |v: &[C64], z: &[C64]| problem.op_dm_adj(&at_op, v, z);
        for i in 0..tab.s {
            if let Some(e) = exp_term(tab.c[i]) {
                kit.transpose(&e, yk, &dlt, &st.hat[i], grad)?;
            }
            let th = scale(tau, &st.hat[i]);
            for (j, aij) in tab.a[i].iter().enumerate() {
                if !aij.is_empty() {
                    kit.transpose(aij, &trace.stages[k][j], &dlt, &th, grad)?;
                }
            }
        }
        kit.transpose(&exp_term(1.0).expect("c = 1"), yk, &dlt, lam_next, grad)?;
        let tl = scale(tau, lam_next);
        for (i, bi) in tab.b.iter().enumerate() {
            if !bi.is_empty() {
                kit.transpose(bi, &trace.stages[k][i], &dlt, &tl, grad)?;
            }
        }
    }
    Ok(())
}

/// Gradient with respect to `m` of `Re Σ_k ⟨θ_k, y_k⟩` for the given
/// state-space adjoint sources, plus the adjoint initial value λ_0.
pub fn model_gradient(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    theta: &dyn Fn(usize) -> Option<CVec>,
) -> Result<(Vec<f64>, CVec)> {
    let mut grad = vec![0.0; problem.model_dim()];
    let mut kits = KitCache::default();
    let lam0 = sweep(trace, problem, theta, None, &mut |k, lam_next, st| {
        let kit = if problem.depends_on_model() { Some(kits.get(&trace.operators[k])?) } else { None };
        model_gradient_step(trace, problem, k, kit, lam_next, st, &mut grad)
    })?;
    Ok((grad, lam0))
}

/// `J^T u` for data `u` laid out as concatenated observations at `obs_steps`.
pub fn sensitivity_transpose_apply(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    obs_steps: &[usize],
    u: &[f64],
) -> Result<Vec<f64>> {
    let theta = observation_sources(trace, problem, obs_steps, u)?;
    Ok(model_gradient(trace, problem, &|k| theta[k].clone())?.0)
}

fn observation_sources(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    obs_steps: &[usize],
    u: &[f64],
) -> Result<Vec<Option<CVec>>> {
    let kk = trace.num_steps();
    if obs_steps.is_empty() {
        return Ok(vec![None; kk + 1]);
    }
    let block = u.len() / obs_steps.len();
    if block * obs_steps.len() != u.len() {
        return Err(EtdError::Dimension("data length is not a multiple of the observation count".into()));
    }
    let mut theta: Vec<Option<CVec>> = vec![None; kk + 1];
    for (o, &k) in obs_steps.iter().enumerate() {
        if k > kk {
            return Err(EtdError::Dimension(format!("observation step {k} beyond trace")));
        }
        let t = problem.observe_adjoint(&u[o * block..(o + 1) * block]);
        match &mut theta[k] {
            Some(acc) => add_assign(acc, &t),
            None => theta[k] = Some(t),
        }
    }
    Ok(theta)
}

#[derive(Clone, Debug)]
pub struct MisfitGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Adjoint state at t_0: the gradient of the misfit with respect to y_0.
    pub lambda0: CVec,
    pub residual: Vec<f64>,
}

/// `M = ½ Σ ‖d(t_k) − d_obs(t_k)‖²` and `∇_m M = J^T (d − d_obs)` with one
/// adjoint solve.
pub fn misfit_gradient(trace: &ForwardTrace, problem: &dyn SemilinearProblem, obs: &ObservationSet) -> Result<MisfitGradient> {
    let steps = obs.steps(&trace.grid)?;
    let mut d = Vec::new();
    for &k in &steps {
        d.extend(problem.observe(&trace.states[k]));
    }
    let (value, residual) = crate::observation::misfit_eval(&d, &obs.flat())?;
    let theta = observation_sources(trace, problem, &steps, &residual)?;
    let (gradient, lambda0) = model_gradient(trace, problem, &|k| theta[k].clone())?;
    Ok(MisfitGradient { value, gradient, lambda0, residual })
}
