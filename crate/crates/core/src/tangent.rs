//! Linearized forward problem `(∂t/∂y) v = q`, solved by forward
//! substitution through the stored trace, and the sensitivity action `J w`.

use crate::error::{EtdError, Result};
use crate::forward::{ForwardTrace, Mode};
use crate::linalg::{add_assign, axpy, zeros, CVec, C64};
use crate::operator::{exp_term, DerivKit, KitCache};
use crate::problem::SemilinearProblem;
use crate::tableau::Scheme;

/// Sources for every block row: `initial` for `v_0`, `stages[k][i]` for
/// `V_{k+1,i}` and `states[k]` for `v_{k+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSource {
    pub initial: CVec,
    pub stages: Vec<Vec<CVec>>,
    pub states: Vec<CVec>,
}

impl TangentSource {
    pub fn zeros(trace: &ForwardTrace) -> Self {
        let n = trace.states[0].len();
        let k = trace.num_steps();
        Self { initial: zeros(n), stages: vec![vec![zeros(n); trace.tableau.s]; k], states: vec![zeros(n); k] }
    }

    fn check(&self, trace: &ForwardTrace) -> Result<()> {
        let n = trace.states[0].len();
        let ok = self.initial.len() == n
            && self.states.len() == trace.num_steps()
            && self.stages.len() == trace.num_steps()
            && self.states.iter().all(|v| v.len() == n)
            && self.stages.iter().all(|s| s.len() == trace.tableau.s && s.iter().all(|v| v.len() == n));
        if ok {
            Ok(())
        } else {
            Err(EtdError::Dimension("tangent source does not match the trace".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentSolution {
    pub states: Vec<CVec>,
    pub stages: Vec<Vec<CVec>>,
}

pub(crate) fn state_terms_active(trace: &ForwardTrace, problem: &dyn SemilinearProblem) -> bool {
    trace.mode == Mode::Rosenbrock && problem.depends_on_state()
}

/// Linearized step `k` for any tableau.
pub fn linearized_step(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    k: usize,
    kit: Option<&DerivKit>,
    vk: &[C64],
    stage_src: &[CVec],
    state_src: &[C64],
) -> Result<(Vec<CVec>, CVec)> {
    let tab = &trace.tableau;
    let op = &trace.operators[k];
    let tau = C64::new(op.tau, 0.0);
    let yk = &trace.states[k];
    let at_op = trace.operator_point(k);
    let dl = |v: &[C64], d: &CVec| problem.op_dyk(&at_op, v, d);
    let dir = vk.to_vec();
    let mut stages: Vec<CVec> = Vec::with_capacity(tab.s);
    for i in 0..tab.s {
        let mut arg = op.phi(0, tab.c[i], vk)?;
        for (j, aij) in tab.a[i].iter().enumerate() {
            if !aij.is_empty() {
                axpy(tau, &op.combo(aij, &stages[j])?, &mut arg);
            }
        }
        if let Some(kit) = kit {
            if let Some(e) = exp_term(tab.c[i]) {
                add_assign(&mut arg, &kit.forward(&e, yk, &dl, &dir)?);
            }
            for (j, aij) in tab.a[i].iter().enumerate() {
                if !aij.is_empty() {
                    axpy(tau, &kit.forward(aij, &trace.stages[k][j], &dl, &dir)?, &mut arg);
                }
            }
        }
        let at = trace.stage_point(k, i);
        let ys = &trace.stage_args[k][i];
        let mut v = stage_src[i].clone();
        add_assign(&mut v, &problem.n_dy(&at, ys, &arg));
        if kit.is_some() {
            add_assign(&mut v, &problem.n_dyk(&at, ys, vk));
        }
        stages.push(v);
    }
    let mut next = state_src.to_vec();
    add_assign(&mut next, &op.phi(0, 1.0, vk)?);
    for (i, bi) in tab.b.iter().enumerate() {
        if !bi.is_empty() {
            axpy(tau, &op.combo(bi, &stages[i])?, &mut next);
        }
    }
    if let Some(kit) = kit {
        add_assign(&mut next, &kit.forward(&exp_term(1.0).expect("c = 1"), yk, &dl, &dir)?);
        for (i, bi) in tab.b.iter().enumerate() {
            if !bi.is_empty() {
                axpy(tau, &kit.forward(bi, &trace.stages[k][i], &dl, &dir)?, &mut next);
            }
        }
    }
    Ok((stages, next))
}

/// The Krogstad step written out term by term.
pub fn linearized_step_krogstad(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    k: usize,
    kit: Option<&DerivKit>,
    vk: &[C64],
    q_stage: &[CVec],
    q: &[C64],
) -> Result<(Vec<CVec>, CVec)> {
    if trace.tableau.scheme != Scheme::Krogstad {
        return Err(EtdError::InvalidInput(format!("expected a Krogstad trace, got {}", trace.tableau.scheme)));
    }
    use crate::tableau::PhiTerm as T;
    let op = &trace.operators[k];
    let tau = op.tau;
    let h = 0.5;
    let yk = &trace.states[k];
    let ys = &trace.stages[k];
    let at_op = trace.operator_point(k);
    let dl = |v: &[C64], d: &CVec| problem.op_dyk(&at_op, v, d);
    let dir = vk.to_vec();
    let phi = |ell: usize, c: f64, w: &[C64]| op.phi(ell, c, w);
    let lin = |a: &[(f64, CVec)]| -> CVec {
        let mut out = zeros(vk.len());
        for (w, x) in a {
            axpy(C64::new(*w, 0.0), x, &mut out);
        }
        out
    };
    // ∂/∂y_k of weight·φ_ℓ(cτL(y_k)) applied to a fixed vector.
    let d = |ell: usize, c: f64, weight: f64, w: &[C64]| -> Result<CVec> {
        match kit {
            Some(kit) => kit.forward(&[T { ell, node_scale: c, weight }], w, &dl, &dir),
            None => Ok(zeros(w.len())),
        }
    };
    let stage = |i: usize, arg: &[C64]| -> CVec {
        let at = trace.stage_point(k, i);
        let a = &trace.stage_args[k][i];
        let mut v = q_stage[i].clone();
        add_assign(&mut v, &problem.n_dy(&at, a, arg));
        if kit.is_some() {
            add_assign(&mut v, &problem.n_dyk(&at, a, vk));
        }
        v
    };

    let v1 = stage(0, vk);

    let arg2 = lin(&[
        (1.0, phi(0, h, vk)?),
        (0.5 * tau, phi(1, h, &v1)?),
        (1.0, d(0, h, 1.0, yk)?),
        (tau, d(1, h, 0.5, &ys[0])?),
    ]);
    let v2 = stage(1, &arg2);

    let arg3 = lin(&[
        (1.0, phi(0, h, vk)?),
        (0.5 * tau, phi(1, h, &v1)?),
        (-tau, phi(2, h, &v1)?),
        (tau, phi(2, h, &v2)?),
        (1.0, d(0, h, 1.0, yk)?),
        (tau, d(1, h, 0.5, &ys[0])?),
        (tau, d(2, h, -1.0, &ys[0])?),
        (tau, d(2, h, 1.0, &ys[1])?),
    ]);
    let v3 = stage(2, &arg3);

    let arg4 = lin(&[
        (1.0, phi(0, 1.0, vk)?),
        (tau, phi(1, 1.0, &v1)?),
        (-2.0 * tau, phi(2, 1.0, &v1)?),
        (2.0 * tau, phi(2, 1.0, &v3)?),
        (1.0, d(0, 1.0, 1.0, yk)?),
        (tau, d(1, 1.0, 1.0, &ys[0])?),
        (tau, d(2, 1.0, -2.0, &ys[0])?),
        (tau, d(2, 1.0, 2.0, &ys[2])?),
    ]);
    let v4 = stage(3, &arg4);

    let mut next = lin(&[
        (1.0, q.to_vec()),
        (1.0, phi(0, 1.0, vk)?),
        (tau, phi(1, 1.0, &v1)?),
        (-3.0 * tau, phi(2, 1.0, &v1)?),
        (4.0 * tau, phi(3, 1.0, &v1)?),
        (2.0 * tau, phi(2, 1.0, &v2)?),
        (-4.0 * tau, phi(3, 1.0, &v2)?),
        (2.0 * tau, phi(2, 1.0, &v3)?),
        (-4.0 * tau, phi(3, 1.0, &v3)?),
        (-tau, phi(2, 1.0, &v4)?),
        (4.0 * tau, phi(3, 1.0, &v4)?),
    ]);
    if kit.is_some() {
        let braces = lin(&[
            (1.0, d(0, 1.0, 1.0, yk)?),
            (tau, d(1, 1.0, 1.0, &ys[0])?),
            (tau, d(2, 1.0, -3.0, &ys[0])?),
            (tau, d(3, 1.0, 4.0, &ys[0])?),
            (tau, d(2, 1.0, 2.0, &ys[1])?),
            (tau, d(3, 1.0, -4.0, &ys[1])?),
            (tau, d(2, 1.0, 2.0, &ys[2])?),
            (tau, d(3, 1.0, -4.0, &ys[2])?),
            (tau, d(2, 1.0, -1.0, &ys[3])?),
            (tau, d(3, 1.0, 4.0, &ys[3])?),
        ]);
        add_assign(&mut next, &braces);
    }
    Ok((vec![v1, v2, v3, v4], next))
}

/// Forward substitution for the whole trajectory.
pub fn solve_linearized(trace: &ForwardTrace, problem: &dyn SemilinearProblem, source: &TangentSource) -> Result<TangentSolution> {
    source.check(trace)?;
    let braces = state_terms_active(trace, problem);
    let mut kits = KitCache::default();
    let mut states = vec![source.initial.clone()];
    let mut stages = Vec::with_capacity(trace.num_steps());
    for k in 0..trace.num_steps() {
        let kit = if braces { Some(kits.get(&trace.operators[k])?) } else { None };
        let (v, next) = linearized_step(trace, problem, k, kit, &states[k], &source.stages[k], &source.states[k])?;
        stages.push(v);
        states.push(next);
    }
    Ok(TangentSolution { states, stages })
}

/// Source `−(∂t/∂m) w`: derivative of every step with respect to `m`.
pub fn sensitivity_source(trace: &ForwardTrace, problem: &dyn SemilinearProblem, w: &[f64]) -> Result<TangentSource> {
    if w.len() != problem.model_dim() {
        return Err(EtdError::Dimension(format!("direction has {} entries, model {}", w.len(), problem.model_dim())));
    }
    let tab = &trace.tableau;
    let mut src = TangentSource::zeros(trace);
    let mut kits = KitCache::default();
    let dir = w.to_vec();
    for k in 0..trace.num_steps() {
        let tau = C64::new(trace.grid.steps[k], 0.0);
        let yk = &trace.states[k];
        let at_op = trace.operator_point(k);
        let dl = |v: &[C64], d: &Vec<f64>| problem.op_dm(&at_op, v, d);
        let kit = if problem.depends_on_model() { Some(kits.get(&trace.operators[k])?) } else { None };
        for i in 0..tab.s {
            let at = trace.stage_point(k, i);
            let ys = &trace.stage_args[k][i];
            let mut qi = problem.n_dm(&at, ys, w);
            if let Some(kit) = kit {
                let mut dl_arg = zeros(yk.len());
                if let Some(e) = exp_term(tab.c[i]) {
                    add_assign(&mut dl_arg, &kit.forward(&e, yk, &dl, &dir)?);
                }
                for (j, aij) in tab.a[i].iter().enumerate() {
                    if !aij.is_empty() {
                        axpy(tau, &kit.forward(aij, &trace.stages[k][j], &dl, &dir)?, &mut dl_arg);
                    }
                }
                add_assign(&mut qi, &problem.n_dy(&at, ys, &dl_arg));
            }
            src.stages[k][i] = qi;
        }
        if let Some(kit) = kit {
            let mut q = kit.forward(&exp_term(1.0).expect("c = 1"), yk, &dl, &dir)?;
            for (i, bi) in tab.b.iter().enumerate() {
                if !bi.is_empty() {
                    axpy(tau, &kit.forward(bi, &trace.stages[k][i], &dl, &dir)?, &mut q);
                }
            }
            src.states[k] = q;
        }
    }
    Ok(src)
}

/// `J w`: observations of the tangent at `obs_steps`, concatenated.
pub fn sensitivity_apply(
    trace: &ForwardTrace,
    problem: &dyn SemilinearProblem,
    obs_steps: &[usize],
    w: &[f64],
) -> Result<Vec<f64>> {
    let src = sensitivity_source(trace, problem, w)?;
    let sol = solve_linearized(trace, problem, &src)?;
    let mut out = Vec::new();
    for &k in obs_steps {
        let v = sol.states.get(k).ok_or_else(|| EtdError::Dimension(format!("observation step {k} beyond trace")))?;
        out.extend(problem.observe(v));
    }
    Ok(out)
}
