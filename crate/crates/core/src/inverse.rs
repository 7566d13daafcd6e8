//! Objective `Ω = M + β Σ_segments TV(m_seg)` and a projected L-BFGS
//! optimizer for box constraints.

use crate::adjoint::misfit_gradient;
use crate::error::{EtdError, Result};
use crate::forward::{integrate, Mode};
use crate::linalg::CVec;
use crate::observation::ObservationSet;
use crate::phi::PhiBackendConfig;
use crate::problem::{SemilinearProblem, TimeGrid};
use crate::tableau::TableauSpec;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// Smoothed total variation with periodic forward differences:
/// `Σ h(|∇m|)`, `h(t) = t²/(2ε)` for `t ≤ ε`, else `t − ε/2`.
pub fn tv_huber(m: &[f64], nx: usize, ny: usize, eps: f64) -> (f64, Vec<f64>) {
    assert_eq!(m.len(), nx * ny, "field size");
    let mut value = 0.0;
    let mut grad = vec![0.0; m.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let ex = iy * nx + (ix + 1) % nx;
            let ey = ((iy + 1) % ny) * nx + ix;
            let dx = m[ex] - m[i];
            let dy = m[ey] - m[i];
            let t = (dx * dx + dy * dy).sqrt();
            let w = if t <= eps {
                value += t * t / (2.0 * eps);
                1.0 / eps
            } else {
                value += t - eps / 2.0;
                1.0 / t
            };
            grad[i] -= w * (dx + dy);
            grad[ex] += w * dx;
            grad[ey] += w * dy;
        }
    }
    (value, grad)
}

pub fn project(m: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    m.iter().zip(lower).zip(upper).map(|((x, lo), hi)| x.clamp(*lo, *hi)).collect()
}

/// `‖m − P(m − g)‖`: zero exactly at box-constrained stationary points.
pub fn projected_gradient_norm(m: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    m.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((x, gi), (lo, hi))| (x - (x - gi).clamp(*lo, *hi)).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub huber_eps: f64,
    /// `[lower, upper]` per model segment; unlisted segments are unbounded.
    pub bounds: BTreeMap<String, [f64; 2]>,
    pub lbfgs_memory: usize,
    pub max_iters: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        let mut bounds = BTreeMap::new();
        bounds.insert("r".to_string(), [0.01, 2.3]);
        bounds.insert("g".to_string(), [-1.2, 1.2]);
        Self { beta: 10.0, huber_eps: 1e-3, bounds, lbfgs_memory: 20, max_iters: 100 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.huber_eps > 0.0) || self.lbfgs_memory == 0 || self.max_iters == 0 {
            return Err(EtdError::InvalidInput("need beta ≥ 0, huber_eps > 0, lbfgs_memory > 0, max_iters > 0".into()));
        }
        for (name, [lo, hi]) in &self.bounds {
            if !(lo <= hi) {
                return Err(EtdError::InvalidInput(format!("bounds for {name}: lower {lo} above upper {hi}")));
            }
        }
        Ok(())
    }

    /// Per-entry bounds for a model layout.
    pub fn box_for(&self, problem: &dyn SemilinearProblem) -> Result<(Vec<f64>, Vec<f64>)> {
        let layout = problem.model_layout();
        for name in self.bounds.keys() {
            if layout.range(name).is_none() {
                return Err(EtdError::InvalidInput(format!("bounds given for unknown segment {name}")));
            }
        }
        let mut lo = Vec::with_capacity(layout.len());
        let mut hi = Vec::with_capacity(layout.len());
        for (name, len) in &layout.segments {
            let [l, h] = self.bounds.get(name).copied().unwrap_or([f64::NEG_INFINITY, f64::INFINITY]);
            lo.extend(std::iter::repeat(l).take(*len));
            hi.extend(std::iter::repeat(h).take(*len));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub misfit: f64,
    pub reg: f64,
    pub gradient: Vec<f64>,
}

/// Everything needed to evaluate `Ω(m)` with one forward and one adjoint
/// solve.
pub struct Objective<'a> {
    pub problem: &'a dyn SemilinearProblem,
    pub tableau: &'a TableauSpec,
    pub mode: Mode,
    pub phi: &'a PhiBackendConfig,
    pub y0: &'a CVec,
    pub grid: &'a TimeGrid,
    pub observations: &'a ObservationSet,
    pub beta: f64,
    pub huber_eps: f64,
    /// Shape of every model segment for the TV term; `None` treats each
    /// segment as a periodic line.
    pub field_shape: Option<(usize, usize)>,
}

impl Objective<'_> {
    pub fn regularization(&self, m: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; m.len()];
        for (name, len) in &self.problem.model_layout().segments {
            let range = self.problem.model_layout().range(name).expect("segment from layout");
            let (nx, ny) = match self.field_shape {
                Some((nx, ny)) if nx * ny == *len => (nx, ny),
                _ => (*len, 1),
            };
            let (v, g) = tv_huber(&m[range.clone()], nx, ny, self.huber_eps);
            value += v;
            grad[range].copy_from_slice(&g);
        }
        (value, grad)
    }

    pub fn eval(&self, m: &[f64]) -> Result<Evaluation> {
        let trace = integrate(self.problem, self.tableau, self.y0, m, self.grid, self.mode, self.phi)?;
        let mg = misfit_gradient(&trace, self.problem, self.observations)?;
        let mut gradient = mg.gradient;
        let mut reg = 0.0;
        if self.beta > 0.0 {
            let (r, rg) = self.regularization(m);
            reg = r;
            for (g, x) in gradient.iter_mut().zip(rg) {
                *g += self.beta * x;
            }
        }
        Ok(Evaluation { value: mg.value + self.beta * reg, misfit: mg.value, reg, gradient })
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the projected gradient norm falls below this.
    pub gtol: f64,
    pub armijo: f64,
    /// Curvature tolerance that triggers one cubic refinement of an
    /// accepted full step.
    pub curvature: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 20, max_iters: 100, gtol: 1e-10, armijo: 1e-4, curvature: 0.1, max_backtracks: 30 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub misfit: f64,
    pub reg: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub m: Vec<f64>,
    pub value: Evaluation,
    pub log: Vec<IterRecord>,
    pub status: LbfgsStatus,
}

fn dotr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizer of the cubic through `(0, f0)` and `(a, fa)` with slopes `d0`
/// and `da`.
fn cubic_step(a: f64, f0: f64, d0: f64, fa: f64, da: f64) -> Option<f64> {
    let d1 = d0 + da - 3.0 * (fa - f0) / a;
    let disc = d1 * d1 - d0 * da;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = disc.sqrt();
    let t = a - a * (da + d2 - d1) / (da - d0 + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Projected L-BFGS: two-loop recursion on the free variables, trial points
/// projected onto the box, Armijo backtracking with one cubic step followed
/// by bisection. An accepted unprojected step that leaves much of the slope
/// gets one cubic refinement, which is exact on quadratics.
pub fn lbfgs_bounded(
    f: &mut dyn FnMut(&[f64]) -> Result<Evaluation>,
    m0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsResult> {
    if lower.len() != m0.len() || upper.len() != m0.len() {
        return Err(EtdError::Dimension("bounds do not match the model".into()));
    }
    let mut x = project(m0, lower, upper);
    let mut cur = f(&x)?;
    let mut log = vec![IterRecord {
        iter: 0,
        objective: cur.value,
        misfit: cur.misfit,
        reg: cur.reg,
        grad_norm: projected_gradient_norm(&x, &cur.gradient, lower, upper),
        step: 0.0,
    }];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut status = LbfgsStatus::MaxIterations;
    for iter in 1..=opts.max_iters {
        if log.last().expect("log starts non-empty").grad_norm <= opts.gtol {
            status = LbfgsStatus::Converged;
            break;
        }
        let g = &cur.gradient;
        let active: Vec<bool> = (0..x.len())
            .map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0))
            .collect();
        let gf: Vec<f64> = g.iter().zip(&active).map(|(v, a)| if *a { 0.0 } else { *v }).collect();
        let mut d = two_loop(&pairs, &gf);
        d.iter_mut().zip(&active).for_each(|(v, a)| if *a { *v = 0.0 } else { *v = -*v });
        if dotr(&d, g) >= 0.0 {
            pairs.clear();
            d = gf.iter().map(|v| -v).collect();
        }
        let mut alpha = if pairs.is_empty() { (1.0 / dotr(&d, &d).sqrt()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for bt in 0..opts.max_backtracks {
            let trial = project(&x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect::<Vec<_>>(), lower, upper);
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dotr(g, &s);
            if decrease >= 0.0 {
                break;
            }
            match f(&trial) {
                Ok(e) if e.value.is_finite() && e.value <= cur.value + opts.armijo * decrease => {
                    accepted = Some((trial, e, alpha));
                    break;
                }
                Ok(e) if bt == 0 && e.value.is_finite() => {
                    let da = dotr(&e.gradient, &d);
                    let next = cubic_step(alpha, cur.value, dotr(g, &d), e.value, da)
                        .filter(|t| *t > 0.1 * alpha && *t < 0.5 * alpha)
                        .unwrap_or(0.5 * alpha);
                    alpha = next;
                }
                _ => alpha *= 0.5,
            }
        }
        let Some((mut trial, mut e, mut step)) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        let d0 = dotr(g, &d);
        let da = dotr(&e.gradient, &d);
        let unprojected = trial.iter().zip(&x).zip(&d).all(|((t, xi), di)| *t == xi + step * di);
        if unprojected && da.abs() > opts.curvature * d0.abs() {
            if let Some(t) = cubic_step(step, cur.value, d0, e.value, da).filter(|t| *t > 0.1 * step && *t < 4.0 * step) {
                let t_trial = project(&x.iter().zip(&d).map(|(a, b)| a + t * b).collect::<Vec<_>>(), lower, upper);
                let dec = dotr(g, &t_trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
                if let Ok(te) = f(&t_trial) {
                    if te.value.is_finite() && te.value < e.value && te.value <= cur.value + opts.armijo * dec {
                        (trial, e, step) = (t_trial, te, t);
                    }
                }
            }
        }
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = e.gradient.iter().zip(&cur.gradient).map(|(a, b)| a - b).collect();
        let sy = dotr(&s, &y);
        if sy > 1e-10 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, sy));
        }
        x = trial;
        cur = e;
        log.push(IterRecord {
            iter,
            objective: cur.value,
            misfit: cur.misfit,
            reg: cur.reg,
            grad_norm: projected_gradient_norm(&x, &cur.gradient, lower, upper),
            step,
        });
    }
    if status == LbfgsStatus::MaxIterations && log.last().expect("non-empty").grad_norm <= opts.gtol {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsResult { m: x, value: cur, log, status })
}

/// `H g` for the inverse-Hessian approximation held in `pairs`.
fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, sy) in pairs.iter().rev() {
        let a = dotr(s, &q) / sy;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((_, y, sy)) = pairs.back() {
        let gamma = sy / dotr(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, sy), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = dotr(y, &q) / sy;
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}
