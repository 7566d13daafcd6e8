//! The semilinear model `y' = L y + n(y, m, t)` and everything solvers need
//! to differentiate it.

use crate::error::{EtdError, Result};
use crate::linalg::{dot, dot_real, norm, CVec, C64};
use crate::phi::{matvec, matvec_adj, SpectrumBound};
use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Stiff linear part. Diagonal operators act on coefficients that are
/// already in the eigenbasis (spectral space for pseudospectral models).
#[derive(Clone, Debug)]
pub enum LinearOperator {
    Diagonal { eigs: CVec },
    Dense { matrix: DMatrix<C64>, spectrum: SpectrumBound },
}

impl LinearOperator {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal { eigs } => eigs.len(),
            Self::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn apply(&self, v: &[C64]) -> CVec {
        match self {
            Self::Diagonal { eigs } => eigs.iter().zip(v).map(|(l, x)| l * x).collect(),
            Self::Dense { matrix, .. } => matvec(matrix, v),
        }
    }

    pub fn apply_adj(&self, z: &[C64]) -> CVec {
        match self {
            Self::Diagonal { eigs } => eigs.iter().zip(z).map(|(l, x)| l.conj() * x).collect(),
            Self::Dense { matrix, .. } => matvec_adj(matrix, z),
        }
    }

    pub fn spectrum(&self) -> SpectrumBound {
        match self {
            Self::Diagonal { eigs } => SpectrumBound::from_values(eigs),
            Self::Dense { spectrum, .. } => *spectrum,
        }
    }

    /// Dense operator with a spectrum bound: the exact eigenvalue range for
    /// Hermitian matrices, Gershgorin discs otherwise.
    pub fn dense_bounded(matrix: DMatrix<C64>) -> Self {
        let n = matrix.nrows();
        let scale = matrix.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let hermitian = (0..n).all(|i| (0..=i).all(|j| (matrix[(i, j)] - matrix[(j, i)].conj()).norm() <= 1e-12 * scale));
        if hermitian && n > 0 {
            let ev = matrix.clone().symmetric_eigenvalues();
            let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = 1e-10 * scale;
            return Self::Dense { matrix, spectrum: SpectrumBound::real(lo - pad, hi + pad) };
        }
        let mut b = SpectrumBound {
            re_min: f64::INFINITY,
            re_max: f64::NEG_INFINITY,
            im_min: f64::INFINITY,
            im_max: f64::NEG_INFINITY,
        };
        for i in 0..n {
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| matrix[(i, j)].norm()).sum();
            let d = matrix[(i, i)];
            b.re_min = b.re_min.min(d.re - r);
            b.re_max = b.re_max.max(d.re + r);
            b.im_min = b.im_min.min(d.im - r);
            b.im_max = b.im_max.max(d.im + r);
        }
        Self::Dense { matrix, spectrum: b }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub steps: Vec<f64>,
}

impl TimeGrid {
    /// `t_k = k τ`; `t_final` must be a whole number of steps.
    pub fn uniform(t_final: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !(t_final >= 0.0) {
            return Err(EtdError::InvalidInput(format!("bad grid T={t_final} tau={tau}")));
        }
        let k = (t_final / tau).round();
        if (k * tau - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(EtdError::InvalidInput(format!("T={t_final} is not a multiple of tau={tau}")));
        }
        let k = k as usize;
        Ok(Self { times: (0..=k).map(|i| i as f64 * tau).collect(), steps: vec![tau; k] })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EtdError::InvalidInput("time grid must be nonempty and strictly increasing".into()));
        }
        let steps = times.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { times, steps })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Index of the grid point at `t`, within a small relative tolerance.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let scale = self.times.last().copied().unwrap_or(1.0).abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * scale)
            .ok_or(EtdError::Alignment { time: t })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub segments: Vec<(String, usize)>,
}

impl ModelLayout {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for (n, len) in &self.segments {
            if n == name {
                return Some(start..start + len);
            }
            start += len;
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub values: Vec<f64>,
    pub layout: ModelLayout,
}

impl ModelVector {
    pub fn new(values: Vec<f64>, layout: ModelLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(EtdError::Dimension(format!("{} values for layout of {}", values.len(), layout.len())));
        }
        Ok(Self { values, layout })
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }
}

/// Where a step's operator and nonlinearity are evaluated: model `m`,
/// linearization state `yk` (ignored by state-independent problems) and
/// time `t`.
#[derive(Clone, Copy, Debug)]
pub struct EvalPoint<'a> {
    pub m: &'a [f64],
    pub yk: &'a [C64],
    pub t: f64,
}

/// Adjoints are with respect to `⟨a, b⟩ = Σ conj(a_i) b_i` on states and the
/// Euclidean product on real model vectors, so model-space adjoints return
/// `Re(A^H z)`.
pub trait SemilinearProblem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn model_layout(&self) -> &ModelLayout;
    fn model_dim(&self) -> usize {
        self.model_layout().len()
    }
    /// L is rebuilt from the current state (Rosenbrock linearization).
    fn depends_on_state(&self) -> bool;
    /// L depends on the model parameters.
    fn depends_on_model(&self) -> bool;

    fn build_operator(&self, at: &EvalPoint) -> Result<LinearOperator>;
    fn n(&self, at: &EvalPoint, y: &[C64]) -> CVec;
    fn n_dy(&self, at: &EvalPoint, y: &[C64], v: &[C64]) -> CVec;
    fn n_dy_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> CVec;
    fn n_dm(&self, at: &EvalPoint, y: &[C64], w: &[f64]) -> CVec;
    fn n_dm_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> Vec<f64>;

    /// ∂n/∂y_k; zero unless the nonlinearity depends on the linearization point.
    fn n_dyk(&self, _at: &EvalPoint, y: &[C64], _v: &[C64]) -> CVec {
        vec![C64::new(0.0, 0.0); y.len()]
    }
    fn n_dyk_adj(&self, _at: &EvalPoint, y: &[C64], _z: &[C64]) -> CVec {
        vec![C64::new(0.0, 0.0); y.len()]
    }
    /// ∂(L v)/∂y_k · dir with `v` fixed.
    fn op_dyk(&self, _at: &EvalPoint, v: &[C64], _dir: &[C64]) -> CVec {
        vec![C64::new(0.0, 0.0); v.len()]
    }
    fn op_dyk_adj(&self, _at: &EvalPoint, v: &[C64], _z: &[C64]) -> CVec {
        vec![C64::new(0.0, 0.0); v.len()]
    }
    /// ∂(L v)/∂m · dir with `v` fixed.
    fn op_dm(&self, _at: &EvalPoint, v: &[C64], _dir: &[f64]) -> CVec {
        vec![C64::new(0.0, 0.0); v.len()]
    }
    fn op_dm_adj(&self, _at: &EvalPoint, _v: &[C64], _z: &[C64]) -> Vec<f64> {
        vec![0.0; self.model_dim()]
    }

    /// Linear observation of a state (real data).
    fn observe(&self, y: &[C64]) -> Vec<f64>;
    fn observe_adjoint(&self, u: &[f64]) -> CVec;

    /// A representative state and model for randomized checks.
    fn sample_point(&self, rng: &mut dyn RngCore) -> (CVec, Vec<f64>) {
        let y = (0..self.state_dim())
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let m = (0..self.model_dim()).map(|_| rng.sample(StandardNormal)).collect();
        (y, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Adjoint,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub kind: CheckKind,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
}

pub const ADJOINT_TOL: f64 = 1e-10;
pub const FD_TOL: f64 = 1e-6;

fn randc(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    (0..n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
}

fn randr(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn rel_vec_gap(a: &[C64], b: &[C64]) -> f64 {
    let d: CVec = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-300)
}

struct Tracker {
    entries: Vec<CheckEntry>,
}

impl Tracker {
    fn record(&mut self, name: &str, kind: CheckKind, gap: f64) {
        let tolerance = match kind {
            CheckKind::Adjoint => ADJOINT_TOL,
            CheckKind::FiniteDifference => FD_TOL,
        };
        if let Some(e) = self.entries.iter_mut().find(|e| e.name == name) {
            e.max_discrepancy = e.max_discrepancy.max(gap);
            e.passed = e.max_discrepancy <= tolerance;
        } else {
            self.entries.push(CheckEntry {
                name: name.into(),
                kind,
                max_discrepancy: gap,
                tolerance,
                passed: gap <= tolerance,
            });
        }
    }
}

fn shift(y: &[C64], v: &[C64], eps: f64) -> CVec {
    y.iter().zip(v).map(|(a, b)| a + eps * b).collect()
}

fn shift_real(y: &[f64], v: &[f64], eps: f64) -> Vec<f64> {
    y.iter().zip(v).map(|(a, b)| a + eps * b).collect()
}

fn central(plus: CVec, minus: CVec, eps: f64) -> CVec {
    plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
}

/// Adjoint-pair and finite-difference checks on every derivative callback.
pub fn check_problem(problem: &dyn SemilinearProblem, samples: usize, seed: u64) -> ProblemReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.state_dim();
    let nm = problem.model_dim();
    let mut tr = Tracker { entries: Vec::new() };
    let eps = 1e-5;
    for _ in 0..samples {
        let (y, m) = problem.sample_point(&mut rng);
        let (yk, _) = problem.sample_point(&mut rng);
        let at = EvalPoint { m: &m, yk: &yk, t: 0.0 };
        let v = randc(&mut rng, n);
        let z = randc(&mut rng, n);
        let w = randr(&mut rng, nm);

        let a = dot(&problem.n_dy(&at, &y, &v), &z);
        let b = dot(&v, &problem.n_dy_adj(&at, &y, &z));
        tr.record("n_dy adjoint", CheckKind::Adjoint, rel_gap(a.re, b.re).max(rel_gap(a.im, b.im)));
        let fd = central(problem.n(&at, &shift(&y, &v, eps)), problem.n(&at, &shift(&y, &v, -eps)), eps);
        tr.record("n_dy finite difference", CheckKind::FiniteDifference, rel_vec_gap(&problem.n_dy(&at, &y, &v), &fd));

        let a = dot(&problem.n_dm(&at, &y, &w), &z).re;
        let b = dot_real(&w, &problem.n_dm_adj(&at, &y, &z));
        tr.record("n_dm adjoint", CheckKind::Adjoint, rel_gap(a, b));
        let (mp, mm) = (shift_real(&m, &w, eps), shift_real(&m, &w, -eps));
        let fd = central(
            problem.n(&EvalPoint { m: &mp, ..at }, &y),
            problem.n(&EvalPoint { m: &mm, ..at }, &y),
            eps,
        );
        tr.record("n_dm finite difference", CheckKind::FiniteDifference, rel_vec_gap(&problem.n_dm(&at, &y, &w), &fd));

        let d = problem.observe(&y);
        let u = randr(&mut rng, d.len());
        let a = dot_real(&problem.observe(&v), &u);
        let b = dot(&v, &problem.observe_adjoint(&u)).re;
        tr.record("observe adjoint", CheckKind::Adjoint, rel_gap(a, b));

        if problem.depends_on_state() {
            let a = dot(&problem.n_dyk(&at, &y, &v), &z);
            let b = dot(&v, &problem.n_dyk_adj(&at, &y, &z));
            tr.record("n_dyk adjoint", CheckKind::Adjoint, rel_gap(a.re, b.re).max(rel_gap(a.im, b.im)));
            let (kp, km) = (shift(&yk, &v, eps), shift(&yk, &v, -eps));
            let fd = central(
                problem.n(&EvalPoint { yk: &kp, ..at }, &y),
                problem.n(&EvalPoint { yk: &km, ..at }, &y),
                eps,
            );
            tr.record("n_dyk finite difference", CheckKind::FiniteDifference, rel_vec_gap(&problem.n_dyk(&at, &y, &v), &fd));

            let dir = randc(&mut rng, n);
            let a = dot(&problem.op_dyk(&at, &v, &dir), &z);
            let b = dot(&dir, &problem.op_dyk_adj(&at, &v, &z));
            tr.record("op_dyk adjoint", CheckKind::Adjoint, rel_gap(a.re, b.re).max(rel_gap(a.im, b.im)));
            let (kp, km) = (shift(&yk, &dir, eps), shift(&yk, &dir, -eps));
            match (
                problem.build_operator(&EvalPoint { yk: &kp, ..at }),
                problem.build_operator(&EvalPoint { yk: &km, ..at }),
            ) {
                (Ok(lp), Ok(lm)) => {
                    let fd = central(lp.apply(&v), lm.apply(&v), eps);
                    tr.record("op_dyk finite difference", CheckKind::FiniteDifference, rel_vec_gap(&problem.op_dyk(&at, &v, &dir), &fd));
                }
                _ => tr.record("op_dyk finite difference", CheckKind::FiniteDifference, f64::INFINITY),
            }

            // The splitting f = L(y_k) y + n(y; y_k) must not depend on y_k.
            let f = |yk: &[C64]| -> Option<CVec> {
                let p = EvalPoint { yk, ..at };
                let l = problem.build_operator(&p).ok()?;
                let mut out = l.apply(&y);
                crate::linalg::add_assign(&mut out, &problem.n(&p, &y));
                Some(out)
            };
            let gap = match (f(&yk), f(&y)) {
                (Some(a), Some(b)) => rel_vec_gap(&a, &b),
                _ => f64::INFINITY,
            };
            tr.record("splitting identity", CheckKind::FiniteDifference, gap);
        }

        if problem.depends_on_model() {
            let a = dot(&problem.op_dm(&at, &v, &w), &z).re;
            let b = dot_real(&w, &problem.op_dm_adj(&at, &v, &z));
            tr.record("op_dm adjoint", CheckKind::Adjoint, rel_gap(a, b));
            match (
                problem.build_operator(&EvalPoint { m: &mp, ..at }),
                problem.build_operator(&EvalPoint { m: &mm, ..at }),
            ) {
                (Ok(lp), Ok(lm)) => {
                    let fd = central(lp.apply(&v), lm.apply(&v), eps);
                    tr.record("op_dm finite difference", CheckKind::FiniteDifference, rel_vec_gap(&problem.op_dm(&at, &v, &w), &fd));
                }
                _ => tr.record("op_dm finite difference", CheckKind::FiniteDifference, f64::INFINITY),
            }
        }
    }
    let passed = tr.entries.iter().all(|e| e.passed);
    ProblemReport { entries: tr.entries, passed }
}
