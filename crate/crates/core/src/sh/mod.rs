//! Pseudospectral Swift-Hohenberg on a periodic box,
//! `u_t = −(1 + Δ)² u + r u + g u² − u³`, with spatially varying `r`, `g`.
//!
//! The state is the vector of spectral coefficients `ŷ = F u`. The fixed-L
//! form keeps the diagonal symbol `−(1 − |k|²)²`; the Rosenbrock form moves
//! the Jacobian of the reaction into a dense `L_k`.

mod fft;
pub mod io;

pub use fft::Fft2;

use crate::error::{EtdError, Result};
use crate::forward::{integrate, ForwardTrace, Mode};
use crate::linalg::{CVec, C64};
use crate::observation::ObservationSet;
use crate::phi::PhiBackendConfig;
use crate::problem::{EvalPoint, LinearOperator, ModelLayout, ModelVector, SemilinearProblem, TimeGrid};
use crate::tableau::TableauSpec;
use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest state dimension for the dense Rosenbrock operator.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    /// `1` gives the one-dimensional variant.
    pub ny: usize,
    pub t_final: f64,
    pub tau: f64,
    pub seed: u64,
}

impl ShConfig {
    /// Square `n × n` grid at the resolution of a 128² grid on a 40π box.
    pub fn desk(n: usize, t_final: f64, tau: f64, seed: u64) -> Self {
        let l = 40.0 * PI * n as f64 / 128.0;
        Self { lx: l, ly: l, nx: n, ny: n, t_final, tau, seed }
    }

    /// One-dimensional line of `n` points with the same resolution.
    pub fn line(n: usize, t_final: f64, tau: f64, seed: u64) -> Self {
        Self { ny: 1, ly: 1.0, ..Self::desk(n, t_final, tau, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |n: usize| n >= 8 && n.is_power_of_two();
        if !pow2(self.nx) || !(self.ny == 1 || pow2(self.ny)) {
            return Err(EtdError::InvalidInput(format!("grid {}x{}: sizes must be powers of two ≥ 8 (ny may be 1)", self.nx, self.ny)));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return Err(EtdError::InvalidInput("domain lengths must be positive".into()));
        }
        if !(self.tau > 0.0 && self.t_final >= 0.0) {
            return Err(EtdError::InvalidInput("need tau > 0 and t_final ≥ 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_final, self.tau)
    }
}

/// Wavenumbers in transform order and the symbol of `−(1 + Δ)²`.
#[derive(Clone, Debug)]
pub struct SpectralGrid {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub eigs: Vec<f64>,
}

fn wavenumbers(n: usize, l: f64) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI / l * if j < n / 2 { j as f64 } else { j as f64 - n as f64 }).collect()
}

impl SpectralGrid {
    pub fn new(cfg: &ShConfig) -> Self {
        let kx = wavenumbers(cfg.nx, cfg.lx);
        let ky = if cfg.ny == 1 { vec![0.0] } else { wavenumbers(cfg.ny, cfg.ly) };
        let mut eigs = Vec::with_capacity(cfg.len());
        for y in &ky {
            for x in &kx {
                let s = 1.0 - (x * x + y * y);
                eigs.push(-s * s);
            }
        }
        Self { kx, ky, eigs }
    }
}

#[derive(Clone, Debug)]
pub struct ShProblem {
    pub cfg: ShConfig,
    pub grid: SpectralGrid,
    pub fft: Fft2,
    layout: ModelLayout,
    rosenbrock: bool,
}

pub fn build_sh_problem(cfg: &ShConfig) -> Result<ShProblem> {
    cfg.validate()?;
    let n = cfg.len();
    Ok(ShProblem {
        cfg: cfg.clone(),
        grid: SpectralGrid::new(cfg),
        fft: Fft2::new(cfg.nx, cfg.ny),
        layout: ModelLayout { segments: vec![("r".into(), n), ("g".into(), n)] },
        rosenbrock: false,
    })
}

pub fn build_sh_rosenbrock_problem(cfg: &ShConfig) -> Result<ShProblem> {
    if cfg.len() > MAX_DENSE_DIM {
        return Err(EtdError::Unsupported(format!(
            "dense Rosenbrock operator limited to {MAX_DENSE_DIM} unknowns, grid has {}",
            cfg.len()
        )));
    }
    Ok(ShProblem { rosenbrock: true, ..build_sh_problem(cfg)? })
}

fn zip3(a: &[C64], b: &[C64], f: impl Fn(C64, C64) -> C64) -> CVec {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

impl ShProblem {
    pub fn is_rosenbrock(&self) -> bool {
        self.rosenbrock
    }

    fn r<'a>(&self, m: &'a [f64]) -> &'a [f64] {
        &m[..self.cfg.len()]
    }

    fn g<'a>(&self, m: &'a [f64]) -> &'a [f64] {
        &m[self.cfg.len()..]
    }

    /// Real space.
    pub fn to_real(&self, y: &[C64]) -> CVec {
        self.fft.inverse(y)
    }

    pub fn to_spectral(&self, u: &[f64]) -> CVec {
        self.fft.forward_real(u)
    }

    /// Real part of the real-space field.
    pub fn field(&self, y: &[C64]) -> Vec<f64> {
        self.to_real(y).iter().map(|v| v.re).collect()
    }

    /// Largest imaginary part of the real-space field.
    pub fn imag_residue(&self, y: &[C64]) -> f64 {
        self.to_real(y).iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// Unit-variance Gaussian real-space noise, in spectral coefficients.
    pub fn initial_state(&self, seed: u64) -> CVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..self.cfg.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.to_spectral(&u)
    }

    /// `F (c ⊙ F⁻¹ v)`
    fn pointwise(&self, c: &[C64], v: &[C64]) -> CVec {
        self.fft.forward(&zip3(c, &self.to_real(v), |a, b| a * b))
    }

    /// `(F diag(c) F⁻¹)^H z = F (conj(c) ⊙ F⁻¹ z)`
    fn pointwise_adj(&self, c: &[C64], z: &[C64]) -> CVec {
        self.fft.forward(&zip3(c, &self.to_real(z), |a, b| a.conj() * b))
    }

    /// `Re(conj(c) ⊙ N F⁻¹ z)`: model-space adjoint of `w ↦ F (c ⊙ w)`.
    fn model_adj(&self, c: &[C64], p: &[C64]) -> Vec<f64> {
        c.iter().zip(p).map(|(a, b)| (a.conj() * b).re).collect()
    }

    fn scaled_back(&self, z: &[C64]) -> CVec {
        let n = self.cfg.len() as f64;
        self.to_real(z).into_iter().map(|v| v * n).collect()
    }

    /// Pointwise coefficient of `∂n/∂y` in real space.
    fn reaction_slope(&self, m: &[f64], u: &[C64], s: Option<&[C64]>) -> CVec {
        let (r, g) = (self.r(m), self.g(m));
        (0..u.len())
            .map(|i| match s {
                None => 2.0 * g[i] * u[i] - 3.0 * u[i] * u[i] + r[i],
                Some(s) => 2.0 * g[i] * (u[i] - s[i]) - 3.0 * u[i] * u[i] + 3.0 * s[i] * s[i],
            })
            .collect()
    }

    /// `F diag(d) F⁻¹` as a dense matrix: entry (i, j) is `(F d)(k_i − k_j) / N`.
    fn conjugated_diagonal(&self, d: &[C64]) -> DMatrix<C64> {
        let (nx, ny) = (self.cfg.nx, self.cfg.ny);
        let n = nx * ny;
        let dh = self.fft.forward(d);
        let inv = 1.0 / n as f64;
        DMatrix::from_fn(n, n, |i, j| {
            let (iy, ix) = (i / nx, i % nx);
            let (jy, jx) = (j / nx, j % nx);
            dh[((iy + ny - jy) % ny) * nx + (ix + nx - jx) % nx] * inv
        })
    }

    fn lin_state(&self, at: &EvalPoint) -> CVec {
        self.to_real(at.yk)
    }
}

impl SemilinearProblem for ShProblem {
    fn state_dim(&self) -> usize {
        self.cfg.len()
    }

    fn model_layout(&self) -> &ModelLayout {
        &self.layout
    }

    fn depends_on_state(&self) -> bool {
        self.rosenbrock
    }

    fn depends_on_model(&self) -> bool {
        self.rosenbrock
    }

    fn build_operator(&self, at: &EvalPoint) -> Result<LinearOperator> {
        let eigs: CVec = self.grid.eigs.iter().map(|&e| C64::new(e, 0.0)).collect();
        if !self.rosenbrock {
            return Ok(LinearOperator::Diagonal { eigs });
        }
        let s = self.lin_state(at);
        let (r, g) = (self.r(at.m), self.g(at.m));
        let d: CVec = (0..s.len()).map(|i| r[i] + 2.0 * g[i] * s[i] - 3.0 * s[i] * s[i]).collect();
        let mut mat = self.conjugated_diagonal(&d);
        for (i, e) in eigs.iter().enumerate() {
            mat[(i, i)] += e;
        }
        Ok(LinearOperator::dense_bounded(mat))
    }

    fn n(&self, at: &EvalPoint, y: &[C64]) -> CVec {
        let u = self.to_real(y);
        let (r, g) = (self.r(at.m), self.g(at.m));
        let f: CVec = if self.rosenbrock {
            let s = self.lin_state(at);
            (0..u.len()).map(|i| (g[i] * (u[i] - 2.0 * s[i]) - u[i] * u[i] + 3.0 * s[i] * s[i]) * u[i]).collect()
        } else {
            (0..u.len()).map(|i| r[i] * u[i] + g[i] * u[i] * u[i] - u[i] * u[i] * u[i]).collect()
        };
        self.fft.forward(&f)
    }

    fn n_dy(&self, at: &EvalPoint, y: &[C64], v: &[C64]) -> CVec {
        let s = self.rosenbrock.then(|| self.lin_state(at));
        let c = self.reaction_slope(at.m, &self.to_real(y), s.as_deref());
        self.pointwise(&c, v)
    }

    fn n_dy_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> CVec {
        let s = self.rosenbrock.then(|| self.lin_state(at));
        let c = self.reaction_slope(at.m, &self.to_real(y), s.as_deref());
        self.pointwise_adj(&c, z)
    }

    fn n_dm(&self, at: &EvalPoint, y: &[C64], w: &[f64]) -> CVec {
        let u = self.to_real(y);
        let (wr, wg) = (self.r(w), self.g(w));
        let f: CVec = if self.rosenbrock {
            let s = self.lin_state(at);
            (0..u.len()).map(|i| wg[i] * (u[i] - 2.0 * s[i]) * u[i]).collect()
        } else {
            (0..u.len()).map(|i| wr[i] * u[i] + wg[i] * u[i] * u[i]).collect()
        };
        self.fft.forward(&f)
    }

    fn n_dm_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> Vec<f64> {
        let u = self.to_real(y);
        let p = self.scaled_back(z);
        let (cr, cg): (CVec, CVec) = if self.rosenbrock {
            let s = self.lin_state(at);
            (vec![C64::new(0.0, 0.0); u.len()], (0..u.len()).map(|i| (u[i] - 2.0 * s[i]) * u[i]).collect())
        } else {
            (u.clone(), u.iter().map(|x| x * x).collect())
        };
        let mut out = self.model_adj(&cr, &p);
        out.extend(self.model_adj(&cg, &p));
        out
    }

    fn n_dyk(&self, at: &EvalPoint, y: &[C64], v: &[C64]) -> CVec {
        if !self.rosenbrock {
            return vec![C64::new(0.0, 0.0); y.len()];
        }
        let c = self.n_dyk_coeff(at, y);
        self.pointwise(&c, v)
    }

    fn n_dyk_adj(&self, at: &EvalPoint, y: &[C64], z: &[C64]) -> CVec {
        if !self.rosenbrock {
            return vec![C64::new(0.0, 0.0); y.len()];
        }
        let c = self.n_dyk_coeff(at, y);
        self.pointwise_adj(&c, z)
    }

    fn op_dyk(&self, at: &EvalPoint, v: &[C64], dir: &[C64]) -> CVec {
        if !self.rosenbrock {
            return vec![C64::new(0.0, 0.0); v.len()];
        }
        let c = self.op_dyk_coeff(at, v);
        self.pointwise(&c, dir)
    }

    fn op_dyk_adj(&self, at: &EvalPoint, v: &[C64], z: &[C64]) -> CVec {
        if !self.rosenbrock {
            return vec![C64::new(0.0, 0.0); v.len()];
        }
        let c = self.op_dyk_coeff(at, v);
        self.pointwise_adj(&c, z)
    }

    fn op_dm(&self, at: &EvalPoint, v: &[C64], dir: &[f64]) -> CVec {
        if !self.rosenbrock {
            return vec![C64::new(0.0, 0.0); v.len()];
        }
        let s = self.lin_state(at);
        let q = self.to_real(v);
        let (dr, dg) = (self.r(dir), self.g(dir));
        self.fft.forward(&(0..q.len()).map(|i| (dr[i] + 2.0 * dg[i] * s[i]) * q[i]).collect::<CVec>())
    }

    fn op_dm_adj(&self, at: &EvalPoint, v: &[C64], z: &[C64]) -> Vec<f64> {
        if !self.rosenbrock {
            return vec![0.0; self.model_dim()];
        }
        let s = self.lin_state(at);
        let q = self.to_real(v);
        let p = self.scaled_back(z);
        let cg: CVec = q.iter().zip(&s).map(|(a, b)| 2.0 * a * b).collect();
        let mut out = self.model_adj(&q, &p);
        out.extend(self.model_adj(&cg, &p));
        out
    }

    fn observe(&self, y: &[C64]) -> Vec<f64> {
        self.field(y)
    }

    fn observe_adjoint(&self, u: &[f64]) -> CVec {
        let s = 1.0 / self.cfg.len() as f64;
        self.to_spectral(u).into_iter().map(|v| v * s).collect()
    }

    fn sample_point(&self, rng: &mut dyn RngCore) -> (CVec, Vec<f64>) {
        let n = self.cfg.len();
        let u: CVec = (0..n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let m = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        (self.fft.forward(&u), m)
    }
}

impl ShProblem {
    /// `∂n_k/∂y_k` in real space: `(6 y_k − 2g) ⊙ u`.
    fn n_dyk_coeff(&self, at: &EvalPoint, y: &[C64]) -> CVec {
        let s = self.lin_state(at);
        let u = self.to_real(y);
        let g = self.g(at.m);
        (0..u.len()).map(|i| (6.0 * s[i] - 2.0 * g[i]) * u[i]).collect()
    }

    /// `∂(L_k v)/∂y_k` in real space: `(2g − 6 y_k) ⊙ F⁻¹v`.
    fn op_dyk_coeff(&self, at: &EvalPoint, v: &[C64]) -> CVec {
        let s = self.lin_state(at);
        let q = self.to_real(v);
        let g = self.g(at.m);
        (0..q.len()).map(|i| (2.0 * g[i] - 6.0 * s[i]) * q[i]).collect()
    }
}

/// Three equal vertical strips along x: outer values on the sides, inner in
/// the middle.
pub fn make_stripe_params(cfg: &ShConfig, r_outer: f64, r_inner: f64, g_outer: f64, g_inner: f64) -> ModelVector {
    let n = cfg.len();
    let inner = |ix: usize| {
        let x = ix as f64 / cfg.nx as f64;
        (1.0 / 3.0..2.0 / 3.0).contains(&x)
    };
    let mut values = vec![0.0; 2 * n];
    for iy in 0..cfg.ny {
        for ix in 0..cfg.nx {
            let i = iy * cfg.nx + ix;
            let (r, g) = if inner(ix) { (r_inner, g_inner) } else { (r_outer, g_outer) };
            values[i] = r;
            values[n + i] = g;
        }
    }
    let layout = ModelLayout { segments: vec![("r".into(), n), ("g".into(), n)] };
    ModelVector { values, layout }
}

pub fn default_stripes(cfg: &ShConfig) -> ModelVector {
    make_stripe_params(cfg, 2.0, 0.04, -1.0, 1.0)
}

/// Integrate from Gaussian noise seeded by `cfg.seed`.
pub fn simulate_ground_truth(
    problem: &ShProblem,
    params: &[f64],
    tab: &TableauSpec,
    mode: Mode,
    phi: &PhiBackendConfig,
) -> Result<ForwardTrace> {
    let y0 = problem.initial_state(problem.cfg.seed);
    integrate(problem, tab, &y0, params, &problem.cfg.time_grid()?, mode, phi)
}

/// Full real-space snapshots at `every, 2·every, … ≤ until`, with Gaussian
/// noise of standard deviation `noise_frac · RMS(snapshot)`.
pub fn generate_observations(
    trace: &ForwardTrace,
    problem: &ShProblem,
    every: f64,
    until: f64,
    noise_frac: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(every > 0.0) || !(noise_frac >= 0.0) {
        return Err(EtdError::InvalidInput("need every > 0 and noise_frac ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::new();
    let mut data = Vec::new();
    let mut j = 1;
    while j as f64 * every <= until * (1.0 + 1e-12) {
        let t = j as f64 * every;
        let k = trace.grid.index_of(t)?;
        let mut d = problem.field(&trace.states[k]);
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
        let sigma = noise_frac * rms;
        if sigma > 0.0 {
            d.iter_mut().for_each(|x| *x += sigma * rng.sample::<f64, _>(StandardNormal));
        }
        times.push(trace.grid.times[k]);
        data.push(d);
        j += 1;
    }
    ObservationSet::new(times, data, noise_frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::problem::check_problem;
    use crate::tableau::{make_tableau, Scheme};

    #[test]
    fn symbol_vanishes_on_unit_circle() {
        // k = 2πj/L hits |k| = 1 at j = L/2π.
        let cfg = ShConfig { lx: 2.0 * PI * 4.0, ly: 2.0 * PI * 4.0, nx: 16, ny: 16, t_final: 1.0, tau: 0.1, seed: 0 };
        let g = SpectralGrid::new(&cfg);
        assert_eq!(g.eigs[4], 0.0);
        assert_eq!(g.eigs[4 * 16], 0.0);
        assert!(g.eigs.iter().all(|&e| e <= 0.0));
        assert_eq!(g.eigs[0], -1.0);
    }

    #[test]
    fn zero_state_gives_zero_nonlinearity() {
        let cfg = ShConfig::desk(16, 1.0, 0.1, 0);
        let p = build_sh_problem(&cfg).unwrap();
        let m = default_stripes(&cfg).values;
        let z = vec![C64::new(0.0, 0.0); 256];
        assert!(p.n(&EvalPoint { m: &m, yk: &z, t: 0.0 }, &z).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn jacobian_is_self_transpose() {
        // F diag(c) F⁻¹ is its own Hermitian adjoint for real c.
        let cfg = ShConfig::desk(16, 1.0, 0.1, 0);
        let p = build_sh_problem(&cfg).unwrap();
        let m = default_stripes(&cfg).values;
        let y = p.initial_state(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (v, _) = p.sample_point(&mut rng);
        let at = EvalPoint { m: &m, yk: &y, t: 0.0 };
        let a = p.n_dy(&at, &y, &v);
        let b = p.n_dy_adj(&at, &y, &v);
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let scale = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale, "{err:e}");
    }

    #[test]
    fn fixed_problem_passes_checks() {
        let p = build_sh_problem(&ShConfig::desk(16, 1.0, 0.1, 0)).unwrap();
        let rep = check_problem(&p, 3, 7);
        assert!(rep.passed, "{:?}", rep.entries);
    }

    #[test]
    fn rosenbrock_problem_passes_checks() {
        let p = build_sh_rosenbrock_problem(&ShConfig::desk(8, 1.0, 0.1, 0)).unwrap();
        let rep = check_problem(&p, 3, 7);
        assert!(rep.passed, "{:?}", rep.entries);
        assert!(rep.entries.iter().any(|e| e.name == "splitting identity"));
        let line = build_sh_rosenbrock_problem(&ShConfig::line(64, 1.0, 0.1, 0)).unwrap();
        assert!(check_problem(&line, 3, 8).passed);
    }

    #[test]
    fn rosenbrock_operator_at_zero_state() {
        let cfg = ShConfig::desk(8, 1.0, 0.1, 0);
        let p = build_sh_rosenbrock_problem(&cfg).unwrap();
        let n = cfg.len();
        let mut m = default_stripes(&cfg).values;
        m[n..].iter_mut().for_each(|g| *g = 0.0);
        let z = vec![C64::new(0.0, 0.0); n];
        let LinearOperator::Dense { matrix, .. } = p.build_operator(&EvalPoint { m: &m, yk: &z, t: 0.0 }).unwrap() else {
            panic!("dense operator expected")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (v, _) = p.sample_point(&mut rng);
        let lv = LinearOperator::Dense { matrix, spectrum: crate::phi::SpectrumBound::real(0.0, 0.0) }.apply(&v);
        let r: CVec = m[..n].iter().map(|&x| C64::new(x, 0.0)).collect();
        let expect: CVec = p.pointwise(&r, &v).iter().zip(&v).zip(&p.grid.eigs).map(|((a, b), e)| a + b * e).collect();
        assert!(lv.iter().zip(&expect).all(|(a, b)| (a - b).norm() < 1e-12 * (1.0 + b.norm())));
    }

    #[test]
    fn dense_grid_limit() {
        assert!(matches!(build_sh_rosenbrock_problem(&ShConfig::desk(128, 1.0, 0.1, 0)), Err(EtdError::Unsupported(_))));
        assert!(build_sh_problem(&ShConfig { nx: 12, ..ShConfig::desk(16, 1.0, 0.1, 0) }).is_err());
    }

    #[test]
    fn stripes() {
        let cfg = ShConfig::desk(32, 1.0, 0.1, 0);
        let m = default_stripes(&cfg);
        let r = m.segment("r").unwrap();
        let g = m.segment("g").unwrap();
        assert_eq!(r[0], 2.0);
        assert_eq!(g[16 * 32 + 16], 1.0);
        assert_eq!(r[16 * 32 + 16], 0.04);
        assert_eq!(g[5 * 32 + 31], -1.0);
        let c = make_stripe_params(&cfg, 0.7, 0.7, 0.0, 0.0);
        assert!(c.segment("r").unwrap().iter().all(|&x| x == 0.7));
    }

    #[test]
    fn zero_initial_field_stays_zero() {
        let cfg = ShConfig::desk(16, 1.0, 0.1, 0);
        let p = build_sh_problem(&cfg).unwrap();
        let m = vec![0.0; 2 * cfg.len()];
        let z = vec![C64::new(0.0, 0.0); cfg.len()];
        let tr = integrate(&p, &make_tableau(Scheme::Krogstad), &z, &m, &cfg.time_grid().unwrap(), Mode::FixedL, &PhiBackendConfig::default())
            .unwrap();
        assert!(tr.states.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn simulation_stays_real_and_bounded() {
        let cfg = ShConfig::desk(32, 5.0, 0.1, 4);
        let p = build_sh_problem(&cfg).unwrap();
        let m = default_stripes(&cfg).values;
        let tr = simulate_ground_truth(&p, &m, &make_tableau(Scheme::Krogstad), Mode::FixedL, &PhiBackendConfig::default()).unwrap();
        for y in &tr.states {
            assert!(p.imag_residue(y) <= 1e-10);
        }
        let top = p.field(tr.final_state()).iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(top <= 10.0, "{top}");
    }

    #[test]
    fn observations() {
        let cfg = ShConfig::desk(16, 2.0, 0.1, 4);
        let p = build_sh_problem(&cfg).unwrap();
        let m = default_stripes(&cfg).values;
        let tr = simulate_ground_truth(&p, &m, &make_tableau(Scheme::CoxMatthews), Mode::FixedL, &PhiBackendConfig::default()).unwrap();
        let clean = generate_observations(&tr, &p, 0.5, 2.0, 0.0, 1).unwrap();
        assert_eq!(clean.times, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(clean.data[1], p.field(&tr.states[10]));
        let noisy = generate_observations(&tr, &p, 0.5, 2.0, 0.05, 1).unwrap();
        let (mut nn, mut ss) = (0.0, 0.0);
        for (a, b) in noisy.data.iter().zip(&clean.data) {
            for (x, y) in a.iter().zip(b) {
                nn += (x - y) * (x - y);
                ss += y * y;
            }
        }
        let ratio = (nn / ss).sqrt();
        assert!((0.045..=0.055).contains(&ratio), "{ratio}");
        assert!(generate_observations(&tr, &p, 0.05, 0.01, 0.0, 1).unwrap().is_empty());
        assert!(generate_observations(&tr, &p, 0.2, 1.0, 0.0, 1).is_ok());
        assert!(generate_observations(&tr, &p, 0.33, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn observation_adjoint_is_real_pairing() {
        let p = build_sh_problem(&ShConfig::desk(8, 1.0, 0.1, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (v, _) = p.sample_point(&mut rng);
        let u: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        let a: f64 = p.observe(&v).iter().zip(&u).map(|(x, y)| x * y).sum();
        let b = dot(&p.observe_adjoint(&u), &v).re;
        assert!((a - b).abs() < 1e-12 * a.abs());
    }
}
