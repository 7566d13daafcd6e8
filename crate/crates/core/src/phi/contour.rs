use super::{phi_scalar, PhiBackendConfig, SpectrumBound};
use crate::error::{EtdError, Result};
use crate::linalg::C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    Circle,
    Parabola,
    Hankel,
}

/// Integration contour for φ_ℓ(z) = (1/2πi)∮ φ_ℓ(s)/(s − z) ds.
///
/// `shape` holds kind-specific parameters; `None` selects tuned defaults.
/// Parabola: `(a, b, c)` in `s(θ) = M(a − bθ² + icθ)`.
/// Hankel: `(α, μ₀, h₀)` in `s(u) = μ(1 + sin(iu − α))` with `μ = μ₀M` and
/// step `h = h₀/M`. A circle without center or radius is placed around the
/// spectrum it is applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourSpec {
    pub kind: ContourKind,
    pub num_points: usize,
    pub center: Option<C64>,
    pub radius: Option<f64>,
    pub shape: Option<[f64; 3]>,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self::parabola(32)
    }
}

pub const PARABOLA_SHAPE: [f64; 3] = [0.178, 0.109, 0.2655];
pub const HANKEL_SHAPE: [f64; 3] = [0.97, 38.6 / 32.0, 0.082 * 32.0];

impl ContourSpec {
    pub fn parabola(m: usize) -> Self {
        Self { kind: ContourKind::Parabola, num_points: m, center: None, radius: None, shape: None }
    }

    pub fn hankel(m: usize) -> Self {
        Self { kind: ContourKind::Hankel, ..Self::parabola(m) }
    }

    pub fn circle(m: usize, center: C64, radius: f64) -> Self {
        Self { kind: ContourKind::Circle, num_points: m, center: Some(center), radius: Some(radius), shape: None }
    }

    /// Circle that is sized around each spectrum it is applied to.
    pub fn adaptive_circle(m: usize) -> Self {
        Self { kind: ContourKind::Circle, ..Self::parabola(m) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_points < 2 || self.num_points % 2 != 0 {
            return Err(EtdError::InvalidInput("contour num_points must be even and at least 2".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(EtdError::InvalidInput("contour radius must be positive".into()));
            }
        }
        if let Some(s) = self.shape {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(EtdError::InvalidInput("contour shape parameters must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureNodes {
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub real_symmetric: bool,
}

impl QuadratureNodes {
    /// Σ c_i / (s_i − z); the real part when the nodes are folded.
    pub fn eval(&self, z: C64) -> C64 {
        let s: C64 = self.nodes.iter().zip(&self.weights).map(|(s, c)| c / (s - z)).sum();
        if self.real_symmetric {
            C64::new(s.re, 0.0)
        } else {
            s
        }
    }

    /// Keep the upper half of a conjugate-symmetric node set and double the
    /// weights. Only valid for real arguments.
    pub fn fold_real(&self) -> Result<Self> {
        if self.real_symmetric {
            return Ok(self.clone());
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (s, c) in self.nodes.iter().zip(&self.weights) {
            if s.im > 0.0 {
                nodes.push(*s);
                weights.push(2.0 * c);
            }
        }
        if 2 * nodes.len() != self.nodes.len() {
            return Err(EtdError::InvalidInput("node set is not conjugate symmetric".into()));
        }
        Ok(Self { nodes, weights, real_symmetric: true })
    }
}

/// Nodes and weights with φ_ℓ(z) ≈ Σ c_i/(s_i − z).
pub fn contour_nodes(spec: &ContourSpec, ell: usize) -> Result<QuadratureNodes> {
    spec.validate()?;
    if ell > super::MAX_ELL {
        return Err(EtdError::InvalidInput(format!("ell = {ell} exceeds {}", super::MAX_ELL)));
    }
    let m = spec.num_points;
    let mf = m as f64;
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let i = C64::new(0.0, 1.0);
    match spec.kind {
        ContourKind::Circle => {
            let (Some(c), Some(r)) = (spec.center, spec.radius) else {
                return Err(EtdError::InvalidInput("circle contour needs center and radius".into()));
            };
            let cfg = PhiBackendConfig::default();
            for j in 0..m {
                let th = 2.0 * PI * (j as f64 + 0.5) / mf;
                let d = C64::from_polar(r, th);
                let s = c + d;
                nodes.push(s);
                weights.push(d * phi_scalar(ell, s, &cfg)? / mf);
            }
        }
        ContourKind::Parabola => {
            let [a, b, cc] = spec.shape.unwrap_or(PARABOLA_SHAPE);
            for k in 0..m {
                let th = PI * (2.0 * k as f64 + 1.0 - mf) / mf;
                let s = mf * C64::new(a - b * th * th, cc * th);
                let ds = mf * C64::new(-2.0 * b * th, cc);
                nodes.push(s);
                weights.push(s.exp() * ds / (i * mf) / s.powi(ell as i32));
            }
        }
        ContourKind::Hankel => {
            let [alpha, mu0, h0] = spec.shape.unwrap_or(HANKEL_SHAPE);
            let mu = mu0 * mf;
            let h = h0 / mf;
            for k in 0..m {
                let u = h * (k as f64 - 0.5 * (mf - 1.0));
                let arg = i * u - alpha;
                let s = mu * (1.0 + arg.sin());
                let ds = mu * i * arg.cos();
                nodes.push(s);
                weights.push(ds * h / (2.0 * PI * i) * s.exp() / s.powi(ell as i32));
            }
        }
    }
    Ok(QuadratureNodes { nodes, weights, real_symmetric: false })
}

/// Nodes suited to a spectrum contained in `bound`.
///
/// An unplaced circle is centred on the box with radius three times its
/// half-diagonal (at least 0.5), which keeps the trapezoidal error near
/// `3^{-M}`. Parabola and Hankel contours require the spectrum to sit close
/// to the negative real axis. For `ell = 0` and a spectrum strictly in the
/// left half-plane they are translated to its right edge: `e^z` has no pole
/// at the origin, and the shift keeps the error relative to `e^{re_max}`.
pub fn contour_for_spectrum(spec: &ContourSpec, ell: usize, bound: &SpectrumBound) -> Result<QuadratureNodes> {
    match spec.kind {
        ContourKind::Circle => {
            let center = spec.center.unwrap_or_else(|| bound.center());
            let reach = bound.max_distance(center);
            let radius = spec.radius.unwrap_or_else(|| (3.0 * reach).max(0.5));
            if radius <= reach {
                return Err(EtdError::InvalidInput(format!(
                    "circle of radius {radius} around {center} does not enclose the spectrum (reach {reach})"
                )));
            }
            contour_nodes(&ContourSpec { center: Some(center), radius: Some(radius), ..spec.clone() }, ell)
        }
        ContourKind::Parabola | ContourKind::Hankel => {
            if bound.re_max > 1.0 || bound.im_max > 5.0 || bound.im_min < -5.0 {
                return Err(EtdError::Unsupported(format!(
                    "spectrum box {bound:?} lies outside the region served by the {:?} contour; use a circle",
                    spec.kind
                )));
            }
            let q = contour_nodes(spec, ell)?;
            if ell == 0 && bound.re_max < 0.0 {
                let shift = bound.re_max;
                let scale = shift.exp();
                return Ok(QuadratureNodes {
                    nodes: q.nodes.iter().map(|s| s + shift).collect(),
                    weights: q.weights.iter().map(|c| c * scale).collect(),
                    real_symmetric: q.real_symmetric,
                });
            }
            Ok(q)
        }
    }
}
