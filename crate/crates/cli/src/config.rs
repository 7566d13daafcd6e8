//! Run configuration. Every section rejects unknown keys.

use crate::CliError;
use etd_core::forward::Mode;
use etd_core::inverse::ObjectiveConfig;
use etd_core::phi::PhiBackendConfig;
use etd_core::sh::ShConfig;
use etd_core::tableau::Scheme;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub phi: PhiBackendConfig,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub order_study: OrderStudyConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub estimate: Option<EstimateConfig>,
}

fn default_scheme() -> Scheme {
    Scheme::Krogstad
}

fn default_mode() -> Mode {
    Mode::FixedL
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    SwiftHohenberg {
        nx: usize,
        /// Defaults to `nx`; `1` selects the one-dimensional line.
        #[serde(default)]
        ny: Option<usize>,
        /// Defaults keep the resolution of a 128² grid on a 40π box.
        #[serde(default)]
        lx: Option<f64>,
        #[serde(default)]
        ly: Option<f64>,
        #[serde(default = "ten")]
        t_final: f64,
        #[serde(default = "tenth")]
        tau: f64,
        #[serde(default)]
        initial: InitialCondition,
        #[serde(default)]
        params: ParamSpec,
    },
    Toy {
        #[serde(default = "eight")]
        n: usize,
        #[serde(default = "unit")]
        t_final: f64,
        #[serde(default = "tenth")]
        tau: f64,
    },
}

fn ten() -> f64 {
    10.0
}

fn unit() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

fn eight() -> usize {
    8
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Unit-variance white noise seeded by the run seed.
    #[default]
    Noise,
    Zero,
}

/// Piecewise-constant `(r, g)` fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamSpec {
    /// Outer values on both sides, inner values in the middle third along x.
    Stripes { r_outer: f64, r_inner: f64, g_outer: f64, g_inner: f64 },
    Constant { r: f64, g: f64 },
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec::Stripes { r_outer: 2.0, r_inner: 0.04, g_outer: -1.0, g_inner: 1.0 }
    }
}

impl ParamSpec {
    pub fn values(&self, cfg: &ShConfig) -> Vec<f64> {
        match *self {
            ParamSpec::Stripes { r_outer, r_inner, g_outer, g_inner } => {
                etd_core::sh::make_stripe_params(cfg, r_outer, r_inner, g_outer, g_inner).values
            }
            ParamSpec::Constant { r, g } => {
                let n = cfg.len();
                let mut v = vec![r; n];
                v.extend(std::iter::repeat(g).take(n));
                v
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Snapshot spacing in model time; only the final state when absent.
    #[serde(default)]
    pub snapshot_every: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderStudyConfig {
    pub schemes: Vec<Scheme>,
    pub taus: Vec<f64>,
    /// Number of seeded initial conditions, starting at the run seed.
    pub seeds: usize,
    /// Spacing of the zero-data observations that drive the adjoint.
    pub obs_every: f64,
}

impl Default for OrderStudyConfig {
    fn default() -> Self {
        Self { schemes: Scheme::ALL.to_vec(), taus: vec![0.2, 0.1, 0.05], seeds: 3, obs_every: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Random points for the per-callback problem checks.
    pub samples: usize,
    /// Random source pairs for the dot-product test, per scheme.
    pub pairs: usize,
    pub directions: usize,
    /// Central-difference steps, largest first.
    pub eps: Vec<f64>,
    pub gradient_tol: f64,
    pub adjoint_tol: f64,
    pub tableau_tol: f64,
    pub obs_every: f64,
    /// Negative control: perturbs one weight of the run's tableau.
    pub corrupt_tableau: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            samples: 3,
            pairs: 5,
            directions: 5,
            eps: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            gradient_tol: 1e-5,
            adjoint_tol: 1e-10,
            tableau_tol: 1e-12,
            obs_every: 0.5,
            corrupt_tableau: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub observations: ObservationSource,
    #[serde(default = "default_guess")]
    pub initial_guess: ParamSpec,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    /// Ground truth for error reporting when observations come from a file.
    #[serde(default)]
    pub truth: Option<ParamSpec>,
}

fn default_guess() -> ParamSpec {
    ParamSpec::Constant { r: 1.0, g: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSource {
    /// Simulates the model's `params` and samples it with noise.
    Generate {
        #[serde(default = "half")]
        every: f64,
        #[serde(default)]
        until: Option<f64>,
        #[serde(default = "five_percent")]
        noise_frac: f64,
        #[serde(default)]
        noise_seed: Option<u64>,
    },
    /// A JSON file holding `{times, data, noise_frac}`.
    File { path: String },
}

fn half() -> f64 {
    0.5
}

fn five_percent() -> f64 {
    0.05
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.phi.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(sh) = self.sh_config()? {
            sh.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(every) = self.simulate.snapshot_every {
            if !(every > 0.0) {
                return bad("simulate.snapshot_every must be positive".into());
            }
        }
        let os = &self.order_study;
        if os.taus.len() < 2 || os.taus.iter().any(|t| !(*t > 0.0)) {
            return bad("order_study.taus needs at least two positive steps".into());
        }
        if os.seeds == 0 || os.schemes.is_empty() || !(os.obs_every > 0.0) {
            return bad("order_study needs seeds ≥ 1, a scheme and obs_every > 0".into());
        }
        let ck = &self.check;
        if ck.eps.is_empty() || ck.eps.iter().any(|e| !(*e > 0.0)) || !(ck.obs_every > 0.0) {
            return bad("check.eps must be positive and non-empty, obs_every > 0".into());
        }
        if let Some(est) = &self.estimate {
            est.objective.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if let ObservationSource::Generate { every, noise_frac, .. } = est.observations {
                if !(every > 0.0) || !(noise_frac >= 0.0) {
                    return bad("observations need every > 0 and noise_frac ≥ 0".into());
                }
            }
        }
        Ok(())
    }

    /// Grid configuration for Swift-Hohenberg models, `None` for the toy.
    pub fn sh_config(&self) -> Result<Option<ShConfig>, CliError> {
        match &self.model {
            ModelConfig::SwiftHohenberg { nx, ny, lx, ly, t_final, tau, .. } => {
                let ny = ny.unwrap_or(*nx);
                let scale = |n: usize| 40.0 * PI * n as f64 / 128.0;
                let lx = lx.unwrap_or(scale(*nx));
                let ly = ly.unwrap_or(if ny == 1 { 1.0 } else { scale(ny) });
                Ok(Some(ShConfig { lx, ly, nx: *nx, ny, t_final: *t_final, tau: *tau, seed: self.seed }))
            }
            ModelConfig::Toy { n, .. } => {
                if !(2..=16).contains(n) {
                    return Err(CliError::Config(format!("toy size {n} outside 2..=16")));
                }
                Ok(None)
            }
        }
    }

    pub fn output_dir(&self, cli_out: Option<&Path>) -> std::path::PathBuf {
        cli_out
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.as_ref().map(Into::into))
            .unwrap_or_else(|| "out".into())
    }
}
