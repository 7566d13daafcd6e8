//! Experiment driver behind the `etd` binary.

pub mod commands;
pub mod config;

use config::{InitialCondition, ModelConfig, RunConfig};
use etd_core::forward::Mode;
use etd_core::linalg::{zeros, CVec};
use etd_core::problem::{SemilinearProblem, TimeGrid};
use etd_core::sh::{build_sh_problem, build_sh_rosenbrock_problem, ShProblem};
use etd_core::toy::{make_toy_problem, ToyProblem};
use etd_core::EtdError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration (exit code 2).
    Config(String),
    /// A run that started but could not finish (exit code 1).
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EtdError> for CliError {
    fn from(e: EtdError) -> Self {
        match e {
            EtdError::InvalidInput(_) | EtdError::Dimension(_) | EtdError::Alignment { .. } | EtdError::Unsupported(_) => {
                CliError::Config(e.to_string())
            }
            EtdError::Divergence { .. } | EtdError::SingularResolvent { .. } => CliError::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(format!("json: {e}"))
    }
}

pub enum ModelKind {
    Sh(ShProblem),
    Toy(ToyProblem),
}

/// A configured model with its parameters, initial state and time grid.
pub struct Setup {
    pub kind: ModelKind,
    pub params: Vec<f64>,
    pub y0: CVec,
    pub grid: TimeGrid,
    pub t_final: f64,
    pub initial: InitialCondition,
}

impl Setup {
    pub fn build(cfg: &RunConfig) -> Result<Self, CliError> {
        let rosenbrock = cfg.mode == Mode::Rosenbrock;
        match &cfg.model {
            ModelConfig::SwiftHohenberg { initial, params, .. } => {
                let sh = cfg.sh_config()?.expect("swift-hohenberg model");
                let problem = if rosenbrock { build_sh_rosenbrock_problem(&sh)? } else { build_sh_problem(&sh)? };
                let y0 = match initial {
                    InitialCondition::Noise => problem.initial_state(cfg.seed),
                    InitialCondition::Zero => zeros(sh.len()),
                };
                Ok(Self {
                    params: params.values(&sh),
                    y0,
                    grid: sh.time_grid()?,
                    t_final: sh.t_final,
                    initial: *initial,
                    kind: ModelKind::Sh(problem),
                })
            }
            ModelConfig::Toy { n, t_final, tau } => {
                let toy = make_toy_problem(*n, cfg.seed, rosenbrock)?;
                Ok(Self {
                    params: toy.default_model(cfg.seed),
                    y0: toy.initial_state(cfg.seed),
                    grid: TimeGrid::uniform(*t_final, *tau)?,
                    t_final: *t_final,
                    initial: InitialCondition::Noise,
                    kind: ModelKind::Toy(toy),
                })
            }
        }
    }

    pub fn problem(&self) -> &dyn SemilinearProblem {
        match &self.kind {
            ModelKind::Sh(p) => p,
            ModelKind::Toy(p) => p,
        }
    }

    pub fn sh(&self) -> Option<&ShProblem> {
        match &self.kind {
            ModelKind::Sh(p) => Some(p),
            ModelKind::Toy(_) => None,
        }
    }

    pub fn seeded_state(&self, seed: u64) -> CVec {
        match (&self.kind, self.initial) {
            (_, InitialCondition::Zero) => zeros(self.y0.len()),
            (ModelKind::Sh(p), _) => p.initial_state(seed),
            (ModelKind::Toy(p), _) => p.initial_state(seed),
        }
    }
}
