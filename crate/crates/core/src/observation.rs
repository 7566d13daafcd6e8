use crate::error::{EtdError, Result};
use crate::problem::TimeGrid;
use serde::{Deserialize, Serialize};

/// Observed data at grid times; one real vector per time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub data: Vec<Vec<f64>>,
    pub noise_frac: f64,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, data: Vec<Vec<f64>>, noise_frac: f64) -> Result<Self> {
        if times.len() != data.len() {
            return Err(EtdError::Dimension(format!("{} times for {} snapshots", times.len(), data.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EtdError::InvalidInput("observation times must be strictly increasing".into()));
        }
        if data.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(EtdError::Dimension("observation snapshots differ in size".into()));
        }
        Ok(Self { times, data, noise_frac })
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Grid index of every observation time.
    pub fn steps(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        self.times.iter().map(|&t| grid.index_of(t)).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }
}

/// `M = ½‖d − d_obs‖²` and its gradient `d − d_obs`.
pub fn misfit_eval(d: &[f64], d_obs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if d.len() != d_obs.len() {
        return Err(EtdError::Dimension(format!("data {} vs observed {}", d.len(), d_obs.len())));
    }
    let r: Vec<f64> = d.iter().zip(d_obs).map(|(a, b)| a - b).collect();
    Ok((0.5 * r.iter().map(|x| x * x).sum::<f64>(), r))
}
