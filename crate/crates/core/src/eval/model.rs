use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Replica count.
    pub n: u32,
    /// Commands per second one replica can execute.
    pub alpha: f64,
    pub f_w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Error)]
pub enum ModelError {
    #[error("n must be at least 1")]
    NoReplicas,
    #[error("alpha {0} must be positive and finite")]
    Alpha(f64),
    #[error("write fraction {0} is not a probability")]
    WriteFraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThroughputLimit {
    Finite(f64),
    /// A read-only workload scales without bound.
    Unbounded,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::NoReplicas);
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::Alpha(self.alpha));
        }
        if !(0.0..=1.0).contains(&self.f_w) {
            return Err(ModelError::WriteFraction(self.f_w));
        }
        Ok(())
    }
}

/// Every replica executes every write but only its share of reads.
pub fn analytical_peak_throughput(m: &ModelParams) -> Result<f64, ModelError> {
    m.validate()?;
    let n = f64::from(m.n);
    Ok(n * m.alpha / (n * m.f_w + (1.0 - m.f_w)))
}

/// Peak throughput as `n` grows without bound.
pub fn throughput_limit(m: &ModelParams) -> Result<ThroughputLimit, ModelError> {
    m.validate()?;
    Ok(if m.f_w == 0.0 { ThroughputLimit::Unbounded } else { ThroughputLimit::Finite(m.alpha / m.f_w) })
}
