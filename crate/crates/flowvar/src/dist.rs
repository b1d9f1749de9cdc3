//! Inter-arrival and service time distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// The distribution families the simulator knows how to sample.
///
/// Each exposes its mean and squared coefficient of variation in closed
/// form; for a renewal stream with rate `1/mean` the asymptotic variance
/// rate of the counting process is `scv / mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Distribution {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    Deterministic { value: f64 },
}

impl Distribution {
    pub fn exponential(rate: f64) -> Self {
        Self::Exponential { rate }
    }

    pub fn erlang(shape: u32, rate: f64) -> Self {
        Self::Erlang { shape, rate }
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Self {
        Self::Hyperexponential { weights, rates }
    }

    pub fn deterministic(value: f64) -> Self {
        Self::Deterministic { value }
    }

    /// Check parameter invariants. Deterministic values must be strictly
    /// positive: a zero service time would collapse the event order.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Self::Exponential { rate } => {
                if *rate <= 0.0 {
                    return Err(format!("exponential rate {rate} must be > 0"));
                }
            }
            Self::Erlang { shape, rate } => {
                if *shape == 0 {
                    return Err("erlang shape must be >= 1".into());
                }
                if *rate <= 0.0 {
                    return Err(format!("erlang rate {rate} must be > 0"));
                }
            }
            Self::Hyperexponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err("hyperexponential needs matching, nonempty weights and rates".into());
                }
                if weights.iter().any(|&w| w < 0.0) {
                    return Err("hyperexponential weights must be nonnegative".into());
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(format!("hyperexponential weights sum to {sum}, expected 1"));
                }
                if rates.iter().any(|&r| r <= 0.0) {
                    return Err("hyperexponential rates must be > 0".into());
                }
            }
            Self::Deterministic { value } => {
                if *value <= 0.0 {
                    return Err(format!("deterministic value {value} must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Erlang { shape, rate } => f64::from(*shape) / rate,
            Self::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w / r)
                .sum(),
            Self::Deterministic { value } => *value,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        match self {
            Self::Exponential { .. } => 1.0,
            Self::Erlang { shape, .. } => 1.0 / f64::from(*shape),
            Self::Hyperexponential { weights, rates } => {
                let m: f64 = self.mean();
                let m2: f64 = weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| 2.0 * w / (r * r))
                    .sum();
                m2 / (m * m) - 1.0
            }
            Self::Deterministic { .. } => 0.0,
        }
    }

    /// Asymptotic variance rate of the renewal counting process driven by
    /// this inter-event distribution.
    pub fn counting_variance_rate(&self) -> f64 {
        self.scv() / self.mean()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Exponential { rate } => sample_exp(rng, *rate),
            Self::Erlang { shape, rate } => {
                (0..*shape).map(|_| sample_exp(rng, *rate)).sum()
            }
            Self::Hyperexponential { weights, rates } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, r) in weights.iter().zip(rates) {
                    acc += w;
                    if u < acc {
                        return sample_exp(rng, *r);
                    }
                }
                sample_exp(rng, *rates.last().expect("checked: nonempty"))
            }
            Self::Deterministic { value } => *value,
        }
    }
}

/// Inversion sampling; `1 - u` keeps the argument of `ln` in `(0, 1]`.
fn sample_exp(rng: &mut impl Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
