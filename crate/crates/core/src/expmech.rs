//! Exponential mechanism with a free gap.
//!
//! Two equivalent implementations:
//! * [`exp_mech_gumbel`] adds Gumbel(0) noise to the scaled scores
//!   `x_i = eps * u_i / (2 * sensitivity)` and reports the arg-max together
//!   with its margin over the runner-up.
//! * [`exp_mech_blackbox_gap`] samples the winner from any categorical
//!   sampler over `softmax(x)`, then draws the margin from a logistic law
//!   located at `x_s - ln sum_{i != s} e^{x_i}`, conditioned to be positive.
//!
//! Both produce the same joint law of `(winner, gap)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{sample, sample_logistic_nonneg, NoiseKind, RandomSource};
use crate::topk::top_indices;

/// Utilities of every outcome under one database.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    scores: Vec<f64>,
    sensitivity: f64,
    epsilon: f64,
}

impl UtilityTable {
    pub fn new(scores: Vec<f64>, sensitivity: f64, epsilon: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(invalid("the exponential mechanism with gap needs at least two outcomes"));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(invalid(format!("sensitivity must be positive, got {sensitivity}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let table = Self {
            scores,
            sensitivity,
            epsilon,
        };
        if table.scaled().iter().any(|x| !x.is_finite()) {
            return Err(invalid("scaled scores must be finite"));
        }
        Ok(table)
    }

    /// Table whose scaled scores are exactly `scaled` (eps = 2, sensitivity 1).
    pub fn from_scaled(scaled: Vec<f64>) -> Result<Self> {
        Self::new(scaled, 1.0, 2.0)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// `eps * u_i / (2 * sensitivity)`.
    pub fn scaled(&self) -> Vec<f64> {
        let c = self.epsilon / (2.0 * self.sensitivity);
        self.scores.iter().map(|u| c * u).collect()
    }

    /// Selection probabilities `softmax(scaled)`.
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.scaled())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMechResult {
    pub selected: usize,
    pub gap: f64,
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// `ln sum_i e^{scores_i}`.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + scores.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln sum_{i != s} e^{scores_i}`, with max-subtraction.
pub fn log_sum_exp_excluding(scores: &[f64], s: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(invalid("need at least two scores"));
    }
    if s >= scores.len() {
        return Err(invalid(format!("index {s} out of range for {} scores", scores.len())));
    }
    let m = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != s)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != s)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    Ok(m + total.ln())
}

/// Gumbel-max implementation.
pub fn exp_mech_gumbel<R: RandomSource + ?Sized>(u: &UtilityTable, src: &mut R) -> Result<ExpMechResult> {
    let gumbel = NoiseKind::Gumbel { location: 0.0 };
    let noisy = u
        .scaled()
        .into_iter()
        .map(|x| Ok(x + sample(gumbel, src)?))
        .collect::<Result<Vec<f64>>>()?;
    let top = top_indices(&noisy, 2);
    Ok(ExpMechResult {
        selected: top[0],
        gap: noisy[top[0]] - noisy[top[1]],
    })
}

/// Any sampler of an index from `softmax(scaled)`.
pub trait CategoricalSelector {
    fn select(&mut self, scaled: &[f64], src: &mut dyn RandomSource) -> Result<usize>;
}

/// Inverse-CDF categorical sampling from one uniform.
#[derive(Debug, Clone, Copy, Default)]
pub struct InverseCdfSelector;

impl CategoricalSelector for InverseCdfSelector {
    fn select(&mut self, scaled: &[f64], src: &mut dyn RandomSource) -> Result<usize> {
        let p = softmax(scaled);
        let u = src.next_uniform()?;
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(i);
            }
        }
        // u rounded past the accumulated total
        Ok(p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1))
    }
}

/// Black-box implementation with the default inverse-CDF selector.
pub fn exp_mech_blackbox_gap<R: RandomSource>(u: &UtilityTable, src: &mut R) -> Result<ExpMechResult> {
    exp_mech_blackbox_gap_with(u, &mut InverseCdfSelector, src)
}

/// Black-box implementation around a caller-supplied selector.
pub fn exp_mech_blackbox_gap_with<S, R>(u: &UtilityTable, selector: &mut S, src: &mut R) -> Result<ExpMechResult>
where
    S: CategoricalSelector + ?Sized,
    R: RandomSource,
{
    let scaled = u.scaled();
    let selected = selector.select(&scaled, src)?;
    if selected >= scaled.len() {
        return Err(invalid(format!("selector returned out-of-range index {selected}")));
    }
    let location = scaled[selected] - log_sum_exp_excluding(&scaled, selected)?;
    let gap = sample_logistic_nonneg(location, src)?;
    Ok(ExpMechResult { selected, gap })
}

/// `P(gap >= gamma | selected = s)` under either implementation.
pub fn gap_survival(scaled: &[f64], s: usize, gamma: f64) -> Result<f64> {
    let rest = log_sum_exp_excluding(scaled, s)?;
    let location = scaled[s] - rest;
    // logistic survival at gamma over survival at 0, in log space
    let log_sf = |x: f64| -crate::noise::softplus(x - location);
    Ok((log_sf(gamma.max(0.0)) - log_sf(0.0)).exp())
}
