//! SVT / Top-K hybrids with a dynamic privacy cost.
//!
//! Both return the subset of the noisy top `k` that beats a noisy threshold,
//! and charge only for what they return.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{sample, NoiseKind, RandomSource};
use crate::queries::QuerySet;
use crate::topk::{noisy_values, top_indices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridVariant {
    /// Threshold joins the list as query 0.
    Identity,
    /// Gap-SVT over the noisy top-k, sorted.
    Estimates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridResult {
    /// For `Identity`, query ids are 1-based and 0 is the threshold
    /// sentinel; for `Estimates`, ids are 0-based positions in the query set.
    pub pairs: Vec<(usize, f64)>,
    pub actual_cost: f64,
    pub variant: HybridVariant,
    pub k: usize,
    pub epsilon: f64,
}

impl HybridResult {
    /// Number of returned pairs, counting the sentinel.
    pub fn t(&self) -> usize {
        self.pairs.len()
    }

    /// Pairs that refer to real queries, with 0-based positions in the
    /// query set.
    pub fn query_pairs(&self) -> Vec<(usize, f64)> {
        match self.variant {
            HybridVariant::Identity => self
                .pairs
                .iter()
                .filter(|&&(j, _)| j != 0)
                .map(|&(j, g)| (j - 1, g))
                .collect(),
            HybridVariant::Estimates => self.pairs.clone(),
        }
    }

    pub fn reached_threshold(&self) -> bool {
        self.variant == HybridVariant::Identity && self.pairs.last().is_some_and(|&(j, _)| j == 0)
    }
}

fn check_common(k: usize, epsilon: f64, threshold: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !threshold.is_finite() {
        return Err(invalid("threshold must be finite"));
    }
    Ok(())
}

/// Cost `(t/k) eps` of the identity-prioritising hybrid.
pub fn identity_cost(t: usize, k: usize, epsilon: f64) -> f64 {
    if t == k {
        epsilon
    } else {
        (t as f64 / k as f64) * epsilon
    }
}

/// Cost `(theta + (t/k)(1 - theta)) eps` of the estimate-prioritising hybrid.
pub fn estimates_cost(t: usize, k: usize, theta: f64, epsilon: f64) -> f64 {
    if t == k {
        epsilon
    } else {
        (theta + (t as f64 / k as f64) * (1.0 - theta)) * epsilon
    }
}

/// Hybrid prioritising identity.
///
/// The public threshold is prepended as query 0 and everything receives
/// `Exp(2k/eps)` noise. The top `k+1` noisy values are scanned in order and
/// emission stops after the threshold itself is emitted.
pub fn hybrid_identity<R: RandomSource + ?Sized>(
    q: &QuerySet,
    threshold: f64,
    k: usize,
    epsilon: f64,
    src: &mut R,
) -> Result<HybridResult> {
    check_common(k, epsilon, threshold)?;
    if k > q.len() {
        return Err(invalid(format!("k = {k} exceeds the {} queries", q.len())));
    }
    let kind = NoiseKind::exponential(2.0 * k as f64 / epsilon)?;
    let mut values = Vec::with_capacity(q.len() + 1);
    values.push(threshold);
    values.extend_from_slice(q.values());
    let noisy = noisy_values(&values, kind, src)?;
    let top = top_indices(&noisy, k + 1);

    let mut pairs = Vec::with_capacity(k);
    for w in top.windows(2) {
        pairs.push((w[0], noisy[w[0]] - noisy[w[1]]));
        if w[0] == 0 {
            break;
        }
    }
    Ok(HybridResult {
        actual_cost: identity_cost(pairs.len(), k, epsilon),
        pairs,
        variant: HybridVariant::Identity,
        k,
        epsilon,
    })
}

/// Hybrid prioritising estimates: Gap-SVT applied to the queries sorted by
/// their noisy values. Noise is debiased exponential.
pub fn hybrid_estimates<R: RandomSource + ?Sized>(
    q: &QuerySet,
    threshold: f64,
    k: usize,
    epsilon: f64,
    theta: f64,
    src: &mut R,
) -> Result<HybridResult> {
    check_common(k, epsilon, threshold)?;
    if k > q.len() {
        return Err(invalid(format!("k = {k} exceeds the {} queries", q.len())));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    let eps0 = theta * epsilon;
    let eps1 = (1.0 - theta) * epsilon / k as f64;
    let threshold_noise = NoiseKind::exponential(1.0 / eps0)?;
    let query_noise = NoiseKind::exponential(2.0 / eps1)?;

    let noisy_threshold = threshold + sample(threshold_noise, src)? - threshold_noise.mean();
    let noisy: Vec<f64> = noisy_values(q.values(), query_noise, src)?
        .into_iter()
        .map(|v| v - query_noise.mean())
        .collect();

    let pairs: Vec<(usize, f64)> = top_indices(&noisy, k)
        .into_iter()
        .take_while(|&j| noisy[j] >= noisy_threshold)
        .map(|j| (j, noisy[j] - noisy_threshold))
        .collect();
    Ok(HybridResult {
        actual_cost: estimates_cost(pairs.len(), k, theta, epsilon),
        pairs,
        variant: HybridVariant::Estimates,
        k,
        epsilon,
    })
}

/// Variance-optimal threshold share for the estimate-prioritising hybrid.
pub fn estimates_theta(k: usize) -> f64 {
    let k = k as f64;
    1.0 / (1.0 + (4.0 * k * k).cbrt())
}
