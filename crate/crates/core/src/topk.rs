//! Noisy Top-K with gap.
//!
//! Every query receives i.i.d. noise of scale `2k/eps`; the `k` largest noisy
//! values are reported in descending order together with the gap from each
//! to the next one. The `(k+1)`-th value only ever appears inside the last
//! gap.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{sample, NoiseKind, RandomSource};
use crate::queries::QuerySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopKNoise {
    Laplace,
    Exponential,
}

impl TopKNoise {
    pub fn at_scale(self, scale: f64) -> Result<NoiseKind> {
        match self {
            TopKNoise::Laplace => NoiseKind::laplace(scale),
            TopKNoise::Exponential => NoiseKind::exponential(scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    /// `(index, gap)` in descending noisy order.
    pub pairs: Vec<(usize, f64)>,
    /// Budget the run was configured with.
    pub epsilon: f64,
    /// Privacy actually charged: `epsilon / 2` for monotonic inputs.
    pub epsilon_charged: f64,
}

impl TopKResult {
    pub fn indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.pairs.iter().map(|&(_, g)| g).collect()
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }
}

/// Indices of the `count` largest values in descending order; ties go to the
/// lower index.
pub(crate) fn top_indices(values: &[f64], count: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if count < idx.len() {
        idx.select_nth_unstable_by(count, cmp);
        idx.truncate(count);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Noisy values for every query, drawn in index order.
pub(crate) fn noisy_values<R: RandomSource + ?Sized>(
    values: &[f64],
    noise: NoiseKind,
    src: &mut R,
) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&v| Ok(v + sample(noise, src)?))
        .collect()
}

pub fn gap_topk<R: RandomSource + ?Sized>(
    q: &QuerySet,
    k: usize,
    epsilon: f64,
    noise: TopKNoise,
    src: &mut R,
) -> Result<TopKResult> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if k + 1 > q.len() {
        return Err(invalid(format!("top-{k} with gaps needs at least {} queries, got {}", k + 1, q.len())));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let kind = noise.at_scale(2.0 * k as f64 / epsilon)?;
    let noisy = noisy_values(q.values(), kind, src)?;
    let top = top_indices(&noisy, k + 1);
    let pairs = top
        .windows(2)
        .map(|w| (w[0], noisy[w[0]] - noisy[w[1]]))
        .collect();
    Ok(TopKResult {
        pairs,
        epsilon,
        epsilon_charged: if q.is_monotonic() { epsilon / 2.0 } else { epsilon },
    })
}

/// Noisy difference between the queries at ranks `a < b` (1-based, `b <= k`).
pub fn pairwise_gap(r: &TopKResult, a: usize, b: usize) -> Result<f64> {
    if !(1 <= a && a < b && b <= r.k()) {
        return Err(invalid(format!("ranks must satisfy 1 <= a < b <= {}, got a={a} b={b}", r.k())));
    }
    Ok(r.pairs[a - 1..b - 1].iter().map(|&(_, g)| g).sum())
}
