//! Post-processing that turns free gaps into more accurate answers.

use crate::error::{invalid, Result};
use crate::svt::{Branch, SvtConfig, SvtNoise};

/// Direct measurements of the selected top-k queries together with the
/// consecutive gaps released by Top-K selection.
#[derive(Debug, Clone, PartialEq)]
pub struct BlueInput {
    pub alphas: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `var(gap noise) / var(measurement noise)`.
    pub lambda: f64,
}

impl BlueInput {
    pub fn new(alphas: Vec<f64>, gaps: Vec<f64>, lambda: f64) -> Result<Self> {
        if alphas.is_empty() {
            return Err(invalid("need at least one measurement"));
        }
        if gaps.len() + 1 != alphas.len() {
            return Err(invalid(format!(
                "{} measurements need {} gaps, got {}",
                alphas.len(),
                alphas.len() - 1,
                gaps.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { alphas, gaps, lambda })
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }
}

/// Best linear unbiased estimate of the selected answers, in `O(k)`.
///
/// `beta_i = (A + lambda k alpha_i + P - k p_{i-1}) / ((1 + lambda) k)` with
/// `A = sum alpha`, `P = sum (k - i) g_i` and prefix sums `p_i`.
pub fn blue_topk(input: &BlueInput) -> Vec<f64> {
    let k = input.k();
    let kf = k as f64;
    let lambda = input.lambda;
    let total: f64 = input.alphas.iter().sum();
    let weighted: f64 = input
        .gaps
        .iter()
        .enumerate()
        .map(|(i, g)| (k - 1 - i) as f64 * g)
        .sum();
    let denom = (1.0 + lambda) * kf;
    let mut prefix = 0.0;
    let mut out = Vec::with_capacity(k);
    for (i, &alpha) in input.alphas.iter().enumerate() {
        out.push((total + lambda * kf * alpha + weighted - kf * prefix) / denom);
        if i < input.gaps.len() {
            prefix += input.gaps[i];
        }
    }
    out
}

/// `E|beta_i - q_i|^2 / E|alpha_i - q_i|^2 = (1 + lambda k) / (k + lambda k)`.
pub fn blue_variance_ratio(k: usize, lambda: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let k = k as f64;
    Ok((1.0 + lambda * k) / (k + lambda * k))
}

/// Noise variances of a direct measurement and of an SVT gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceModel {
    pub var_alpha: f64,
    pub var_gap: f64,
}

impl VarianceModel {
    pub fn new(var_alpha: f64, var_gap: f64) -> Result<Self> {
        if !(var_alpha > 0.0 && var_gap > 0.0) {
            return Err(invalid("variances must be positive"));
        }
        Ok(Self { var_alpha, var_gap })
    }

    /// Variance of the fused estimate.
    pub fn fused_variance(&self) -> f64 {
        if self.var_gap.is_infinite() {
            return self.var_alpha;
        }
        self.var_alpha * self.var_gap / (self.var_alpha + self.var_gap)
    }

    /// `var(beta) / var(alpha)`.
    pub fn ratio(&self) -> f64 {
        self.fused_variance() / self.var_alpha
    }
}

/// Inverse-variance weighting of direct measurements and gap estimates
/// (`gap + T`).
pub fn fuse_svt(gap_estimates: &[f64], alphas: &[f64], model: &VarianceModel) -> Result<Vec<f64>> {
    if gap_estimates.len() != alphas.len() {
        return Err(invalid(format!(
            "{} gap estimates but {} measurements",
            gap_estimates.len(),
            alphas.len()
        )));
    }
    let wa = 1.0 / model.var_alpha;
    let wg = 1.0 / model.var_gap;
    Ok(gap_estimates
        .iter()
        .zip(alphas)
        .map(|(g, a)| (a * wa + g * wg) / (wa + wg))
        .collect())
}

/// Variances for the "select with half the budget, measure with the other
/// half" protocol around Gap-SVT.
///
/// Measurements use `Lap(2k/eps)`; gaps come from Gap-SVT run at `eps/2`
/// with the given `theta`, noise and monotonicity.
pub fn svt_variance_model(
    k: usize,
    epsilon: f64,
    theta: f64,
    noise: SvtNoise,
    monotonic: bool,
) -> Result<VarianceModel> {
    let cfg = SvtConfig::new(epsilon / 2.0, k, 0.0)
        .with_theta(theta)
        .with_noise(noise)
        .monotonic(monotonic);
    cfg.validate()?;
    let kf = k as f64;
    VarianceModel::new(8.0 * kf * kf / (epsilon * epsilon), cfg.gap_variance(Branch::Middle)?)
}
