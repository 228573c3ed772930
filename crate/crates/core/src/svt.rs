//! Sparse vector with gap: Gap-SVT and Adaptive SVT.
//!
//! Both mechanisms noise the threshold once and then walk the query list,
//! reporting for each query either `Below` or `Above` with the noisy gap to
//! the noisy threshold. Adaptive SVT first tries a cheap, very noisy test
//! (the top branch, cost `eps2 = eps1 / 2`) and only falls back to the
//! regular test (the middle branch, cost `eps1`) when that fails.
//!
//! Laplace, exponential and geometric noise are supported. One-sided noise
//! is debiased by subtracting its mean from every noisy value, so gaps stay
//! unbiased estimates of `q_i - T`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{sample, NoiseKind, RandomSource};
use crate::queries::QuerySet;

/// Noise family used by the SVT mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvtNoise {
    Laplace,
    Exponential,
    Geometric,
}

impl SvtNoise {
    /// Noise whose log-density changes by at most `rate` per unit shift.
    pub fn at_rate(self, rate: f64) -> Result<NoiseKind> {
        match self {
            SvtNoise::Laplace => NoiseKind::laplace(1.0 / rate),
            SvtNoise::Exponential => NoiseKind::exponential(1.0 / rate),
            SvtNoise::Geometric => NoiseKind::geometric_with_rate(rate),
        }
    }
}

/// Which branch of Adaptive SVT produced an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Top,
    Middle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budgets {
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvtConfig {
    pub epsilon: f64,
    /// Minimum number of above-threshold answers the budget must cover.
    pub k: usize,
    pub threshold: f64,
    /// Share of the budget spent on the threshold.
    pub theta: f64,
    pub noise: SvtNoise,
    pub monotonic: bool,
    pub adaptive: bool,
    /// Stop after this many above-threshold answers even if budget remains.
    pub max_answers: Option<usize>,
}

impl SvtConfig {
    /// Laplace Gap-SVT with the variance-optimal `theta` for non-monotonic
    /// queries.
    pub fn new(epsilon: f64, k: usize, threshold: f64) -> Self {
        let theta = closed_form_theta(k.max(1), 4.0);
        Self {
            epsilon,
            k,
            threshold,
            theta,
            noise: SvtNoise::Laplace,
            monotonic: false,
            adaptive: false,
            max_answers: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_noise(mut self, noise: SvtNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn monotonic(mut self, monotonic: bool) -> Self {
        self.monotonic = monotonic;
        self
    }

    pub fn adaptive(mut self, adaptive: bool) -> Self {
        self.adaptive = adaptive;
        self
    }

    pub fn stop_after(mut self, answers: usize) -> Self {
        self.max_answers = Some(answers);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(invalid(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if !self.threshold.is_finite() {
            return Err(invalid("threshold must be finite"));
        }
        Ok(())
    }

    pub fn budgets(&self) -> Budgets {
        let eps0 = self.theta * self.epsilon;
        let eps1 = (1.0 - self.theta) * self.epsilon / self.k as f64;
        Budgets {
            eps0,
            eps1,
            eps2: eps1 / 2.0,
        }
    }

    pub fn threshold_noise(&self) -> Result<NoiseKind> {
        self.noise.at_rate(self.budgets().eps0)
    }

    /// Per-query noise of the given branch.
    pub fn query_noise(&self, branch: Branch) -> Result<NoiseKind> {
        let b = self.budgets();
        let rate = match branch {
            Branch::Middle => b.eps1,
            Branch::Top => b.eps2,
        };
        // non-monotonic queries need twice the noise
        let rate = if self.monotonic { rate } else { rate / 2.0 };
        self.noise.at_rate(rate)
    }

    /// Standard deviation of the top-branch noise; the top branch fires when
    /// the noisy gap is at least `2 sigma`.
    pub fn sigma(&self) -> Result<f64> {
        Ok(self.query_noise(Branch::Top)?.std_dev())
    }

    /// Variance of a gap reported from `branch`.
    pub fn gap_variance(&self, branch: Branch) -> Result<f64> {
        Ok(self.threshold_noise()?.variance() + self.query_noise(branch)?.variance())
    }
}

/// Outcome for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "outcome")]
pub enum Answer {
    Below,
    Above { gap: f64, branch: Branch },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvtItem {
    pub index: usize,
    pub answer: Answer,
    pub budget_used: f64,
}

impl SvtItem {
    pub fn gap(&self) -> Option<f64> {
        match self.answer {
            Answer::Above { gap, .. } => Some(gap),
            Answer::Below => None,
        }
    }

    pub fn branch(&self) -> Option<Branch> {
        match self.answer {
            Answer::Above { branch, .. } => Some(branch),
            Answer::Below => None,
        }
    }
}

/// Privacy budget account of one mechanism run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub allocated: f64,
    pub consumed: f64,
}

impl BudgetLedger {
    pub fn new(allocated: f64, consumed: f64) -> Self {
        Self {
            allocated,
            consumed: consumed.clamp(0.0, allocated),
        }
    }

    pub fn remaining(&self) -> f64 {
        self.allocated - self.consumed
    }

    pub fn remaining_fraction(&self) -> f64 {
        self.remaining() / self.allocated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvtResult {
    pub items: Vec<SvtItem>,
    pub ledger: BudgetLedger,
}

impl SvtResult {
    /// Above-threshold items in the order they were reported.
    pub fn answered(&self) -> impl Iterator<Item = &SvtItem> {
        self.items.iter().filter(|it| it.gap().is_some())
    }

    pub fn count_branch(&self, branch: Branch) -> usize {
        self.items.iter().filter(|it| it.branch() == Some(branch)).count()
    }
}

/// Gap-SVT: every above-threshold answer costs `eps1`.
pub fn gap_svt<R: RandomSource + ?Sized>(q: &QuerySet, cfg: &SvtConfig, src: &mut R) -> Result<SvtResult> {
    if cfg.adaptive {
        return Err(invalid("gap_svt expects a non-adaptive configuration"));
    }
    run(q, cfg, src, false)
}

/// Adaptive SVT: answers far above the threshold cost only `eps2`.
pub fn adaptive_svt<R: RandomSource + ?Sized>(
    q: &QuerySet,
    cfg: &SvtConfig,
    src: &mut R,
) -> Result<SvtResult> {
    if !cfg.adaptive {
        return Err(invalid("adaptive_svt expects an adaptive configuration"));
    }
    run(q, cfg, src, true)
}

/// Dispatches on `cfg.adaptive`.
pub fn svt<R: RandomSource + ?Sized>(q: &QuerySet, cfg: &SvtConfig, src: &mut R) -> Result<SvtResult> {
    run(q, cfg, src, cfg.adaptive)
}

fn run<R: RandomSource + ?Sized>(
    q: &QuerySet,
    cfg: &SvtConfig,
    src: &mut R,
    adaptive: bool,
) -> Result<SvtResult> {
    cfg.validate()?;
    if cfg.noise == SvtNoise::Geometric {
        q.check_integral()?;
    }
    if cfg.monotonic && !q.is_monotonic() {
        return Err(invalid("monotonic noise scales need a monotonic query set"));
    }
    let budgets = cfg.budgets();
    let threshold_noise = cfg.threshold_noise()?;
    let top_noise = cfg.query_noise(Branch::Top)?;
    let middle_noise = cfg.query_noise(Branch::Middle)?;
    let two_sigma = 2.0 * top_noise.std_dev();

    let noisy_threshold = cfg.threshold + sample(threshold_noise, src)? - threshold_noise.mean();

    // Spending is tracked in whole units of eps2 (eps1 = 2 units) so the
    // stopping rule `cost > eps - eps1` is evaluated exactly:
    // eps0 + u * eps2 > eps - 2 eps2  <=>  u > 2(k - 1).
    let unit_limit = 2 * (cfg.k as u64 - 1);
    let mut units = 0u64;
    let mut answered = 0usize;
    let mut items = Vec::new();

    for (index, &value) in q.values().iter().enumerate() {
        let top_value = if adaptive {
            Some(value + sample(top_noise, src)? - top_noise.mean())
        } else {
            None
        };
        let middle_value = value + sample(middle_noise, src)? - middle_noise.mean();

        let item = match top_value {
            Some(v) if v - noisy_threshold >= two_sigma => {
                units += 1;
                SvtItem {
                    index,
                    answer: Answer::Above {
                        gap: v - noisy_threshold,
                        branch: Branch::Top,
                    },
                    budget_used: budgets.eps2,
                }
            }
            _ if middle_value - noisy_threshold >= 0.0 => {
                units += 2;
                SvtItem {
                    index,
                    answer: Answer::Above {
                        gap: middle_value - noisy_threshold,
                        branch: Branch::Middle,
                    },
                    budget_used: budgets.eps1,
                }
            }
            _ => SvtItem {
                index,
                answer: Answer::Below,
                budget_used: 0.0,
            },
        };
        if item.gap().is_some() {
            answered += 1;
        }
        items.push(item);

        if cfg.max_answers.is_some_and(|m| answered >= m) || units > unit_limit {
            break;
        }
    }

    let consumed = budgets.eps0 + units as f64 * budgets.eps2;
    Ok(SvtResult {
        items,
        ledger: BudgetLedger::new(cfg.epsilon, consumed),
    })
}

fn closed_form_theta(k: usize, multiplier: f64) -> f64 {
    let k = k as f64;
    1.0 / (1.0 + (multiplier * k * k).cbrt())
}

/// Variance of `Geo(1 - e^{-a})`, i.e. `e^a / (e^a - 1)^2`.
fn geometric_variance_at_rate(a: f64) -> f64 {
    let s = (a / 2.0).sinh();
    1.0 / (4.0 * s * s)
}

/// Budget share for the threshold that minimises the gap variance of the
/// given branch.
///
/// Laplace and exponential noise have closed forms. For geometric noise the
/// variance `v(theta eps) + v(c (1 - theta) eps / k)` is convex in `theta`
/// and minimised numerically; `epsilon` only matters in that case.
pub fn theta_optimal(k: usize, branch: Branch, monotonic: bool, noise: SvtNoise, epsilon: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    // (query noise scale relative to 1/eps1)^2 * k^2 is the cube-root argument
    let (multiplier, rate_factor) = match (branch, monotonic) {
        (Branch::Middle, true) => (1.0, 1.0),
        (Branch::Middle, false) | (Branch::Top, true) => (4.0, 0.5),
        (Branch::Top, false) => (16.0, 0.25),
    };
    match noise {
        SvtNoise::Laplace | SvtNoise::Exponential => Ok(closed_form_theta(k, multiplier)),
        SvtNoise::Geometric => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(invalid("epsilon must be positive"));
            }
            let kf = k as f64;
            let variance = |theta: f64| {
                geometric_variance_at_rate(theta * epsilon)
                    + geometric_variance_at_rate(rate_factor * (1.0 - theta) * epsilon / kf)
            };
            Ok(golden_section_min(variance, 1e-12, 1.0 - 1e-12, 1e-10))
        }
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

/// `P(eta_i - eta >= -t)` for independent zero-mean Laplace `eta` (scale
/// `1/eps0`) and `eta_i` (scale `1/eps_star`).
pub fn tail_probability(t: f64, eps0: f64, eps_star: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(invalid(format!("t must be non-negative, got {t}")));
    }
    if !(eps0 > 0.0 && eps_star > 0.0) {
        return Err(invalid("rates must be positive"));
    }
    let rel = (eps0 - eps_star).abs() / eps0.max(eps_star);
    if rel < 1e-7 {
        let e = 0.5 * (eps0 + eps_star);
        return Ok(1.0 - (2.0 + e * t) / 4.0 * (-e * t).exp());
    }
    let (a2, b2) = (eps0 * eps0, eps_star * eps_star);
    Ok(1.0 - (a2 * (-eps_star * t).exp() - b2 * (-eps0 * t).exp()) / (2.0 * (a2 - b2)))
}

/// Smallest `t` with `tail_probability(t) = level`, by bisection.
///
/// `gap + T - t` is then a lower confidence bound on the true answer.
pub fn lower_confidence_t(level: f64, eps0: f64, eps_star: f64) -> Result<f64> {
    if !(level > 0.5 && level < 1.0) {
        return Err(invalid(format!("confidence level must lie in (0.5, 1), got {level}")));
    }
    let f = |t: f64| tail_probability(t, eps0, eps_star);
    let mut lo = 0.0;
    let mut hi = 1.0 / eps0.min(eps_star);
    while f(hi)? < level {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
