//! Empirical privacy auditing.
//!
//! Runs a mechanism many times on two adjacent inputs, histograms the
//! outputs (indices exact, real components binned) and reports the largest
//! log-ratio of bin frequencies. This is a falsification tool: a report
//! above the claimed epsilon plus its Monte-Carlo slack is evidence of a
//! bug, while a report below it proves nothing.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expmech::{exp_mech_blackbox_gap, exp_mech_gumbel, ExpMechResult, UtilityTable};
use crate::hybrid::{estimates_theta, hybrid_estimates, hybrid_identity, HybridResult};
use crate::noise::SeededSource;
use crate::queries::{adjacent_counts, Direction, QuerySet};
use crate::svt::{svt, Answer, Branch, SvtConfig, SvtNoise, SvtResult};
use crate::topk::{gap_topk, TopKNoise, TopKResult};

const CHUNK: usize = 10_000;

/// One component of a mechanism output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Exact(i64),
    Real(f64),
}

/// Mechanism outputs that can be histogrammed.
pub trait AuditOutput {
    fn components(&self) -> Vec<Component>;
}

impl AuditOutput for f64 {
    fn components(&self) -> Vec<Component> {
        vec![Component::Real(*self)]
    }
}

impl AuditOutput for SvtResult {
    fn components(&self) -> Vec<Component> {
        let mut out = Vec::with_capacity(self.items.len() * 2);
        for item in &self.items {
            match item.answer {
                Answer::Below => out.push(Component::Exact(0)),
                Answer::Above { gap, branch } => {
                    out.push(Component::Exact(match branch {
                        Branch::Middle => 1,
                        Branch::Top => 2,
                    }));
                    out.push(Component::Real(gap));
                }
            }
        }
        out
    }
}

impl AuditOutput for TopKResult {
    fn components(&self) -> Vec<Component> {
        pair_components(&self.pairs)
    }
}

impl AuditOutput for HybridResult {
    fn components(&self) -> Vec<Component> {
        pair_components(&self.pairs)
    }
}

impl AuditOutput for ExpMechResult {
    fn components(&self) -> Vec<Component> {
        vec![Component::Exact(self.selected as i64), Component::Real(self.gap)]
    }
}

fn pair_components(pairs: &[(usize, f64)]) -> Vec<Component> {
    pairs
        .iter()
        .flat_map(|&(j, g)| [Component::Exact(j as i64), Component::Real(g)])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub trials: usize,
    pub bin_width: f64,
    /// Bins with fewer hits than this on either input are ignored.
    pub min_count: u64,
    pub seed: u64,
}

impl AuditConfig {
    pub fn new(trials: usize, bin_width: f64, min_count: u64, seed: u64) -> Self {
        Self {
            trials,
            bin_width,
            min_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 10_000 {
            return Err(invalid(format!("an audit needs at least 10^4 trials, got {}", self.trials)));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(invalid(format!("bin width must be positive, got {}", self.bin_width)));
        }
        if self.min_count == 0 {
            return Err(invalid("min count must be at least 1"));
        }
        Ok(())
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self::new(1_000_000, 2.0, 10_000, 0x5eed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub eps_claimed: f64,
    pub eps_hat: f64,
    pub trials: usize,
    /// Number of bins that met the count threshold on both inputs.
    pub bins: usize,
    pub flagged: bool,
    /// Three binomial standard errors of the worst bin's log-ratio.
    #[serde(skip_serializing, default)]
    pub slack: f64,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: eps_hat {:.4} (claimed {:.4}, slack {:.4}, {} bins, {} trials) {} [empirical falsification test]",
            self.mechanism,
            self.eps_hat,
            self.eps_claimed,
            self.slack,
            self.bins,
            self.trials,
            if self.flagged { "FLAGGED" } else { "ok" }
        )
    }
}

type Histogram = HashMap<Vec<i64>, u64>;

fn bin_key(components: &[Component], width: f64) -> Vec<i64> {
    let mut key = Vec::with_capacity(components.len() * 2);
    for c in components {
        match *c {
            Component::Exact(v) => {
                key.push(0);
                key.push(v);
            }
            Component::Real(x) => {
                key.push(1);
                key.push((x / width).floor() as i64);
            }
        }
    }
    key
}

/// SplitMix64 finaliser; decorrelates chunk seeds.
pub(crate) fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn histogram<I, O, F>(mech: &F, input: &I, cfg: &AuditConfig, stream: u64) -> Result<Histogram>
where
    I: Sync + ?Sized,
    O: AuditOutput,
    F: Fn(&I, &mut SeededSource) -> Result<O> + Sync,
{
    let chunks = cfg.trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut src = SeededSource::new(mix_seed(cfg.seed ^ mix_seed(stream) ^ (c as u64)));
            let mut h = Histogram::new();
            let n = CHUNK.min(cfg.trials - c * CHUNK);
            for _ in 0..n {
                let out = mech(input, &mut src)?;
                *h.entry(bin_key(&out.components(), cfg.bin_width)).or_default() += 1;
            }
            Ok(h)
        })
        .try_reduce(Histogram::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            Ok(a)
        })
}

/// Empirical epsilon of `mech` on the adjacent pair `(d, d_prime)`.
pub fn estimate_epsilon<I, O, F>(
    name: &str,
    eps_claimed: f64,
    mech: F,
    d: &I,
    d_prime: &I,
    cfg: &AuditConfig,
) -> Result<AuditReport>
where
    I: Sync + ?Sized,
    O: AuditOutput,
    F: Fn(&I, &mut SeededSource) -> Result<O> + Sync,
{
    cfg.validate()?;
    let h1 = histogram(&mech, d, cfg, 1)?;
    let h2 = histogram(&mech, d_prime, cfg, 2)?;
    let n = cfg.trials as f64;

    let mut bins = 0usize;
    let mut eps_hat = 0.0f64;
    let mut worst_se = 0.0f64;
    for (key, &c1) in &h1 {
        let c2 = h2.get(key).copied().unwrap_or(0);
        if c1 < cfg.min_count || c2 < cfg.min_count {
            continue;
        }
        bins += 1;
        let ratio = ((c1 as f64 + 1.0) / (c2 as f64 + 1.0)).ln().abs();
        if ratio > eps_hat || bins == 1 {
            eps_hat = ratio;
            worst_se = (1.0 / c1 as f64 - 1.0 / n + 1.0 / c2 as f64 - 1.0 / n).max(0.0).sqrt();
        }
    }
    if bins == 0 {
        return Err(Error::NoQualifiedBins);
    }
    let slack = 3.0 * worst_se;
    Ok(AuditReport {
        mechanism: name.to_string(),
        eps_claimed,
        eps_hat,
        trials: cfg.trials,
        bins,
        flagged: eps_hat > eps_claimed + slack,
        slack,
    })
}

/// Upper bound `min(1, eps * gamma * n^2)` on the probability of a tie
/// among `n` queries noised with Laplace noise discretised to multiples of
/// `gamma`.
pub fn tie_probability_bound(epsilon: f64, gamma: f64, n: usize) -> f64 {
    if !(epsilon > 0.0 && gamma > 0.0) || n == 0 {
        return 0.0;
    }
    (epsilon * gamma * (n as f64).powi(2)).min(1.0)
}

/// Neighbouring-database constructions for counting queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    /// One added record increments every count.
    AddRecord,
    /// One count increments.
    Single,
    /// A record moves from one item to another.
    Swap,
}

impl Adjacency {
    pub fn name(self) -> &'static str {
        match self {
            Adjacency::AddRecord => "add",
            Adjacency::Single => "single",
            Adjacency::Swap => "swap",
        }
    }

    pub fn neighbour(self, q: &QuerySet) -> Result<QuerySet> {
        match self {
            Adjacency::AddRecord => {
                let all: Vec<usize> = (0..q.len()).collect();
                adjacent_counts(q, &all, Direction::Up)
            }
            Adjacency::Single => adjacent_counts(q, &[0], Direction::Up),
            Adjacency::Swap => {
                let up = adjacent_counts(q, &[0], Direction::Up)?;
                adjacent_counts(&up, &[q.len() - 1], Direction::Down)
            }
        }
    }

    /// Whether the neighbour moves every answer in the same direction.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Adjacency::Swap)
    }
}

fn audit_queries<O, F>(
    name: &str,
    claimed: f64,
    q: &QuerySet,
    adjacencies: &[Adjacency],
    cfg: &AuditConfig,
    mech: F,
) -> Result<Vec<AuditReport>>
where
    O: AuditOutput,
    F: Fn(&QuerySet, &mut SeededSource) -> Result<O> + Sync,
{
    adjacencies
        .iter()
        .map(|&adj| {
            let neighbour = adj.neighbour(q)?;
            estimate_epsilon(&format!("{name}/{}", adj.name()), claimed, &mech, q, &neighbour, cfg)
        })
        .collect()
}

/// Audits every mechanism on small worst-case inputs at budget `epsilon`.
///
/// General mechanisms are checked against `epsilon` under all three
/// neighbour constructions; Gap Top-K on monotone neighbours is also
/// checked against `epsilon / 2`.
pub fn standard_suite(epsilon: f64, cfg: &AuditConfig) -> Result<Vec<AuditReport>> {
    use Adjacency::*;
    let all = [AddRecord, Single, Swap];
    let monotone = [AddRecord, Single];
    let mut reports = Vec::new();

    let svt_q = QuerySet::new(vec![3.0, 4.0, 5.0], false)?;
    let gap_cfg = SvtConfig::new(epsilon, 1, 4.0).with_theta(0.5);
    reports.extend(audit_queries("gap_svt/laplace", epsilon, &svt_q, &all, cfg, |q, src| {
        svt(q, &gap_cfg, src)
    })?);
    for noise in [SvtNoise::Laplace, SvtNoise::Exponential, SvtNoise::Geometric] {
        let acfg = SvtConfig::new(epsilon, 1, 4.0)
            .with_theta(0.5)
            .with_noise(noise)
            .adaptive(true);
        let name = format!("adaptive_svt/{}", noise_name(noise));
        reports.extend(audit_queries(&name, epsilon, &svt_q, &all, cfg, |q, src| {
            svt(q, &acfg, src)
        })?);
    }

    let topk_q = QuerySet::new(vec![4.0, 3.0, 2.0], false)?;
    let counting_q = topk_q.clone().with_monotonic(true);
    for noise in [TopKNoise::Laplace, TopKNoise::Exponential] {
        let name = format!("gap_topk/{}", match noise {
            TopKNoise::Laplace => "laplace",
            TopKNoise::Exponential => "exp",
        });
        reports.extend(audit_queries(&name, epsilon, &topk_q, &all, cfg, |q, src| {
            gap_topk(q, 2, epsilon, noise, src)
        })?);
        reports.extend(audit_queries(
            &format!("{name}/monotone"),
            epsilon / 2.0,
            &counting_q,
            &monotone,
            cfg,
            |q, src| gap_topk(q, 2, epsilon, noise, src),
        )?);
    }

    let hybrid_q = QuerySet::new(vec![5.0, 3.0, 2.0], false)?;
    reports.extend(audit_queries("hybrid_identity", epsilon, &hybrid_q, &all, cfg, |q, src| {
        hybrid_identity(q, 3.0, 2, epsilon, src)
    })?);
    let theta = estimates_theta(2);
    reports.extend(audit_queries("hybrid_estimates", epsilon, &hybrid_q, &all, cfg, |q, src| {
        hybrid_estimates(q, 3.0, 2, epsilon, theta, src)
    })?);

    let utilities = [0.0, 1.0, 2.0];
    let table = UtilityTable::new(utilities.to_vec(), 1.0, epsilon)?;
    let mut shifted = utilities;
    shifted[2] -= 1.0;
    let neighbour = UtilityTable::new(shifted.to_vec(), 1.0, epsilon)?;
    reports.push(estimate_epsilon("exp_mech/gumbel", epsilon, exp_mech_gumbel, &table, &neighbour, cfg)?);
    reports.push(estimate_epsilon(
        "exp_mech/blackbox",
        epsilon,
        exp_mech_blackbox_gap,
        &table,
        &neighbour,
        cfg,
    )?);
    Ok(reports)
}

fn noise_name(noise: SvtNoise) -> &'static str {
    match noise {
        SvtNoise::Laplace => "laplace",
        SvtNoise::Exponential => "exp",
        SvtNoise::Geometric => "geo",
    }
}
