//! Monte-Carlo experiments behind the `gapdp` command line tool.
//!
//! Each experiment sweeps `k` (or `epsilon`), runs seeded trials in
//! parallel and reports one [`Row`] per point and series. Trials derive
//! their seeds from `(seed, point, trial)`, and per-trial statistics are
//! summed in trial order, so a configuration always produces the same table.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{mix_seed, standard_suite, AuditConfig};
use crate::error::{invalid, Error, Result};
use crate::noise::{sample, NoiseKind, RandomSource, SeededSource};
use crate::postprocess::{blue_topk, blue_variance_ratio, fuse_svt, svt_variance_model, BlueInput};
use crate::queries::{QuerySet, QuerySource};
use crate::stats::mean_var;
use crate::svt::{svt, Branch, SvtConfig, SvtNoise, SvtResult};
use crate::topk::{gap_topk, TopKNoise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    MseReductionSvt,
    MseReductionTopk,
    AdaptiveCounts,
    PrecisionFmeasure,
    RemainingBudget,
    Audit,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::MseReductionSvt,
        Experiment::MseReductionTopk,
        Experiment::AdaptiveCounts,
        Experiment::PrecisionFmeasure,
        Experiment::RemainingBudget,
        Experiment::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::MseReductionSvt => "mse-reduction-svt",
            Experiment::MseReductionTopk => "mse-reduction-topk",
            Experiment::AdaptiveCounts => "adaptive-counts",
            Experiment::PrecisionFmeasure => "precision-fmeasure",
            Experiment::RemainingBudget => "remaining-budget",
            Experiment::Audit => "audit",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| invalid(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseChoice {
    Laplace,
    Exp,
    Geo,
}

impl NoiseChoice {
    pub fn svt(self) -> SvtNoise {
        match self {
            NoiseChoice::Laplace => SvtNoise::Laplace,
            NoiseChoice::Exp => SvtNoise::Exponential,
            NoiseChoice::Geo => SvtNoise::Geometric,
        }
    }

    pub fn topk(self) -> Result<TopKNoise> {
        match self {
            NoiseChoice::Laplace => Ok(TopKNoise::Laplace),
            NoiseChoice::Exp => Ok(TopKNoise::Exponential),
            NoiseChoice::Geo => Err(invalid("top-k selection supports laplace and exp noise only")),
        }
    }
}

impl FromStr for NoiseChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(NoiseChoice::Laplace),
            "exp" => Ok(NoiseChoice::Exp),
            "geo" => Ok(NoiseChoice::Geo),
            _ => Err(invalid(format!("unknown noise {s:?} (expected laplace, exp or geo)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(invalid(format!("unknown format {s:?} (expected csv or json)"))),
        }
    }
}

/// Parses `N`, `N..M` (inclusive) or a comma list of either.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = || invalid(format!("bad k range {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out)
}

/// Parses a comma list of positive epsilons.
pub fn parse_eps_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| match t.trim().parse::<f64>() {
            Ok(e) if e > 0.0 && e.is_finite() => Ok(e),
            _ => Err(invalid(format!("bad epsilon {t:?}"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub source: QuerySource,
    pub epsilons: Vec<f64>,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseChoice,
    /// Treat the queries as monotonic (counting queries).
    pub monotonic: bool,
    /// Overrides the default threshold share of the SVT experiments.
    pub theta: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, source: QuerySource) -> Self {
        Self {
            experiment,
            source,
            epsilons: vec![0.7],
            ks: vec![10],
            trials: 10_000,
            seed: 0,
            noise: NoiseChoice::Laplace,
            monotonic: true,
            theta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.epsilons.is_empty() || self.ks.is_empty() {
            return Err(invalid("epsilon and k ranges must be nonempty"));
        }
        if let Some(&e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(invalid(format!("epsilon must be positive, got {e}")));
        }
        if self.ks.contains(&0) {
            return Err(invalid("k must be at least 1"));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid(format!("theta must lie in (0, 1), got {t}")));
            }
        }
        if self.experiment == Experiment::MseReductionTopk {
            self.noise.topk()?;
        }
        if self.experiment == Experiment::Audit && self.trials < 10_000 {
            return Err(invalid("the audit needs at least 10^4 trials"));
        }
        Ok(())
    }

    /// Threshold share: `1 : k^(2/3)` for monotone queries, `1 : (2k)^(2/3)`
    /// otherwise.
    pub fn theta_for(&self, k: usize) -> f64 {
        self.theta.unwrap_or_else(|| {
            let k = k as f64;
            let m = if self.monotonic { 1.0 } else { 4.0 };
            1.0 / (1.0 + (m * k * k).cbrt())
        })
    }
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub parameter: f64,
    pub empirical: f64,
    pub theoretical: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// A point of the sweep.
#[derive(Debug, Clone, Copy)]
struct Point {
    index: usize,
    epsilon: f64,
    k: usize,
    parameter: f64,
    /// Tag appended to the experiment name when several epsilons are swept
    /// against several ks.
    eps_tag: bool,
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let per_eps = cfg.ks.len() == 1 && cfg.epsilons.len() > 1;
    let eps_tag = cfg.ks.len() > 1 && cfg.epsilons.len() > 1;
    let mut out = Vec::new();
    for &epsilon in &cfg.epsilons {
        for &k in &cfg.ks {
            out.push(Point {
                index: out.len(),
                epsilon,
                k,
                parameter: if per_eps { epsilon } else { k as f64 },
                eps_tag,
            });
        }
    }
    out
}

struct RowBuilder<'a> {
    cfg: &'a ExperimentConfig,
    point: Point,
}

impl RowBuilder<'_> {
    fn row(&self, series: &str, empirical: f64, theoretical: f64, stderr: f64, trials: usize) -> Row {
        let mut name = self.cfg.experiment.name().to_string();
        if !series.is_empty() {
            name.push('/');
            name.push_str(series);
        }
        if self.point.eps_tag {
            name.push_str(&format!("@eps={}", self.point.epsilon));
        }
        Row {
            experiment: name,
            parameter: self.point.parameter,
            empirical,
            theoretical,
            stderr,
            trials,
            seed: self.cfg.seed,
        }
    }
}

/// Runs `trials` independent trials in parallel and returns their results
/// in trial order.
fn run_trials<T, F>(cfg: &ExperimentConfig, point: Point, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut SeededSource) -> Result<T> + Sync,
{
    let stream = mix_seed(cfg.seed) ^ mix_seed((point.index as u64) << 40);
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| f(&mut SeededSource::new(mix_seed(stream ^ t as u64))))
        .collect()
}

/// `1 - sum(b) / sum(a)` with a delta-method standard error.
fn ratio_reduction(pairs: &[(f64, f64)]) -> (f64, f64) {
    let sa: f64 = pairs.iter().map(|p| p.0).sum();
    let sb: f64 = pairs.iter().map(|p| p.1).sum();
    if sa <= 0.0 {
        return (0.0, 0.0);
    }
    let r = sb / sa;
    let n = pairs.len() as f64;
    let abar = sa / n;
    let resid: Vec<f64> = pairs.iter().map(|&(a, b)| b - r * a).collect();
    let se = if pairs.len() > 1 {
        (mean_var(&resid).1 / n).sqrt() / abar
    } else {
        0.0
    };
    (1.0 - r, se)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    match xs.len() {
        0 => (0.0, 0.0),
        1 => (xs[0], 0.0),
        n => {
            let (m, v) = mean_var(xs);
            (m, (v / n as f64).sqrt())
        }
    }
}

/// True threshold at a rank drawn uniformly from `2k..=8k` (clamped to the
/// number of queries).
fn draw_threshold<R: RandomSource + ?Sized>(sorted: &[f64], k: usize, src: &mut R) -> Result<f64> {
    let lo = (2 * k).min(sorted.len());
    let hi = (8 * k).min(sorted.len());
    let u = src.next_uniform()?;
    let rank = (lo + (u * (hi - lo + 1) as f64) as usize).min(hi);
    Ok(sorted[rank - 1])
}

/// Fisher-Yates shuffle driven by the trial's uniform stream.
fn shuffled<R: RandomSource + ?Sized>(q: &QuerySet, src: &mut R) -> Result<(QuerySet, Vec<usize>)> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    for i in (1..order.len()).rev() {
        let j = ((src.next_uniform()? * (i + 1) as f64) as usize).min(i);
        order.swap(i, j);
    }
    let values = order.iter().map(|&i| q.values()[i]).collect();
    Ok((QuerySet::new(values, q.is_monotonic())?, order))
}

fn svt_config(cfg: &ExperimentConfig, epsilon: f64, k: usize, threshold: f64) -> SvtConfig {
    SvtConfig::new(epsilon, k, threshold)
        .with_theta(cfg.theta_for(k))
        .with_noise(cfg.noise.svt())
        .monotonic(cfg.monotonic)
}

/// Runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let q = cfg.source.load(cfg.monotonic)?.with_monotonic(cfg.monotonic);
    if cfg.experiment == Experiment::Audit {
        // the audit uses its own worst-case inputs
        return audit_rows(cfg);
    }
    let sorted = q.sorted_desc();
    let mut rows = Vec::new();
    for point in points(cfg) {
        let b = RowBuilder { cfg, point };
        match cfg.experiment {
            Experiment::MseReductionTopk => mse_topk(cfg, &q, point, &b, &mut rows)?,
            Experiment::MseReductionSvt => mse_svt(cfg, &q, &sorted, point, &b, &mut rows)?,
            Experiment::AdaptiveCounts => adaptive_counts(cfg, &q, &sorted, point, &b, &mut rows)?,
            Experiment::PrecisionFmeasure => precision(cfg, &q, &sorted, point, &b, &mut rows)?,
            Experiment::RemainingBudget => remaining(cfg, &q, &sorted, point, &b, &mut rows)?,
            Experiment::Audit => unreachable!(),
        }
    }
    Ok(rows)
}

fn mse_topk(cfg: &ExperimentConfig, q: &QuerySet, p: Point, b: &RowBuilder, rows: &mut Vec<Row>) -> Result<()> {
    let noise = cfg.noise.topk()?;
    let (k, eps) = (p.k, p.epsilon);
    // Selection gets eps/2 of privacy. Monotone inputs are charged half the
    // configured budget, so they run with the full eps.
    let select_eps = if cfg.monotonic { eps } else { eps / 2.0 };
    let lambda = match (noise, cfg.monotonic) {
        (TopKNoise::Laplace, true) => 1.0,
        (TopKNoise::Exponential, true) => 0.5,
        (TopKNoise::Laplace, false) => 4.0,
        (TopKNoise::Exponential, false) => 2.0,
    };
    let measure = NoiseKind::laplace(2.0 * k as f64 / eps)?;
    let pairs = run_trials(cfg, p, |src| {
        let r = gap_topk(q, k, select_eps, noise, src)?;
        let idx = r.indices();
        let alphas = idx
            .iter()
            .map(|&i| Ok(q.values()[i] + sample(measure, src)?))
            .collect::<Result<Vec<f64>>>()?;
        let gaps = r.gaps()[..k - 1].to_vec();
        let beta = blue_topk(&BlueInput::new(alphas.clone(), gaps, lambda)?);
        let sq = |est: &[f64]| idx.iter().zip(est).map(|(&i, e)| (e - q.values()[i]).powi(2)).sum::<f64>();
        Ok((sq(&alphas), sq(&beta)))
    })?;
    let (red, se) = ratio_reduction(&pairs);
    let theory = 1.0 - blue_variance_ratio(k, lambda)?;
    rows.push(b.row("", red, theory, se, cfg.trials));
    Ok(())
}

fn mse_svt(
    cfg: &ExperimentConfig,
    q: &QuerySet,
    sorted: &[f64],
    p: Point,
    b: &RowBuilder,
    rows: &mut Vec<Row>,
) -> Result<()> {
    let (k, eps) = (p.k, p.epsilon);
    let theta = cfg.theta_for(k);
    let model = svt_variance_model(k, eps, theta, cfg.noise.svt(), cfg.monotonic)?;
    let measure = NoiseKind::laplace(2.0 * k as f64 / eps)?;
    let pairs = run_trials(cfg, p, |src| {
        let t = draw_threshold(sorted, k, src)?;
        let r = svt(q, &svt_config(cfg, eps / 2.0, k, t), src)?;
        let mut idx = Vec::new();
        let mut gap_est = Vec::new();
        for it in r.answered() {
            idx.push(it.index);
            gap_est.push(it.gap().unwrap_or_default() + t);
        }
        let alphas = idx
            .iter()
            .map(|&i| Ok(q.values()[i] + sample(measure, src)?))
            .collect::<Result<Vec<f64>>>()?;
        let beta = fuse_svt(&gap_est, &alphas, &model)?;
        let sq = |est: &[f64]| idx.iter().zip(est).map(|(&i, e)| (e - q.values()[i]).powi(2)).sum::<f64>();
        Ok((sq(&alphas), sq(&beta)))
    })?;
    let (red, se) = ratio_reduction(&pairs);
    rows.push(b.row("", red, 1.0 - model.ratio(), se, cfg.trials));
    Ok(())
}

fn run_svt_pair<R: RandomSource + ?Sized>(
    cfg: &ExperimentConfig,
    q: &QuerySet,
    sorted: &[f64],
    p: Point,
    src: &mut R,
) -> Result<(f64, Vec<usize>, SvtResult, SvtResult)> {
    let t = draw_threshold(sorted, p.k, src)?;
    let (sq, order) = shuffled(q, src)?;
    let base = svt_config(cfg, p.epsilon, p.k, t);
    let classic = svt(&sq, &base, src)?;
    let adaptive = svt(&sq, &base.adaptive(true), src)?;
    Ok((t, order, classic, adaptive))
}

fn adaptive_counts(
    cfg: &ExperimentConfig,
    q: &QuerySet,
    sorted: &[f64],
    p: Point,
    b: &RowBuilder,
    rows: &mut Vec<Row>,
) -> Result<()> {
    let counts = run_trials(cfg, p, |src| {
        let (_, _, classic, adaptive) = run_svt_pair(cfg, q, sorted, p, src)?;
        Ok([
            adaptive.count_branch(Branch::Top) as f64,
            adaptive.count_branch(Branch::Middle) as f64,
            adaptive.answered().count() as f64,
            classic.answered().count() as f64,
        ])
    })?;
    // The theoretical column holds the most answers the budget allows.
    let k = p.k as f64;
    let series = [("top", 2.0 * k - 1.0), ("middle", k), ("total", 2.0 * k - 1.0), ("classic", k)];
    for (j, (name, bound)) in series.into_iter().enumerate() {
        let xs: Vec<f64> = counts.iter().map(|c| c[j]).collect();
        let (m, se) = mean_se(&xs);
        rows.push(b.row(name, m, bound, se, cfg.trials));
    }
    Ok(())
}

/// Precision and F-measure of the reported set against `{i : q_i >= T}`.
fn precision_f(reported: &[usize], truth: &[bool]) -> (Option<f64>, f64) {
    let hits = reported.iter().filter(|&&i| truth[i]).count() as f64;
    let relevant = truth.iter().filter(|&&t| t).count() as f64;
    let precision = (!reported.is_empty()).then(|| hits / reported.len() as f64);
    let recall = if relevant > 0.0 { hits / relevant } else { 0.0 };
    let f = match precision {
        Some(pr) if pr + recall > 0.0 => 2.0 * pr * recall / (pr + recall),
        _ => 0.0,
    };
    (precision, f)
}

fn precision(
    cfg: &ExperimentConfig,
    q: &QuerySet,
    sorted: &[f64],
    p: Point,
    b: &RowBuilder,
    rows: &mut Vec<Row>,
) -> Result<()> {
    let stats = run_trials(cfg, p, |src| {
        let (t, order, classic, adaptive) = run_svt_pair(cfg, q, sorted, p, src)?;
        let truth: Vec<bool> = order.iter().map(|&i| q.values()[i] >= t).collect();
        let ids = |r: &SvtResult| r.answered().map(|it| it.index).collect::<Vec<_>>();
        Ok((precision_f(&ids(&adaptive), &truth), precision_f(&ids(&classic), &truth)))
    })?;
    // The ideal selector reaches 1 on both measures.
    for (name, pick) in [("adaptive", 0usize), ("classic", 1)] {
        let picked: Vec<(Option<f64>, f64)> = stats.iter().map(|s| if pick == 0 { s.0 } else { s.1 }).collect();
        let prec: Vec<f64> = picked.iter().filter_map(|s| s.0).collect();
        let fm: Vec<f64> = picked.iter().map(|s| s.1).collect();
        let (m, se) = mean_se(&prec);
        rows.push(b.row(&format!("{name}-precision"), m, 1.0, se, prec.len()));
        let (m, se) = mean_se(&fm);
        rows.push(b.row(&format!("{name}-f"), m, 1.0, se, cfg.trials));
    }
    Ok(())
}

fn remaining(
    cfg: &ExperimentConfig,
    q: &QuerySet,
    sorted: &[f64],
    p: Point,
    b: &RowBuilder,
    rows: &mut Vec<Row>,
) -> Result<()> {
    let fractions = run_trials(cfg, p, |src| {
        let t = draw_threshold(sorted, p.k, src)?;
        let (sq, _) = shuffled(q, src)?;
        let c = svt_config(cfg, p.epsilon, p.k, t).adaptive(true).stop_after(p.k);
        Ok(svt(&sq, &c, src)?.ledger.remaining_fraction())
    })?;
    // Upper bound: all k answers from the top branch.
    let theory = (1.0 - cfg.theta_for(p.k)) / 2.0;
    let (m, se) = mean_se(&fractions);
    rows.push(b.row("", m, theory, se, cfg.trials));
    Ok(())
}

fn audit_rows(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        let acfg = AuditConfig {
            trials: cfg.trials,
            seed: cfg.seed,
            min_count: (cfg.trials as u64 / 100).max(20),
            ..AuditConfig::default()
        };
        for r in standard_suite(eps, &acfg)? {
            rows.push(Row {
                experiment: format!("audit/{}", r.mechanism),
                parameter: eps,
                empirical: r.eps_hat,
                theoretical: r.eps_claimed,
                stderr: r.slack / 3.0,
                trials: r.trials,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // the exponent after rounding to six digits, so 9.9999996 becomes 10
    let sci = format!("{x:.5e}");
    let mag: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if !(-4..15).contains(&mag) {
        return sci;
    }
    let s = format!("{:.*}", (5 - mag).max(0) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn rounded(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

/// Writes the table as CSV (with header) or as a JSON array.
pub fn emit<W: Write>(rows: &[Row], format: Format, out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(invalid("no results to emit"));
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["experiment", "parameter", "empirical", "theoretical", "stderr", "trials", "seed"])?;
            for r in rows {
                w.write_record([
                    r.experiment.clone(),
                    sig6(r.parameter),
                    sig6(r.empirical),
                    sig6(r.theoretical),
                    sig6(r.stderr),
                    r.trials.to_string(),
                    r.seed.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rounded_rows: Vec<Row> = rows
                .iter()
                .map(|r| Row {
                    parameter: rounded(r.parameter),
                    empirical: rounded(r.empirical),
                    theoretical: rounded(r.theoretical),
                    stderr: rounded(r.stderr),
                    ..r.clone()
                })
                .collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rounded_rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Emits to a file.
pub fn emit_to_path(rows: &[Row], format: Format, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    emit(rows, format, std::io::BufWriter::new(file))
}
