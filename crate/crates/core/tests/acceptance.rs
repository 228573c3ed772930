//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use gapdp::audit::{estimate_epsilon, standard_suite, tie_probability_bound, AuditConfig};
use gapdp::expmech::{exp_mech_blackbox_gap, exp_mech_gumbel, log_sum_exp, log_sum_exp_excluding, UtilityTable};
use gapdp::harness::{run_experiment, Experiment, ExperimentConfig, NoiseChoice};
use gapdp::hybrid::{estimates_theta, hybrid_estimates, hybrid_identity};
use gapdp::noise::{sample, sample_logistic_nonneg, variance_of, NoiseKind, ReplaySource, SeededSource};
use gapdp::postprocess::{blue_topk, blue_variance_ratio, fuse_svt, svt_variance_model, BlueInput, VarianceModel};
use gapdp::queries::{adjacent_counts, item_counts, load_transactions, Direction, QuerySet, QuerySource, SyntheticSpec};
use gapdp::stats::{ks_one_sample, ks_two_sample};
use gapdp::svt::{
    gap_svt, adaptive_svt, lower_confidence_t, tail_probability, theta_optimal, Answer, Branch, SvtConfig, SvtNoise,
};
use gapdp::topk::{gap_topk, pairwise_gap, TopKNoise};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn zipf() -> QuerySource {
    QuerySource::Synthetic(SyntheticSpec::Zipf { n: 1000, scale: 1e6 })
}

fn topk_reduction(noise: NoiseChoice, theory: impl Fn(f64) -> f64) -> Outcome {
    let mut cfg = ExperimentConfig::new(Experiment::MseReductionTopk, zipf());
    cfg.epsilons = vec![0.7];
    cfg.ks = vec![2, 5, 10, 25];
    cfg.trials = 10_000;
    cfg.seed = 2024;
    cfg.noise = noise;
    cfg.monotonic = true;
    let rows = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &rows {
        let expected = theory(r.parameter);
        let diff = (r.empirical - expected) * 100.0;
        ok &= diff.abs() <= 3.0;
        parts.push(format!("k={} {:.2}% vs {:.2}%", r.parameter, r.empirical * 100.0, expected * 100.0));
    }
    check(ok && rows.len() == 4, parts.join(", "))
}

fn criterion_1() -> Outcome {
    topk_reduction(NoiseChoice::Laplace, |k| (k - 1.0) / (2.0 * k))
}

fn criterion_2() -> Outcome {
    topk_reduction(NoiseChoice::Exp, |k| (2.0 * k - 2.0) / (3.0 * k))
}

fn criterion_3() -> Outcome {
    let (k, eps, trials) = (10usize, 0.7, 10_000);
    let kf = k as f64;
    let c = (kf * kf).cbrt();
    let theta = 1.0 / (1.0 + c);
    let threshold = 1000.0;
    let q = QuerySet::counting(vec![threshold + 1e5; 3 * k]).unwrap();
    let measure = NoiseKind::laplace(2.0 * kf / eps).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (noise, extra) in [(SvtNoise::Laplace, 1.0), (SvtNoise::Exponential, 2.0)] {
        let expected = (1.0 + c).powi(3) / ((1.0 + c).powi(3) + extra * kf * kf);
        let model = svt_variance_model(k, eps, theta, noise, true).unwrap();
        let cfg = SvtConfig::new(eps / 2.0, k, threshold).with_theta(theta).with_noise(noise).monotonic(true);
        let mut src = SeededSource::new(33);
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..trials {
            let r = gap_svt(&q, &cfg, &mut src).unwrap();
            let mut gaps = Vec::new();
            let mut alphas = Vec::new();
            let mut truth = Vec::new();
            for it in r.answered() {
                let v = q.values()[it.index];
                gaps.push(it.gap().unwrap() + threshold);
                alphas.push(v + sample(measure, &mut src).unwrap());
                truth.push(v);
            }
            let beta = fuse_svt(&gaps, &alphas, &model).unwrap();
            for i in 0..truth.len() {
                sa += (alphas[i] - truth[i]).powi(2);
                sb += (beta[i] - truth[i]).powi(2);
            }
        }
        let ratio = sb / sa;
        ok &= (ratio - expected).abs() <= 0.03;
        parts.push(format!("{noise:?} ratio {ratio:.4} vs {expected:.4}"));
    }
    check(ok, parts.join(", "))
}

/// Dense generalised least squares for `alpha = q + xi`, `g = N (q + eta)`
/// with `var(eta) = lambda var(xi)`.
fn gls(alphas: &[f64], gaps: &[f64], lambda: f64) -> DVector<f64> {
    let k = alphas.len();
    let n = DMatrix::from_fn(k - 1, k, |i, j| {
        if j == i {
            1.0
        } else if j == i + 1 {
            -1.0
        } else {
            0.0
        }
    });
    let mut a = DMatrix::zeros(2 * k - 1, k);
    a.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
    a.view_mut((k, 0), (k - 1, k)).copy_from(&n);
    let mut cov = DMatrix::zeros(2 * k - 1, 2 * k - 1);
    cov.view_mut((0, 0), (k, k)).copy_from(&DMatrix::identity(k, k));
    cov.view_mut((k, k), (k - 1, k - 1)).copy_from(&(&n * n.transpose() * lambda));
    let w = cov.try_inverse().unwrap();
    let y = DVector::from_iterator(2 * k - 1, alphas.iter().chain(gaps).copied());
    let normal = a.transpose() * &w * &a;
    normal.try_inverse().unwrap() * a.transpose() * w * y
}

/// Closed-form `X` and `Y` with `beta = (X alpha + Y g) / ((1 + lambda) k)`.
fn closed_form_matrices(k: usize, lambda: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let kf = k as f64;
    let x = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 + lambda * kf } else { 1.0 });
    let first = DMatrix::from_fn(k, k - 1, |_, j| (k - 1 - j) as f64);
    let second = DMatrix::from_fn(k, k - 1, |i, j| if i > j { kf } else { 0.0 });
    (x, first - second)
}

fn criterion_4() -> Outcome {
    let mut src = SeededSource::new(4);
    let mut uni = |lo: f64, hi: f64| lo + (hi - lo) * gapdp::RandomSource::next_uniform(&mut src).unwrap();
    let (mut worst_gls, mut worst_xy) = (0.0f64, 0.0f64);
    for inst in 0..100 {
        let k = 2 + inst % 4;
        let lambda = uni(0.1, 5.0);
        let alphas: Vec<f64> = (0..k).map(|_| uni(-1000.0, 1000.0)).collect();
        let gaps: Vec<f64> = (0..k - 1).map(|_| uni(0.0, 200.0)).collect();
        let beta = blue_topk(&BlueInput::new(alphas.clone(), gaps.clone(), lambda).unwrap());
        let oracle = gls(&alphas, &gaps, lambda);
        let (x, y) = closed_form_matrices(k, lambda);
        let matrix = (x * DVector::from_vec(alphas.clone()) + y * DVector::from_vec(gaps.clone()))
            / ((1.0 + lambda) * k as f64);
        for i in 0..k {
            let scale = oracle[i].abs().max(1.0);
            worst_gls = worst_gls.max((beta[i] - oracle[i]).abs() / scale);
            worst_xy = worst_xy.max((beta[i] - matrix[i]).abs() / matrix[i].abs().max(1.0));
        }
    }
    // the worked k = 4 example: X = [17 1 1 1; ...] / 20, Y row 1 = [3 2 1] / 20
    let (x4, y4) = closed_form_matrices(4, 4.0);
    let example = x4[(0, 0)] == 17.0
        && x4[(0, 1)] == 1.0
        && y4.row(0).iter().eq([3.0, 2.0, 1.0].iter())
        && y4.row(1).iter().eq([-1.0, 2.0, 1.0].iter())
        && y4.row(3).iter().eq([-1.0, -2.0, -3.0].iter());
    check(
        worst_gls < 1e-9 && worst_xy < 1e-10 && example,
        format!("max rel err vs GLS {worst_gls:.2e}, vs X/Y {worst_xy:.2e}, k=4 worked example {example}"),
    )
}

fn criterion_5() -> Outcome {
    let runs = 100_000;
    let scaled = vec![0.3, -1.2, 1.7, 0.9];
    let t = UtilityTable::from_scaled(scaled.clone()).unwrap();
    let probs = t.probabilities();
    let lse = log_sum_exp(&scaled);
    let gumbel = NoiseKind::Gumbel { location: 0.0 };
    let mut counts = [0usize; 4];
    let mut maxima = Vec::with_capacity(runs);
    let mut consistent = true;
    for i in 0..runs {
        let seed = 5_000_000 + i as u64;
        let r = exp_mech_gumbel(&t, &mut SeededSource::new(seed)).unwrap();
        counts[r.selected] += 1;
        // the same stream again, to recover the winning noisy score
        let mut again = SeededSource::new(seed);
        let noisy: Vec<f64> = scaled.iter().map(|x| x + sample(gumbel, &mut again).unwrap()).collect();
        let max = noisy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        consistent &= noisy[r.selected] == max;
        maxima.push(max);
    }
    let freq_err = (0..4).map(|i| (counts[i] as f64 / runs as f64 - probs[i]).abs()).fold(0.0, f64::max);
    let ks = ks_one_sample(&maxima, |x| (-(-(x - lse)).exp()).exp());
    check(
        freq_err < 0.01 && ks < 0.01 && consistent,
        format!("max freq error {freq_err:.4}, KS(max, Gumbel(lse)) {ks:.4}"),
    )
}

fn criterion_6() -> Outcome {
    let runs = 100_000;
    let t = UtilityTable::from_scaled(vec![0.0, 1.0, 2.0]).unwrap();
    let mut s7 = SeededSource::new(6);
    let mut s8 = SeededSource::new(66);
    let a: Vec<_> = (0..runs).map(|_| exp_mech_gumbel(&t, &mut s7).unwrap()).collect();
    let b: Vec<_> = (0..runs).map(|_| exp_mech_blackbox_gap(&t, &mut s8).unwrap()).collect();
    let (mut freq_err, mut worst_ks) = (0.0f64, 0.0f64);
    for s in 0..3 {
        let ga: Vec<f64> = a.iter().filter(|r| r.selected == s).map(|r| r.gap).collect();
        let gb: Vec<f64> = b.iter().filter(|r| r.selected == s).map(|r| r.gap).collect();
        freq_err = freq_err.max((ga.len() as f64 - gb.len() as f64).abs() / runs as f64);
        worst_ks = worst_ks.max(ks_two_sample(&ga, &gb));
    }
    check(
        freq_err < 0.01 && worst_ks < 0.02,
        format!("max freq difference {freq_err:.4}, max per-outcome gap KS {worst_ks:.4}"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = AuditConfig::default();
    let reports = standard_suite(1.0, &cfg).map_err(|e| e.to_string())?;
    let flagged: Vec<String> = reports.iter().filter(|r| r.flagged).map(|r| r.to_string()).collect();
    let worst = reports
        .iter()
        .map(|r| r.eps_hat - r.eps_claimed)
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = reports.iter().filter(|r| r.mechanism.contains("monotone")).count();
    let all_below = reports.iter().all(|r| r.eps_hat <= r.eps_claimed + r.slack);

    // calibration on the scalar Laplace mechanism with known epsilon 0.5
    let lap = NoiseKind::laplace(2.0).unwrap();
    let calib = estimate_epsilon(
        "laplace-scalar",
        0.5,
        |x: &f64, src: &mut SeededSource| Ok(*x + sample(lap, src)?),
        &0.0,
        &1.0,
        &AuditConfig::new(1_000_000, 0.1, 10_000, 7),
    )
    .map_err(|e| e.to_string())?;
    let calibrated = (0.40..=0.55).contains(&calib.eps_hat);
    check(
        flagged.is_empty() && all_below && monotone == 4 && calibrated,
        format!(
            "{} audits, {} flagged, max eps_hat - claimed {worst:.3}; scalar Laplace eps_hat {:.3}{}",
            reports.len(),
            flagged.len(),
            calib.eps_hat,
            if flagged.is_empty() { String::new() } else { format!(" [{}]", flagged.join("; ")) }
        ),
    )
}

fn criterion_8() -> Outcome {
    let runs = 10_000;
    let q = QuerySet::new((0..12).map(|i| (i * 37 % 50) as f64).collect(), false).unwrap();
    let mut src = SeededSource::new(8);
    let mut mismatches = 0;
    let mut ts = [0usize; 6];
    for run in 0..runs {
        let k = 1 + run % 5;
        let eps = 0.5 + (run % 7) as f64 * 0.25;
        let threshold = (run % 60) as f64;
        let r = hybrid_identity(&q, threshold, k, eps, &mut src).unwrap();
        // cost (t / k) eps
        if r.actual_cost != r.t() as f64 / k as f64 * eps {
            mismatches += 1;
        }
        ts[r.t()] += 1;
        let theta = if run % 2 == 0 { estimates_theta(k) } else { 0.3 };
        let r = hybrid_estimates(&q, threshold, k, eps, theta, &mut src).unwrap();
        // cost (theta + (t / k)(1 - theta)) eps, and exactly eps at t = k
        let expected = if r.t() == k { eps } else { (theta + r.t() as f64 / k as f64 * (1.0 - theta)) * eps };
        if r.actual_cost != expected {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0 && ts.iter().filter(|&&c| c > 0).count() >= 3,
        format!("{} runs, {mismatches} mismatches, identity t histogram {:?}", 2 * runs, &ts[1..]),
    )
}

fn criterion_9() -> Outcome {
    let draws = 1_000_000;
    let eps0 = 1.0;
    let mut parts = Vec::new();
    let mut ok = true;
    for eps_star in [1.0, 2.0] {
        let t = lower_confidence_t(0.95, eps0, eps_star).map_err(|e| e.to_string())?;
        let eta = NoiseKind::laplace(1.0 / eps0).unwrap();
        let eta_i = NoiseKind::laplace(1.0 / eps_star).unwrap();
        let mut src = SeededSource::new(9 + eps_star as u64);
        let covered = (0..draws)
            .filter(|_| {
                let x = sample(eta_i, &mut src).unwrap() - sample(eta, &mut src).unwrap();
                x >= -t
            })
            .count();
        let rate = covered as f64 / draws as f64;
        ok &= (rate - 0.95).abs() <= 0.003;
        parts.push(format!("eps*={eps_star}: t={t:.4} coverage {rate:.4}"));
    }
    check(ok, parts.join(", "))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 1..=50usize {
        let theta = theta_optimal(k, Branch::Middle, true, SvtNoise::Geometric, 0.7).map_err(|e| e.to_string())?;
        let reference = 1.0 / (1.0 + ((k * k) as f64).cbrt());
        worst = worst.max((theta - reference).abs());
    }
    let elapsed = start.elapsed();
    check(
        worst < 0.02 && elapsed < Duration::from_secs(5),
        format!("max |theta_geo - 1/(1+cbrt(k^2))| = {worst:.2e} in {elapsed:.2?}"),
    )
}

fn zero(n: usize) -> ReplaySource {
    ReplaySource::repeat(0.5, n).unwrap()
}

fn exp_zero(n: usize) -> ReplaySource {
    ReplaySource::repeat(0.0, n).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Numerical `P(eta_i - eta <= t)` for Laplace rates `a` (eta) and `b`
/// (eta_i), by midpoint integration of the convolution.
fn convolution_cdf(t: f64, a: f64, b: f64) -> f64 {
    let lap_cdf = |x: f64, rate: f64| if x < 0.0 { 0.5 * (rate * x).exp() } else { 1.0 - 0.5 * (-rate * x).exp() };
    let n = 400_000;
    let (lo, hi) = (-60.0, 60.0);
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            let y = lo + (i as f64 + 0.5) * h;
            0.5 * a * (-a * y.abs()).exp() * lap_cdf(t + y, b) * h
        })
        .sum()
}

fn criterion_11() -> Outcome {
    let mut failures: Vec<&str> = Vec::new();
    let mut checks = 0;
    let mut case = |name: &'static str, ok: bool| {
        checks += 1;
        if !ok {
            failures.push(name);
        }
    };

    // noise
    let lap1 = NoiseKind::laplace(1.0).unwrap();
    case("laplace median", sample(lap1, &mut zero(1)).unwrap() == 0.0);
    let g = sample(NoiseKind::Gumbel { location: 0.0 }, &mut zero(1)).unwrap();
    case("gumbel median", close(g, 0.366_512_920_581_664_3, 1e-12));
    case(
        "conditional logistic ln 3",
        close(sample_logistic_nonneg(0.0, &mut zero(1)).unwrap(), 3f64.ln(), 1e-12),
    );
    case("laplace variance", variance_of(NoiseKind::laplace(2.0).unwrap()) == 8.0);
    case("exponential variance", variance_of(NoiseKind::exponential(3.0).unwrap()) == 9.0);
    case("geometric variance", variance_of(NoiseKind::geometric(0.5).unwrap()) == 2.0);
    case("replay exhaustion", sample(lap1, &mut zero(0)).is_err());

    // queries
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let db = load_transactions(write("a", "1 2\n2 3\n")).unwrap();
    let sets = |v: &[&[u32]]| v.iter().map(|s| s.iter().copied().collect()).collect::<Vec<std::collections::BTreeSet<u32>>>();
    case("parse transactions", db.transactions() == sets(&[&[1, 2], &[2, 3]]).as_slice());
    case("item counts", item_counts(&db).values() == [0.0, 1.0, 2.0, 1.0]);
    let db = load_transactions(write("b", "5 5 7\n")).unwrap();
    case("dedup within line", db.transactions() == sets(&[&[5, 7]]).as_slice());
    case("empty file", load_transactions(write("c", "")).is_err());
    let single = item_counts(&load_transactions(write("d", "7\n")).unwrap());
    case("single transaction", single.len() == 8 && single.values()[7] == 1.0 && single.values()[..7].iter().all(|&v| v == 0.0));
    let q35 = QuerySet::counting(vec![3.0, 5.0]).unwrap();
    case("adjacent up", adjacent_counts(&q35, &[0, 1], Direction::Up).unwrap().values() == [4.0, 6.0]);
    case("adjacent identity", adjacent_counts(&q35, &[], Direction::Down).unwrap().values() == [3.0, 5.0]);
    let q02 = QuerySet::counting(vec![0.0, 2.0]).unwrap();
    case("adjacent negative", adjacent_counts(&q02, &[0], Direction::Down).is_err());

    // svt
    let q = QuerySet::new(vec![3.0, 7.0, 6.0], false).unwrap();
    let cfg = SvtConfig::new(1.0, 2, 5.0).with_theta(0.5);
    let r = gap_svt(&q, &cfg, &mut zero(4)).unwrap();
    let e1 = cfg.budgets().eps1;
    case(
        "gap svt trace",
        r.items.len() == 3
            && r.items[0].answer == Answer::Below
            && r.items[1].answer == Answer::Above { gap: 2.0, branch: Branch::Middle }
            && r.items[2].answer == Answer::Above { gap: 1.0, branch: Branch::Middle }
            && r.items[1].budget_used == e1
            && close(r.ledger.consumed, 1.0, 1e-12),
    );
    let cfg_exp = cfg.clone().with_noise(SvtNoise::Exponential);
    let r = gap_svt(&q, &cfg_exp, &mut exp_zero(4)).unwrap();
    let n0 = cfg_exp.threshold_noise().unwrap();
    let n1 = cfg_exp.query_noise(Branch::Middle).unwrap();
    case(
        "exponential debias trace",
        n0.mean() == 2.0 && n1.mean() == 8.0 && r.items.iter().all(|it| it.answer == Answer::Below),
    );
    let q = QuerySet::new(vec![40.0, 15.0, 3.0, 30.0], false).unwrap();
    let cfg = SvtConfig::new(2.0, 2, 10.0).with_theta(0.5).adaptive(true);
    let r = adaptive_svt(&q, &cfg, &mut zero(9)).unwrap();
    let b = cfg.budgets();
    case(
        "adaptive svt trace",
        b.eps0 == 1.0
            && b.eps1 == 0.5
            && b.eps2 == 0.25
            && close(2.0 * cfg.sigma().unwrap(), 16.0 * 2f64.sqrt(), 1e-9)
            && r.items.len() == 2
            && r.items[0].answer == Answer::Above { gap: 30.0, branch: Branch::Top }
            && r.items[0].budget_used == 0.25
            && r.items[1].answer == Answer::Above { gap: 5.0, branch: Branch::Middle }
            && r.items[1].budget_used == 0.5
            && close(r.ledger.consumed, 1.75, 1e-12),
    );
    let big = QuerySet::new(vec![1e6; 50], false).unwrap();
    let r = adaptive_svt(&big, &cfg, &mut zero(101)).unwrap();
    let expected_top = ((2.0 - 1.0 - 0.5) / 0.25f64).floor() as usize + 1;
    case("top-branch stopping rule", r.count_branch(Branch::Top) == expected_top && r.answered().count() == 3);
    let far = QuerySet::new(vec![-990.0], false).unwrap();
    let r = adaptive_svt(&far, &cfg, &mut zero(3)).unwrap();
    case("far below", r.items.len() == 1 && r.items[0].answer == Answer::Below && r.ledger.consumed == b.eps0);
    case(
        "theta monotonic k=1",
        theta_optimal(1, Branch::Middle, true, SvtNoise::Laplace, 1.0).unwrap() == 0.5,
    );
    case(
        "theta non-monotonic k=1",
        {
            let theta = theta_optimal(1, Branch::Middle, false, SvtNoise::Laplace, 1.0).unwrap();
            // the quoted 0.38647 is 1/(1+cbrt 4) = 0.386488 rounded loosely
            close(theta, 1.0 / (1.0 + 4f64.cbrt()), 1e-12) && close(theta, 0.38647, 5e-5)
        },
    );
    case("tail at 0", close(tail_probability(0.0, 1.0, 2.0).unwrap(), 0.5, 1e-15));
    case("tail at 0 equal rates", close(tail_probability(0.0, 1.0, 1.0).unwrap(), 0.5, 1e-15));
    let tail = tail_probability(1.0, 1.0, 2.0).unwrap();
    case("tail at 1", close(tail, 0.777303, 1e-6) && close(tail, convolution_cdf(1.0, 1.0, 2.0), 1e-6));
    let t95 = lower_confidence_t(0.95, 1.0, 2.0).unwrap();
    case("confidence round trip", close(tail_probability(t95, 1.0, 2.0).unwrap(), 0.95, 1e-9));
    let t_eq = lower_confidence_t(0.95, 1.0, 1.0).unwrap();
    case("confidence equal rates", close((2.0 + t_eq) / 4.0 * (-t_eq).exp(), 0.05, 1e-9));
    case("confidence near 0.5", lower_confidence_t(0.5 + 1e-9, 1.0, 2.0).unwrap() < 1e-6);
    case("confidence rejects 0.5", lower_confidence_t(0.5, 1.0, 2.0).is_err());

    // topk
    let q = QuerySet::new(vec![5.0, 3.0, 9.0, 1.0], false).unwrap();
    let r = gap_topk(&q, 2, 1.0, TopKNoise::Laplace, &mut zero(4)).unwrap();
    case("topk trace", r.pairs == vec![(2, 4.0), (0, 2.0)]);
    let r3 = gap_topk(&QuerySet::new(vec![9.0, 5.0, 3.0, 1.0], false).unwrap(), 3, 1.0, TopKNoise::Laplace, &mut zero(4))
        .unwrap();
    case("pairwise gap a=1 b=3", pairwise_gap(&r3, 1, 3).unwrap() == 6.0);
    case("pairwise gap a=1 b=2", pairwise_gap(&r3, 1, 2).unwrap() == r3.pairs[0].1);
    case("topk k+1 > n", gap_topk(&q, 4, 1.0, TopKNoise::Laplace, &mut zero(4)).is_err());

    // hybrids
    let q = QuerySet::new(vec![9.0, 7.0, 2.0], false).unwrap();
    let r = hybrid_identity(&q, 5.0, 2, 1.0, &mut exp_zero(4)).unwrap();
    case("identity trace", r.pairs == vec![(1, 2.0), (2, 2.0)] && r.t() == 2 && r.actual_cost == 1.0);
    let r = hybrid_identity(&QuerySet::new(vec![9.0, 2.0], false).unwrap(), 5.0, 2, 1.0, &mut exp_zero(3)).unwrap();
    case("identity sentinel", r.pairs == vec![(1, 4.0), (0, 3.0)] && r.actual_cost == 1.0);
    let r = hybrid_estimates(&q, 5.0, 2, 2.0, 0.5, &mut exp_zero(4)).unwrap();
    case("estimates trace", r.pairs == vec![(0, 1.0)] && r.t() == 1 && r.actual_cost == 1.5);
    let low = QuerySet::new(vec![-1e6, -1e6], false).unwrap();
    let r = hybrid_estimates(&low, 0.0, 2, 2.0, 0.3, &mut SeededSource::new(1)).unwrap();
    case("estimates empty", r.pairs.is_empty() && r.actual_cost == 0.3 * 2.0);

    // exponential mechanism
    case("lse excluding zeros", close(log_sum_exp_excluding(&[0.0, 0.0, 0.0], 0).unwrap(), 2f64.ln(), 1e-15));
    case("lse excluding large", log_sum_exp_excluding(&[1000.0, 1000.5], 0).unwrap() == 1000.5);
    case(
        "lse excluding logs",
        close(log_sum_exp_excluding(&[0.0, 2f64.ln(), 3f64.ln()], 1).unwrap(), 4f64.ln(), 1e-15),
    );
    let zg = (-1f64).exp();
    let t = UtilityTable::from_scaled(vec![0.5, 2.0, 1.25]).unwrap();
    let r = exp_mech_gumbel(&t, &mut ReplaySource::new(vec![zg; 3]).unwrap()).unwrap();
    case("gumbel zero-noise trace", r.selected == 1 && close(r.gap, 0.75, 1e-12));

    // post-processing
    let beta = blue_topk(&BlueInput::new(vec![10.0, 6.0], vec![4.0], 1.0).unwrap());
    case("blue consistent", close(beta[0], 10.0, 1e-12) && close(beta[1], 6.0, 1e-12));
    case("blue k=1", close(blue_topk(&BlueInput::new(vec![3.5], vec![], 2.0).unwrap())[0], 3.5, 1e-15));
    case("variance ratio k=10", close(blue_variance_ratio(10, 1.0).unwrap(), 0.55, 1e-15));
    case("variance ratio k=1", blue_variance_ratio(1, 0.7).unwrap() == 1.0);
    case("variance ratio large k", close(blue_variance_ratio(10_000_000, 0.5).unwrap(), 1.0 / 3.0, 1e-6));
    let m = VarianceModel::new(1.0, 1.0).unwrap();
    case("fusion average", fuse_svt(&[14.0], &[10.0], &m).unwrap() == vec![12.0]);
    let m = VarianceModel::new(8.0, 4.0).unwrap();
    case("fusion weighted", close(fuse_svt(&[14.0], &[10.0], &m).unwrap()[0], 38.0 / 3.0, 1e-12));
    let m = VarianceModel::new(8.0, f64::INFINITY).unwrap();
    case("fusion infinite gap variance", fuse_svt(&[14.0], &[10.0], &m).unwrap() == vec![10.0]);
    let (k, eps) = (7usize, 0.9);
    let kf = k as f64;
    let c4 = (4.0 * kf * kf).cbrt();
    let c1 = (kf * kf).cbrt();
    let lm = svt_variance_model(k, eps, 1.0 / (1.0 + c4), SvtNoise::Laplace, false).unwrap();
    case("svt model laplace", close(lm.var_gap, 8.0 * (1.0 + c4).powi(3) / (eps * eps), 1e-9 * lm.var_gap));
    let em = svt_variance_model(k, eps, 1.0 / (1.0 + c1), SvtNoise::Exponential, true).unwrap();
    case("svt model exponential", close(em.var_gap, 4.0 * (1.0 + c1).powi(3) / (eps * eps), 1e-9 * em.var_gap));
    case("svt model measurement", close(em.var_alpha, 8.0 * kf * kf / (eps * eps), 1e-9));

    // audit
    case("tie bound", close(tie_probability_bound(0.1, 2f64.powi(-52), 1000), 2.22e-11, 1e-13));
    case("tie bound zero", tie_probability_bound(0.1, 0.0, 10) == 0.0 && tie_probability_bound(0.1, 1e-3, 0) == 0.0);
    case("tie bound cap", tie_probability_bound(10.0, 1.0, 10) == 1.0);
    let constant = estimate_epsilon(
        "constant",
        1.0,
        |_: &QuerySet, _: &mut SeededSource| Ok(2.5),
        &q35,
        &adjacent_counts(&q35, &[0], Direction::Up).unwrap(),
        &AuditConfig::new(10_000, 0.5, 100, 1),
    )
    .unwrap();
    case("audit constant mechanism", constant.eps_hat == 0.0);

    let detail = if failures.is_empty() {
        format!("{checks} traces reproduced")
    } else {
        format!("failed: {}", failures.join(", "))
    };
    check(failures.is_empty(), detail)
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("top-k BLUE, Laplace noise", criterion_1),
        ("top-k BLUE, exponential noise", criterion_2),
        ("gap-SVT fusion variance ratio", criterion_3),
        ("BLUE vs GLS and X/Y matrices", criterion_4),
        ("Gumbel-max correctness", criterion_5),
        ("Gumbel vs black-box equivalence", criterion_6),
        ("privacy audit suite", criterion_7),
        ("hybrid cost accounting", criterion_8),
        ("confidence bound coverage", criterion_9),
        ("geometric theta", criterion_10),
        ("zero-noise traces", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
