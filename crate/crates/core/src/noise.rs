//! Noise distributions and the uniform stream that drives them.
//!
//! Every sample is produced by inverse-CDF transformation of exactly one
//! uniform draw. A [`ReplaySource`] therefore pins down the noise of a whole
//! mechanism run, which is how the zero-noise traces in the tests work:
//! `u = 0.5` is zero Laplace noise, `u = 0` is zero exponential or geometric
//! noise.
//!
//! The geometric law has mass `p(1-p)^n` on `{0, 1, ...}`. Its mean is
//! `(1-p)/p`, and that is what [`NoiseKind::mean`] returns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{invalid, Error, Result};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// A stream of independent uniform draws on `[0, 1)`.
pub trait RandomSource {
    fn next_uniform(&mut self) -> Result<f64>;
}

impl<R: RandomSource + ?Sized> RandomSource for &mut R {
    fn next_uniform(&mut self) -> Result<f64> {
        (**self).next_uniform()
    }
}

/// Seeded pseudo-random source. Draws lie strictly inside `(0, 1)`.
#[derive(Debug, Clone)]
pub struct SeededSource {
    rng: ChaCha12Rng,
}

impl SeededSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl RandomSource for SeededSource {
    fn next_uniform(&mut self) -> Result<f64> {
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 {
                return Ok(u);
            }
        }
    }
}

/// Replays a fixed sequence of uniforms, then fails with [`Error::Exhausted`].
#[derive(Debug, Clone)]
pub struct ReplaySource {
    draws: Vec<f64>,
    pos: usize,
}

impl ReplaySource {
    pub fn new(draws: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = draws.iter().find(|u| !(0.0..1.0).contains(*u)) {
            return Err(Error::UniformOutOfRange(bad));
        }
        Ok(Self { draws, pos: 0 })
    }

    /// `count` copies of the same uniform.
    pub fn repeat(u: f64, count: usize) -> Result<Self> {
        Self::new(vec![u; count])
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.draws.len() - self.pos
    }
}

impl RandomSource for ReplaySource {
    fn next_uniform(&mut self) -> Result<f64> {
        let u = *self
            .draws
            .get(self.pos)
            .ok_or(Error::Exhausted { consumed: self.pos })?;
        self.pos += 1;
        Ok(u)
    }
}

/// A noise distribution together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Zero-mean Laplace with scale `b`.
    Laplace { scale: f64 },
    /// One-sided exponential with scale (mean) `beta`.
    Exponential { scale: f64 },
    /// Geometric on `{0, 1, ...}` with success probability `p`.
    Geometric { p: f64 },
    /// Standard-scale Gumbel.
    Gumbel { location: f64 },
    /// Standard-scale logistic.
    Logistic { location: f64 },
}

impl NoiseKind {
    pub fn laplace(scale: f64) -> Result<Self> {
        let kind = NoiseKind::Laplace { scale };
        kind.validate()?;
        Ok(kind)
    }

    pub fn exponential(scale: f64) -> Result<Self> {
        let kind = NoiseKind::Exponential { scale };
        kind.validate()?;
        Ok(kind)
    }

    pub fn geometric(p: f64) -> Result<Self> {
        let kind = NoiseKind::Geometric { p };
        kind.validate()?;
        Ok(kind)
    }

    /// Geometric noise whose mass decays by `e^{-rate}` per step, i.e.
    /// `p = 1 - e^{-rate}`.
    pub fn geometric_with_rate(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("geometric rate must be positive, got {rate}")));
        }
        Self::geometric(-(-rate).exp_m1())
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Laplace { scale } | NoiseKind::Exponential { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(invalid(format!("scale must be positive and finite, got {scale}")));
                }
            }
            NoiseKind::Geometric { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(invalid(format!("geometric p must lie in (0, 1), got {p}")));
                }
            }
            NoiseKind::Gumbel { location } | NoiseKind::Logistic { location } => {
                if !location.is_finite() {
                    return Err(invalid("location must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NoiseKind::Laplace { .. } => 0.0,
            NoiseKind::Exponential { scale } => scale,
            NoiseKind::Geometric { p } => (1.0 - p) / p,
            NoiseKind::Gumbel { location } => location + EULER_MASCHERONI,
            NoiseKind::Logistic { location } => location,
        }
    }

    pub fn variance(&self) -> f64 {
        variance_of(*self)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Inverse CDF at `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            NoiseKind::Laplace { scale } => {
                if u < 0.5 {
                    scale * (2.0 * u).ln()
                } else {
                    -scale * (2.0 * (1.0 - u)).ln()
                }
            }
            NoiseKind::Exponential { scale } => -scale * (-u).ln_1p(),
            NoiseKind::Geometric { p } => ((-u).ln_1p() / (-p).ln_1p()).floor() + 0.0,
            NoiseKind::Gumbel { location } => location - (-u.ln()).ln(),
            NoiseKind::Logistic { location } => location + (u / (1.0 - u)).ln(),
        }
    }
}

/// One draw from `kind`.
pub fn sample<R: RandomSource + ?Sized>(kind: NoiseKind, src: &mut R) -> Result<f64> {
    kind.validate()?;
    Ok(kind.quantile(src.next_uniform()?))
}

/// Closed-form variance.
pub fn variance_of(kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::Laplace { scale } => 2.0 * scale * scale,
        NoiseKind::Exponential { scale } => scale * scale,
        NoiseKind::Geometric { p } => (1.0 - p) / (p * p),
        NoiseKind::Gumbel { .. } => std::f64::consts::PI.powi(2) / 6.0,
        NoiseKind::Logistic { .. } => std::f64::consts::PI.powi(2) / 3.0,
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic(`location`) conditioned on being positive, from a single uniform.
///
/// The uniform is mapped onto the upper part of the logistic survival
/// function, `S(x) = (1 - u) S(0)`, and inverted in log space so that very
/// negative locations neither lose precision nor loop.
pub fn sample_logistic_nonneg<R: RandomSource + ?Sized>(location: f64, src: &mut R) -> Result<f64> {
    if !location.is_finite() {
        return Err(invalid("location must be finite"));
    }
    let u = src.next_uniform()?;
    Ok(conditional_logistic_quantile(location, u))
}

pub(crate) fn conditional_logistic_quantile(location: f64, u: f64) -> f64 {
    // s = (1 - u) * S(0) with S(0) = 1 / (1 + e^{-location})
    let ln_tail = (-u).ln_1p();
    let ln_s = ln_tail - softplus(-location);
    // x = location + ln((1 - s) / s) = softplus(location) - ln(1 - u) + ln(1 - s)
    let x = softplus(location) - ln_tail + (-ln_s.exp()).ln_1p();
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}
