//! Three-parameter Weibull sampling and the deterministic random streams that feed it.
//!
//! Every stochastic delay in the simulator is a Weibull draw taken by inverse CDF,
//! so one event consumes exactly one uniform from its stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weibull with location `gamma`, characteristic life `eta` and shape `beta` (hours).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
}

impl WeibullParams {
    pub fn new(gamma: f64, eta: f64, beta: f64) -> Result<Self> {
        let p = WeibullParams { gamma, eta, beta };
        p.check()?;
        Ok(p)
    }

    /// Two-parameter form (γ = 0).
    pub fn two(eta: f64, beta: f64) -> Result<Self> {
        Self::new(0.0, eta, beta)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.eta.is_finite()
            && self.eta > 0.0
            && self.beta.is_finite()
            && self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "weibull needs gamma >= 0, eta > 0, beta > 0 (got gamma={}, eta={}, beta={})",
                self.gamma, self.eta, self.beta
            )))
        }
    }

    /// Inverse CDF at `u` in [0, 1).
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        let e = -(-u).ln_1p();
        if self.beta == 1.0 {
            self.gamma + self.eta * e
        } else {
            self.gamma + self.eta * e.powf(1.0 / self.beta)
        }
    }

    #[inline]
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        self.quantile(stream.next_uniform())
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.gamma {
            0.0
        } else {
            -(-((t - self.gamma) / self.eta).powf(self.beta)).exp_m1()
        }
    }
}

pub fn sample_weibull(params: &WeibullParams, stream: &mut RandomStream) -> Result<f64> {
    params.check()?;
    Ok(params.sample(stream))
}

pub fn weibull_cdf(params: &WeibullParams, t: f64) -> Result<f64> {
    params.check()?;
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("cdf needs t >= 0, got {t}")));
    }
    Ok(params.cdf(t))
}

/// Constant rate whose exponential has the same cumulative incidence as the
/// Weibull at `mission`: `(mission/eta)^beta / mission`.
///
/// The source labels this quantity "MTTF" but it is a rate per hour. Only the
/// two-parameter form has a stated matching rule, so `gamma != 0` is rejected.
pub fn match_exponential_rate(params: &WeibullParams, mission: f64) -> Result<f64> {
    params.check()?;
    if !(mission > 0.0) || !mission.is_finite() {
        return Err(Error::Parameter(format!("mission must be positive, got {mission}")));
    }
    if params.gamma != 0.0 {
        return Err(Error::Unsupported(format!(
            "rate matching is defined for gamma = 0 only (got gamma = {})",
            params.gamma
        )));
    }
    Ok((mission / params.eta).powf(params.beta) / mission)
}

pub fn sample_uniform(lo: f64, hi: f64, stream: &mut RandomStream) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::Parameter(format!("uniform needs lo <= hi, got [{lo}, {hi}]")));
    }
    Ok(stream.uniform_between(lo, hi))
}

// ============================================================================
// Random streams
// ============================================================================

/// What a stream's draws are used for. Each purpose gets its own sequence so
/// that adding or removing draws of one kind never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Purpose {
    DiskLife = 1,
    LseArrival = 2,
    LseStripe = 3,
    Scrub = 4,
    Replacement = 5,
    HumanError = 6,
    WrongPick = 7,
    HumanErrorRecovery = 8,
    Crash = 9,
    Rebuild = 10,
    BackupRecovery = 11,
    SectorRecovery = 12,
    Test = 255,
}

/// Device slot used for array-level streams.
pub const ARRAY_LEVEL: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub array: u64,
    pub device: u8,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(array: u64, device: u8, purpose: Purpose) -> Self {
        StreamId { array, device, purpose }
    }

    /// Packed into ChaCha's 64-bit stream number: 48 bits of array index,
    /// 8 bits of device, 8 bits of purpose. No hashing, so no collisions.
    pub fn packed(&self) -> u64 {
        debug_assert!(self.array < 1 << 48);
        (self.array << 16) | ((self.device as u64) << 8) | self.purpose as u64
    }
}

/// Counter-based stream: ChaCha8 keyed by the seed, positioned on the stream
/// number derived from `StreamId`. The draw counter is the cipher's block position.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    id: StreamId,
}

impl RandomStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.packed());
        RandomStream { rng, id }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn uniform_between(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_uniform();
        v.min(hi)
    }

    /// The draw at absolute position `index` of this stream, independent of how
    /// many draws were taken before. Used where the number of earlier draws
    /// depends on the scenario (replacement attempts, human errors).
    pub fn uniform_at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(index as u128 * 2);
        self.next_uniform()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.rng.random_range(0..n)
    }
}
