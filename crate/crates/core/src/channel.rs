//! Block-fading channel model, rate function and interference-safe power rule.
//!
//! Gains are power gains. The direct gain γ (user to base station) sets the
//! transmission rate, the interference gain g (user to primary receiver) caps
//! the transmit power. Both are redrawn independently every slot.
//!
//! Rates are expressed per slot: `bandwidth_slots · ln(1 + P·γ)` packets,
//! where `bandwidth_slots` folds bandwidth, slot length and packet size into
//! one number.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Default truncation floor for the direct gain.
pub const DEFAULT_DIRECT_GAIN_FLOOR: f64 = 1e-3;

/// Smallest sample count accepted by [`estimate_service_rate`].
pub const MIN_SERVICE_RATE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    /// Exponentially distributed power gains (Rayleigh amplitude).
    #[default]
    Exponential,
    /// Gains fixed at their means. Useful for closed-form checks.
    Constant,
}

/// Fading statistics of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingProfile {
    pub mean_direct_gain: f64,
    pub mean_interference_gain: f64,
    /// Direct gains below this value are clamped up to it. Keeps the
    /// reciprocal rate, and hence every service-time moment, finite.
    pub direct_gain_floor: f64,
    pub kind: FadingKind,
}

impl FadingProfile {
    pub fn exponential(mean_direct_gain: f64, mean_interference_gain: f64) -> Result<Self> {
        Self::with_floor(
            mean_direct_gain,
            mean_interference_gain,
            DEFAULT_DIRECT_GAIN_FLOOR,
        )
    }

    pub fn with_floor(
        mean_direct_gain: f64,
        mean_interference_gain: f64,
        direct_gain_floor: f64,
    ) -> Result<Self> {
        let profile = Self {
            mean_direct_gain,
            mean_interference_gain,
            direct_gain_floor,
            kind: FadingKind::Exponential,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn constant(direct_gain: f64, interference_gain: f64) -> Result<Self> {
        let profile = Self {
            mean_direct_gain: direct_gain,
            mean_interference_gain: interference_gain,
            direct_gain_floor: DEFAULT_DIRECT_GAIN_FLOOR.min(direct_gain / 2.0),
            kind: FadingKind::Constant,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("mean_direct_gain", self.mean_direct_gain)?;
        ensure_positive("mean_interference_gain", self.mean_interference_gain)?;
        ensure_positive("direct_gain_floor", self.direct_gain_floor)?;
        if self.direct_gain_floor >= self.mean_direct_gain {
            return Err(Error::invalid(
                "direct_gain_floor",
                "smaller than mean_direct_gain",
            ));
        }
        Ok(())
    }

    /// Draws `(γ, g)` with γ already clamped to the floor.
    fn draw_gains<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.kind {
            FadingKind::Exponential => {
                let gamma: f64 = rng.sample::<f64, _>(Exp1) * self.mean_direct_gain;
                let g: f64 = rng.sample::<f64, _>(Exp1) * self.mean_interference_gain;
                (
                    clamp_direct_gain(gamma, self.direct_gain_floor),
                    g.max(f64::MIN_POSITIVE),
                )
            }
            FadingKind::Constant => (self.mean_direct_gain, self.mean_interference_gain),
        }
    }
}

fn clamp_direct_gain(raw: f64, floor: f64) -> f64 {
    raw.max(floor)
}

/// Radio-level parameters shared by all users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Packets servable per slot at unit spectral efficiency.
    pub bandwidth_slots: f64,
    pub max_power: f64,
    /// Per-slot cap on power received at the primary user.
    pub interference_cap: f64,
    /// Divisor applied to the interference-limited power under imperfect CSI.
    pub csi_backoff: f64,
    /// Relative bound on channel estimation error; 0 means perfect CSI.
    pub csi_error_bound: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            bandwidth_slots: 10.0,
            max_power: 10.0,
            interference_cap: 5.0,
            csi_backoff: 1.0,
            csi_error_bound: 0.0,
        }
    }
}

impl RadioParams {
    /// Imperfect-CSI variant: error bound `eps` with the matching `1 + eps` backoff.
    pub fn with_csi_error(mut self, eps: f64) -> Self {
        self.csi_error_bound = eps;
        self.csi_backoff = 1.0 + eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("bandwidth_slots", self.bandwidth_slots)?;
        ensure_positive("max_power", self.max_power)?;
        ensure_positive("interference_cap", self.interference_cap)?;
        if !(self.csi_backoff >= 1.0 && self.csi_backoff.is_finite()) {
            return Err(Error::invalid("csi_backoff", "at least 1"));
        }
        if !(0.0..1.0).contains(&self.csi_error_bound) {
            return Err(Error::invalid("csi_error_bound", "in [0, 1)"));
        }
        if self.csi_error_bound > 0.0 && self.csi_backoff < 1.0 + self.csi_error_bound {
            return Err(Error::invalid(
                "csi_backoff",
                "at least 1 + csi_error_bound when csi_error_bound > 0",
            ));
        }
        Ok(())
    }
}

/// One slot's channel realisation for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub direct_gain: f64,
    pub interference_gain: f64,
    pub estimated_direct_gain: f64,
    pub estimated_interference_gain: f64,
}

/// Draws one slot of fading for a user.
///
/// The gains come from `channel_rng`, the estimation errors from `csi_rng`.
/// Two error draws are consumed per call even with perfect CSI, so the
/// channel sample path is identical across CSI modes.
pub fn sample_channel<R: Rng + ?Sized, S: Rng + ?Sized>(
    profile: &FadingProfile,
    params: &RadioParams,
    channel_rng: &mut R,
    csi_rng: &mut S,
) -> ChannelDraw {
    let (direct_gain, interference_gain) = profile.draw_gains(channel_rng);
    let estimated_interference_gain = model_csi_error(interference_gain, params, csi_rng);
    let estimated_direct_gain = model_csi_error(direct_gain, params, csi_rng);
    ChannelDraw {
        direct_gain,
        interference_gain,
        estimated_direct_gain,
        estimated_interference_gain,
    }
}

/// Per-slot transmission rate in packets: `bandwidth_slots · ln(1 + P·γ)`.
#[inline]
pub fn transmission_rate(power: f64, direct_gain: f64, params: &RadioParams) -> f64 {
    params.bandwidth_slots * (power * direct_gain).ln_1p()
}

/// Interference-limited power: `min(I / (ĝ · backoff), P_max)`.
///
/// The result is rounded down, if needed, so that `P · ĝ · backoff ≤ I`
/// also holds in floating point.
pub fn allocate_power(estimated_interference_gain: f64, params: &RadioParams) -> f64 {
    let budget = params.interference_cap / params.csi_backoff;
    let mut power = (budget / estimated_interference_gain).min(params.max_power);
    while power > 0.0 && power * estimated_interference_gain > budget {
        power = power.next_down();
    }
    power
}

/// Estimated gain under a multiplicative error model.
///
/// The true gain equals `estimate · (1 + e)` with `e` uniform on `[-ε, ε)`,
/// so the estimate is `true_gain / (1 + e)`. One uniform is consumed
/// regardless of ε.
pub fn model_csi_error<R: Rng + ?Sized>(true_gain: f64, params: &RadioParams, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let e = params.csi_error_bound * (2.0 * u - 1.0);
    if e == 0.0 {
        true_gain
    } else {
        true_gain / (1.0 + e)
    }
}

/// Rate and power the policy would use for a draw, from the estimated gains.
#[inline]
pub fn policy_rate(draw: &ChannelDraw, params: &RadioParams) -> (f64, f64) {
    let power = allocate_power(draw.estimated_interference_gain, params);
    (
        power,
        transmission_rate(power, draw.estimated_direct_gain, params),
    )
}

/// Monte-Carlo estimate of the service rate μ, defined through
/// `1/μ = E[1/R]` with R the per-slot rate under the power rule.
pub fn estimate_service_rate<R: Rng + ?Sized>(
    profile: &FadingProfile,
    params: &RadioParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let moments = service_time_moments(profile, params, n_samples, rng)?;
    Ok(1.0 / moments[0])
}

/// Empirical `E[(1/R)^n]` for `n = 1..=4`.
pub fn service_time_moments<R: Rng + ?Sized>(
    profile: &FadingProfile,
    params: &RadioParams,
    n_samples: usize,
    rng: &mut R,
) -> Result<[f64; 4]> {
    if profile.direct_gain_floor.is_nan() || profile.direct_gain_floor <= 0.0 {
        return Err(Error::invalid(
            "direct_gain_floor",
            "positive for the service rate to be finite",
        ));
    }
    if n_samples < MIN_SERVICE_RATE_SAMPLES {
        return Err(Error::invalid("n_samples", "at least 10000"));
    }
    profile.validate()?;
    params.validate()?;
    let mut sums = [0.0f64; 4];
    for _ in 0..n_samples {
        let (direct_gain, interference_gain) = profile.draw_gains(rng);
        let draw = ChannelDraw {
            direct_gain,
            interference_gain,
            estimated_interference_gain: model_csi_error(interference_gain, params, rng),
            estimated_direct_gain: model_csi_error(direct_gain, params, rng),
        };
        let (_, rate) = policy_rate(&draw, params);
        let t = 1.0 / rate;
        sums[0] += t;
        sums[1] += t * t;
        sums[2] += t * t * t;
        sums[3] += t * t * t * t;
    }
    Ok(sums.map(|s| s / n_samples as f64))
}
