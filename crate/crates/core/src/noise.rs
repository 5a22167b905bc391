//! Calibrated randomness: Laplace sampling (raw and snapped), clamping, and
//! Laplace quantiles.
//!
//! Raw Laplace draws are only used where the noisy value is compared against
//! a threshold and never shown. Numerically released values always go through
//! [`sample_snapped_laplace_with`], which rounds `center + noise` onto a
//! power-of-two grid so the low-order bits of the output cannot encode the
//! center.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Query-wide privacy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Maximum number of partitions a single user may contribute to.
    pub cu: usize,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, cu: usize) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::parameter(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::parameter(format!("delta must lie in [0, 1), got {delta}")));
        }
        if cu == 0 {
            return Err(Error::parameter("cu must be at least 1"));
        }
        Ok(PrivacyBudget { epsilon, delta, cu })
    }
}

/// Inclusive clamp interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampBounds {
    lower: f64,
    upper: f64,
}

impl ClampBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::parameter(format!("clamp bounds must be finite, got [{lower}, {upper}]")));
        }
        if lower > upper {
            return Err(Error::parameter(format!("lower bound {lower} exceeds upper bound {upper}")));
        }
        Ok(ClampBounds { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        self.lower + 0.5 * (self.upper - self.lower)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }
}

/// Clamps `x` into `bounds`. NaN and −∞ map to the lower bound, +∞ to the
/// upper bound, so every input has a bounded, deterministic contribution.
pub fn clamp(x: f64, bounds: ClampBounds) -> f64 {
    if x.is_nan() {
        return bounds.lower;
    }
    x.max(bounds.lower).min(bounds.upper)
}

/// Seedable ChaCha20 stream that can fork labeled, independent substreams.
///
/// A substream depends only on the parent's key and the label, not on how
/// many values the parent has already produced.
#[derive(Clone)]
pub struct RandomSource {
    key: [u8; 32],
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RandomSource").finish_non_exhaustive()
    }
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        Self::from_key(Sha256::new().chain_update(b"dpquery/seed").chain_update(seed.to_le_bytes()).finalize().into())
    }

    /// Seeds from operating-system entropy.
    pub fn from_entropy() -> Self {
        let mut key = [0u8; 32];
        rand::rng().fill_bytes(&mut key);
        Self::from_key(key)
    }

    /// A fresh seed from operating-system entropy, for callers that need
    /// to record the seed they used.
    pub fn entropy_seed() -> u64 {
        rand::rng().next_u64()
    }

    fn from_key(key: [u8; 32]) -> Self {
        RandomSource { key, rng: ChaCha20Rng::from_seed(key) }
    }

    pub fn substream(&self, label: &str) -> RandomSource {
        let key = Sha256::new()
            .chain_update(self.key)
            .chain_update((label.len() as u64).to_le_bytes())
            .chain_update(label.as_bytes())
            .finalize()
            .into();
        Self::from_key(key)
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits, offset by half an ulp to exclude 0.
            let bits = self.rng.next_u64() >> 11;
            let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 && u < 1.0 {
                return u;
            }
        }
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        let n = n as u64;
        // Rejection sampling keeps the draw unbiased.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::parameter(format!("Laplace scale must be positive and finite, got {scale}")))
    }
}

/// Draws from Laplace(0, scale) by inverting the CDF.
pub fn sample_laplace(scale: f64, rng: &mut RandomSource) -> Result<f64> {
    check_scale(scale)?;
    Ok(laplace_unchecked(scale, rng))
}

fn laplace_unchecked(scale: f64, rng: &mut RandomSource) -> f64 {
    let u = rng.uniform_open() - 0.5;
    let magnitude = -scale * (1.0 - 2.0 * u.abs()).ln();
    if u < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Smallest power of two strictly greater than `scale`.
pub fn snapping_granularity(scale: f64) -> Result<f64> {
    check_scale(scale)?;
    let bits = scale.to_bits();
    let exponent = (bits >> 52) & 0x7ff;
    if exponent > 0 && exponent < 0x7fe {
        // Normal numbers: the next power of two keeps only a bumped exponent.
        return Ok(f64::from_bits((exponent + 1) << 52));
    }
    let mut r = 2f64.powi(scale.log2().floor() as i32);
    while r <= scale {
        r *= 2.0;
    }
    while r / 2.0 > scale {
        r /= 2.0;
    }
    Ok(r)
}

/// Rounds `x` to the nearest multiple of the power of two `granularity`.
pub fn snap(x: f64, granularity: f64) -> f64 {
    (x / granularity).round() * granularity
}

/// `center` plus Laplace(0, scale) noise, rounded to the nearest multiple of
/// [`snapping_granularity`]`(scale)`.
pub fn sample_snapped_laplace(center: f64, scale: f64, rng: &mut RandomSource) -> Result<f64> {
    let granularity = snapping_granularity(scale)?;
    sample_snapped_laplace_with(center, scale, granularity, rng)
}

/// As [`sample_snapped_laplace`] with an explicit power-of-two granularity.
pub fn sample_snapped_laplace_with(center: f64, scale: f64, granularity: f64, rng: &mut RandomSource) -> Result<f64> {
    check_scale(scale)?;
    if !is_power_of_two(granularity) {
        return Err(Error::parameter(format!("snapping granularity must be a power of two, got {granularity}")));
    }
    Ok(snap(center + laplace_unchecked(scale, rng), granularity))
}

fn is_power_of_two(x: f64) -> bool {
    let bits = x.to_bits();
    let exponent = (bits >> 52) & 0x7ff;
    x > 0.0
        && exponent < 0x7ff
        && if exponent == 0 { (bits & ((1 << 52) - 1)).is_power_of_two() } else { bits & ((1 << 52) - 1) == 0 }
}

/// Number of binary digits below [`snapping_granularity`] kept by released
/// values. Values are snapped to `snapping_granularity(scale) / 2^RELEASE_SNAP_BITS`.
pub const RELEASE_SNAP_BITS: i32 = 20;

/// Snapped Laplace draw at the release granularity used by the aggregates.
pub fn sample_release_noise(center: f64, scale: f64, rng: &mut RandomSource) -> Result<f64> {
    const FINE: f64 = 1.0 / (1u64 << RELEASE_SNAP_BITS) as f64;
    let granularity = snapping_granularity(scale)? * FINE;
    sample_snapped_laplace_with(center, scale, granularity, rng)
}

/// Inverse CDF of Laplace(0, scale).
pub fn laplace_quantile(scale: f64, p: f64) -> Result<f64> {
    check_scale(scale)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::parameter(format!("quantile level must lie in (0, 1), got {p}")));
    }
    Ok(if p < 0.5 { scale * (2.0 * p).ln() } else { -scale * (2.0 * (1.0 - p)).ln() })
}

/// CDF of Laplace(0, scale).
pub fn laplace_cdf(scale: f64, x: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}
