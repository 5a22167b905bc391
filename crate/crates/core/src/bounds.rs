//! Automatic clamp-bound inference from a noisy base-2 logarithmic histogram.
//!
//! Bins, in ascending value order: negative magnitudes `[-2^(e+1), -2^e)` for
//! `e` from the largest exponent down, one zero bin `(-2^e_min, 2^e_min)`, and
//! positive magnitudes `[2^e, 2^(e+1))`. Each bin count gets Laplace(1/ε)
//! noise; the upper bound is the upper edge of the highest bin whose noisy
//! count exceeds the threshold, the lower bound the lower edge of the lowest.

use crate::noise::{self, ClampBounds, RandomSource};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxBoundsConfig {
    /// Magnitude bins per sign.
    pub num_bins: usize,
    /// Exponent of the smallest magnitude bin.
    pub min_exponent: i32,
    /// Probability of not selecting an empty bin by noise alone.
    pub success_prob: f64,
}

impl Default for ApproxBoundsConfig {
    fn default() -> Self {
        ApproxBoundsConfig { num_bins: 64, min_exponent: -32, success_prob: 1.0 - 1e-9 }
    }
}

impl ApproxBoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::parameter("bounds histogram needs at least 2 bins per sign"));
        }
        let max_exponent = self.min_exponent as i64 + self.num_bins as i64 - 1;
        if self.min_exponent < -1022 || max_exponent > 1022 {
            return Err(Error::parameter("bounds histogram exponents exceed the f64 range"));
        }
        if !(self.success_prob > 0.0 && self.success_prob < 1.0) {
            return Err(Error::parameter(format!(
                "bounds success probability must lie in (0, 1), got {}",
                self.success_prob
            )));
        }
        Ok(())
    }

    fn max_exponent(&self) -> i32 {
        self.min_exponent + self.num_bins as i32 - 1
    }

    /// Total bins across both signs and the zero bin.
    pub fn total_bins(&self) -> usize {
        2 * self.num_bins + 1
    }
}

/// Noisy-count threshold `t` with `(1 - e^(-tε))^(bins-1) = success_prob`.
pub fn approx_threshold(epsilon: f64, bins: usize, success_prob: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if bins < 2 {
        return Err(Error::parameter("threshold needs at least 2 bins"));
    }
    if !(success_prob > 0.0 && success_prob < 1.0) {
        return Err(Error::parameter(format!("success probability must lie in (0, 1), got {success_prob}")));
    }
    // 1 - P^(1/(B-1)), computed without cancellation for P close to 1.
    let miss = -(success_prob.ln() / (bins - 1) as f64).exp_m1();
    Ok(-miss.ln() / epsilon)
}

/// Exact `floor(log2(|x|))` for normal, finite, non-zero `x`.
fn binary_exponent(x: f64) -> i32 {
    (((x.to_bits() >> 52) & 0x7ff) as i32) - 1023
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogHistogram {
    cfg: ApproxBoundsConfig,
    counts: Vec<u64>,
}

impl LogHistogram {
    pub fn new(cfg: ApproxBoundsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LogHistogram { cfg, counts: vec![0; cfg.total_bins()] })
    }

    fn zero_bin(&self) -> usize {
        self.cfg.num_bins
    }

    /// Index of the bin holding `x`. NaN lands in the zero bin.
    pub fn bin_of(&self, x: f64) -> usize {
        let zero = self.zero_bin();
        let magnitude = x.abs();
        if x.is_nan() || magnitude < 2f64.powi(self.cfg.min_exponent) {
            return zero;
        }
        let e = if magnitude.is_infinite() {
            self.cfg.max_exponent()
        } else {
            binary_exponent(magnitude).min(self.cfg.max_exponent())
        };
        let offset = (e - self.cfg.min_exponent) as usize;
        if x > 0.0 {
            zero + 1 + offset
        } else {
            zero - 1 - offset
        }
    }

    /// `(lower, upper)` edges of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let zero = self.zero_bin();
        let min = self.cfg.min_exponent;
        if i == zero {
            let edge = 2f64.powi(min);
            (-edge, edge)
        } else if i > zero {
            let e = min + (i - zero - 1) as i32;
            (2f64.powi(e), 2f64.powi(e + 1))
        } else {
            let e = min + (zero - 1 - i) as i32;
            (-(2f64.powi(e + 1)), -(2f64.powi(e)))
        }
    }

    pub fn add(&mut self, x: f64) {
        let i = self.bin_of(x);
        self.counts[i] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Noises every bin with Laplace(1/ε) and picks the extreme bins above
    /// the threshold.
    pub fn infer(&self, epsilon: f64, rng: &mut RandomSource) -> Result<ClampBounds> {
        let t = approx_threshold(epsilon, self.counts.len(), self.cfg.success_prob)?;
        let scale = 1.0 / epsilon;
        let mut selected = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            if c as f64 + noise::sample_laplace(scale, rng)? > t {
                selected.push(i);
            }
        }
        match (selected.first(), selected.last()) {
            (Some(&lo), Some(&hi)) => ClampBounds::new(self.edges(lo).0, self.edges(hi).1),
            _ => Err(Error::BoundsInference(format!("no histogram bin exceeded the threshold {t:.3}"))),
        }
    }
}

/// Infers clamp bounds for `values` with ε = `eps_share`.
pub fn approx_bounds(
    values: &[f64],
    cfg: ApproxBoundsConfig,
    eps_share: f64,
    rng: &mut RandomSource,
) -> Result<ClampBounds> {
    if values.is_empty() {
        return Err(Error::parameter("bounds inference needs at least one value"));
    }
    let mut hist = LogHistogram::new(cfg)?;
    values.iter().for_each(|&x| hist.add(x));
    hist.infer(eps_share, rng)
}
