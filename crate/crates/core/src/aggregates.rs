//! Bounded-contribution ε-DP aggregates.
//!
//! These run at the cross-user stage, where every user contributes exactly
//! one input row per partition. Inputs are clamped to the aggregate's bounds
//! on entry, so one row can move the un-noised result by at most
//! [`sensitivity_bound`].

use std::fmt;

use serde::Serialize;

use crate::exact_sum::ExactSum;
use crate::noise::{self, clamp, ClampBounds, RandomSource};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AggregatorKind {
    Count,
    Sum,
    Avg,
    Var,
    Stddev,
    Ntile,
}

impl AggregatorKind {
    pub fn sql_name(self) -> &'static str {
        match self {
            AggregatorKind::Count => "ANON_COUNT",
            AggregatorKind::Sum => "ANON_SUM",
            AggregatorKind::Avg => "ANON_AVG",
            AggregatorKind::Var => "ANON_VAR",
            AggregatorKind::Stddev => "ANON_STDDEV",
            AggregatorKind::Ntile => "ANON_NTILE",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sql_name())
    }
}

/// A fully parameterized aggregate: kind, clamp bounds and n-tile level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatorSpec {
    kind: AggregatorKind,
    bounds: Option<ClampBounds>,
    ntile_phi: Option<f64>,
}

impl AggregatorSpec {
    pub fn new(kind: AggregatorKind, bounds: Option<ClampBounds>, ntile_phi: Option<f64>) -> Result<Self> {
        match (kind, bounds) {
            (AggregatorKind::Count, Some(_)) => return Err(Error::parameter("ANON_COUNT takes no clamp bounds")),
            (AggregatorKind::Count, None) => {}
            (_, None) => return Err(Error::parameter(format!("{kind} requires clamp bounds"))),
            _ => {}
        }
        match (kind, ntile_phi) {
            (AggregatorKind::Ntile, Some(phi)) if phi > 0.0 && phi < 1.0 => {}
            (AggregatorKind::Ntile, Some(phi)) => {
                return Err(Error::parameter(format!("n-tile level must lie in (0, 1), got {phi}")))
            }
            (AggregatorKind::Ntile, None) => return Err(Error::parameter("ANON_NTILE requires an n-tile level")),
            (_, Some(_)) => return Err(Error::parameter(format!("{kind} takes no n-tile level"))),
            (_, None) => {}
        }
        Ok(AggregatorSpec { kind, bounds, ntile_phi })
    }

    pub fn count() -> Self {
        AggregatorSpec { kind: AggregatorKind::Count, bounds: None, ntile_phi: None }
    }

    pub fn sum(bounds: ClampBounds) -> Self {
        AggregatorSpec { kind: AggregatorKind::Sum, bounds: Some(bounds), ntile_phi: None }
    }

    pub fn avg(bounds: ClampBounds) -> Self {
        AggregatorSpec { kind: AggregatorKind::Avg, bounds: Some(bounds), ntile_phi: None }
    }

    pub fn var(bounds: ClampBounds) -> Self {
        AggregatorSpec { kind: AggregatorKind::Var, bounds: Some(bounds), ntile_phi: None }
    }

    pub fn stddev(bounds: ClampBounds) -> Self {
        AggregatorSpec { kind: AggregatorKind::Stddev, bounds: Some(bounds), ntile_phi: None }
    }

    pub fn ntile(phi: f64, bounds: ClampBounds) -> Result<Self> {
        Self::new(AggregatorKind::Ntile, Some(bounds), Some(phi))
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn bounds(&self) -> Option<ClampBounds> {
        self.bounds
    }

    pub fn ntile_phi(&self) -> Option<f64> {
        self.ntile_phi
    }
}

/// Upper bound on how much one input row can move the un-noised result.
pub fn sensitivity_bound(spec: &AggregatorSpec) -> f64 {
    let Some(b) = spec.bounds else { return 1.0 };
    match spec.kind {
        AggregatorKind::Count => 1.0,
        AggregatorKind::Sum => b.max_magnitude(),
        AggregatorKind::Avg | AggregatorKind::Stddev | AggregatorKind::Ntile => b.width(),
        AggregatorKind::Var => b.width() * b.width(),
    }
}

/// Half-width of the symmetric noise interval at confidence `level`.
///
/// Covers the Laplace noise only; clamping and thresholding are not
/// accounted for.
pub fn noise_ci(spec: &AggregatorSpec, eps_share: f64, level: f64) -> Result<(f64, f64)> {
    check_epsilon(eps_share)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::parameter(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let sensitivity = sensitivity_bound(spec);
    if sensitivity == 0.0 {
        return Ok((0.0, 0.0));
    }
    let half = noise::laplace_quantile(sensitivity / eps_share, (1.0 + level) / 2.0)?;
    Ok((-half, half))
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::parameter(format!("epsilon share must be positive and finite, got {eps}")))
    }
}

/// A released aggregate value with its noise confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisyResult {
    pub value: f64,
    pub ci: (f64, f64),
    pub epsilon_spent: f64,
}

/// Running sum of `x - center` for a bounded mean, with its own clamp range.
#[derive(Debug, Clone, PartialEq)]
struct CenteredSum {
    bounds: ClampBounds,
    sum: ExactSum,
}

impl CenteredSum {
    fn new(bounds: ClampBounds) -> Self {
        CenteredSum { bounds, sum: ExactSum::new() }
    }

    fn add(&mut self, clamped: f64) {
        self.sum.add(clamped - self.bounds.midpoint());
    }

    fn exact_mean(&self, n: u64) -> f64 {
        let mean = self.bounds.midpoint() + self.sum.value() / n as f64;
        clamp(mean, self.bounds)
    }

    /// Noisy normalized sum over a noisy count, each using half of `eps`.
    fn noisy_mean(&self, n: u64, eps: f64, rng: &mut RandomSource) -> Result<f64> {
        let half = eps / 2.0;
        let width = self.bounds.width();
        if width == 0.0 {
            return Ok(self.bounds.lower());
        }
        let noisy_sum = noise::sample_release_noise(self.sum.value(), width / 2.0 / half, rng)?;
        let noisy_count = noise::sample_release_noise(n as f64, 1.0 / half, rng)?;
        let mean = self.bounds.midpoint() + noisy_sum / noisy_count.max(1.0);
        Ok(clamp(mean, self.bounds))
    }
}

/// Range of `x²` for `x` in `bounds`.
fn square_bounds(b: ClampBounds) -> ClampBounds {
    let (lo, hi) = (b.lower() * b.lower(), b.upper() * b.upper());
    let bounds = if b.lower() >= 0.0 {
        ClampBounds::new(lo, hi)
    } else if b.upper() <= 0.0 {
        ClampBounds::new(hi, lo)
    } else {
        ClampBounds::new(0.0, lo.max(hi))
    };
    bounds.expect("squares of finite bounds are ordered")
}

#[derive(Debug, Clone, PartialEq)]
enum Accumulator {
    Count,
    Sum(ExactSum),
    Mean(CenteredSum),
    Moments { mean: CenteredSum, mean_sq: CenteredSum },
    Values(Vec<f64>),
}

/// Accumulation state for one aggregate over one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorState {
    spec: AggregatorSpec,
    input_count: u64,
    acc: Accumulator,
}

impl AggregatorState {
    pub fn new(spec: AggregatorSpec) -> Self {
        let acc = match (spec.kind, spec.bounds) {
            (AggregatorKind::Count, _) => Accumulator::Count,
            (AggregatorKind::Sum, _) => Accumulator::Sum(ExactSum::new()),
            (AggregatorKind::Avg, Some(b)) => Accumulator::Mean(CenteredSum::new(b)),
            (AggregatorKind::Var | AggregatorKind::Stddev, Some(b)) => {
                Accumulator::Moments { mean: CenteredSum::new(b), mean_sq: CenteredSum::new(square_bounds(b)) }
            }
            (AggregatorKind::Ntile, _) => Accumulator::Values(Vec::new()),
            (_, None) => unreachable!("AggregatorSpec guarantees bounds for bounded kinds"),
        };
        AggregatorState { spec, input_count: 0, acc }
    }

    pub fn spec(&self) -> &AggregatorSpec {
        &self.spec
    }

    pub fn input_count(&self) -> u64 {
        self.input_count
    }

    /// Folds one input. Values are clamped first; COUNT ignores the value.
    pub fn accumulate(&mut self, x: f64) {
        self.input_count += 1;
        let Some(bounds) = self.spec.bounds else { return };
        let x = clamp(x, bounds);
        match &mut self.acc {
            Accumulator::Count => {}
            Accumulator::Sum(s) => s.add(x),
            Accumulator::Mean(m) => m.add(x),
            Accumulator::Moments { mean, mean_sq } => {
                mean.add(x);
                mean_sq.add(clamp(x * x, mean_sq.bounds));
            }
            Accumulator::Values(v) => v.push(x),
        }
    }

    /// Combines two states for the same spec.
    pub fn merge(&mut self, other: &AggregatorState) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::parameter("cannot merge states of different aggregates"));
        }
        self.input_count += other.input_count;
        match (&mut self.acc, &other.acc) {
            (Accumulator::Count, Accumulator::Count) => {}
            (Accumulator::Sum(a), Accumulator::Sum(b)) => a.merge(b),
            (Accumulator::Mean(a), Accumulator::Mean(b)) => a.sum.merge(&b.sum),
            (Accumulator::Moments { mean: a, mean_sq: a2 }, Accumulator::Moments { mean: b, mean_sq: b2 }) => {
                a.sum.merge(&b.sum);
                a2.sum.merge(&b2.sum);
            }
            (Accumulator::Values(a), Accumulator::Values(b)) => a.extend_from_slice(b),
            _ => unreachable!("equal specs produce equal accumulator shapes"),
        }
        Ok(())
    }

    fn require_input(&self) -> Result<()> {
        if self.input_count == 0 {
            Err(Error::parameter("aggregate has no input rows"))
        } else {
            Ok(())
        }
    }

    /// The noise-free value the mechanism is centered on.
    pub fn exact_result(&self) -> Result<f64> {
        self.require_input()?;
        let n = self.input_count;
        Ok(match &self.acc {
            Accumulator::Count => n as f64,
            Accumulator::Sum(s) => s.value(),
            Accumulator::Mean(m) => m.exact_mean(n),
            Accumulator::Moments { mean, mean_sq } => {
                let var = self.clip_variance(mean_sq.exact_mean(n) - mean.exact_mean(n).powi(2));
                if self.spec.kind == AggregatorKind::Stddev {
                    var.sqrt()
                } else {
                    var
                }
            }
            Accumulator::Values(v) => {
                let phi = self.spec.ntile_phi.expect("n-tile spec carries phi");
                exact_quantile(v, phi)
            }
        })
    }

    fn clip_variance(&self, v: f64) -> f64 {
        let w = self.spec.bounds.map_or(0.0, |b| b.width());
        v.clamp(0.0, w * w)
    }

    /// Releases the aggregate with ε = `eps_share` and attaches a noise
    /// confidence interval at `ci_level`.
    pub fn result(&self, eps_share: f64, ci_level: f64, rng: &mut RandomSource) -> Result<NoisyResult> {
        self.require_input()?;
        self.release(eps_share, ci_level, rng)
    }

    /// Like [`result`](Self::result) but also defined on empty input, where
    /// the mechanism runs on the empty multiset. The planner uses this so
    /// that whether a released partition had inputs is itself noised.
    pub(crate) fn release(&self, eps_share: f64, ci_level: f64, rng: &mut RandomSource) -> Result<NoisyResult> {
        let value = self.release_value(eps_share, rng)?;
        let (lo, hi) = noise_ci(&self.spec, eps_share, ci_level)?;
        Ok(NoisyResult { value, ci: (value + lo, value + hi), epsilon_spent: eps_share })
    }

    /// The noisy value alone, for callers that draw many releases.
    pub(crate) fn release_value(&self, eps_share: f64, rng: &mut RandomSource) -> Result<f64> {
        check_epsilon(eps_share)?;
        let n = self.input_count;
        let value = match &self.acc {
            Accumulator::Count => noise::sample_release_noise(n as f64, 1.0 / eps_share, rng)?,
            Accumulator::Sum(s) => {
                let sensitivity = sensitivity_bound(&self.spec);
                if sensitivity == 0.0 {
                    s.value()
                } else {
                    noise::sample_release_noise(s.value(), sensitivity / eps_share, rng)?
                }
            }
            Accumulator::Mean(m) => m.noisy_mean(n, eps_share, rng)?,
            Accumulator::Moments { mean, mean_sq } => {
                let half = eps_share / 2.0;
                let mu = mean.noisy_mean(n, half, rng)?;
                let mu_sq = mean_sq.noisy_mean(n, half, rng)?;
                let var = self.clip_variance(mu_sq - mu * mu);
                if self.spec.kind == AggregatorKind::Stddev {
                    var.sqrt()
                } else {
                    var
                }
            }
            Accumulator::Values(v) => self.noisy_ntile(v, eps_share, rng)?,
        };
        Ok(value)
    }

    /// Noisy bisection over `[L, U]`: every step compares a Laplace-noised
    /// count of inputs below the midpoint with `phi * n`.
    fn noisy_ntile(&self, values: &[f64], eps: f64, rng: &mut RandomSource) -> Result<f64> {
        let bounds = self.spec.bounds.expect("n-tile spec carries bounds");
        let phi = self.spec.ntile_phi.expect("n-tile spec carries phi");
        let iterations = ntile_iterations(bounds);
        if iterations == 0 {
            return Ok(bounds.lower());
        }
        let scale = iterations as f64 / eps;
        let target = phi * values.len() as f64;
        let (mut lo, mut hi) = (bounds.lower(), bounds.upper());
        for _ in 0..iterations {
            let mid = lo + 0.5 * (hi - lo);
            let below = values.iter().filter(|&&x| x < mid).count() as f64;
            if below + noise::sample_laplace(scale, rng)? >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo + 0.5 * (hi - lo))
    }
}

/// Search resolution for the n-tile bisection, relative to the bound width.
pub const NTILE_RESOLUTION_BITS: i32 = 20;

/// Number of bisection steps: `min(64, ceil(log2(width / resolution)))`.
pub fn ntile_iterations(bounds: ClampBounds) -> u32 {
    let width = bounds.width();
    if width <= 0.0 {
        return 0;
    }
    let resolution = width * 2f64.powi(-NTILE_RESOLUTION_BITS);
    ((width / resolution).log2().ceil() as u32).min(64)
}

/// Lower nearest-rank φ-quantile. NaN sorts last. Returns NaN for empty input.
pub fn exact_quantile(values: &[f64], phi: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (phi * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
