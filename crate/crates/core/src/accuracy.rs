//! Closed-form accuracy estimates for anonymized aggregates.

use serde::Serialize;

use crate::noise::{laplace_quantile, PrivacyBudget};
use crate::planner::{compute_tau, release_probability, split_budget};
use crate::{Error, Result};

/// Median of `|Laplace(Δ/ε)|`, which is `ln 2 · Δ / ε`.
pub fn median_noise(sensitivity: f64, epsilon: f64) -> Result<f64> {
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(Error::parameter(format!("sensitivity must be positive and finite, got {sensitivity}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::parameter(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    laplace_quantile(sensitivity / epsilon, 0.75)
}

/// Median noise relative to a true value.
pub fn median_relative_error(sensitivity: f64, epsilon: f64, true_value: f64) -> Result<f64> {
    if !(true_value.is_finite() && true_value != 0.0) {
        return Err(Error::parameter(format!("true value must be finite and non-zero, got {true_value}")));
    }
    Ok(median_noise(sensitivity, epsilon)? / true_value.abs())
}

/// Limit of the suppression probability of a partition whose user count is
/// small compared to τ, `(1 - δ)^(1/cu)`.
pub fn suppression_asymptote(delta: f64, cu: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || cu == 0 {
        return Err(Error::parameter("need delta in (0, 1) and cu >= 1"));
    }
    Ok((1.0 - delta).powf(1.0 / cu as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Suppression {
    pub tau: f64,
    /// Probability that one single-user partition is released, `ρ_τ`.
    pub partition_release: f64,
    /// Probability that a user's `cu` single-user partitions are not all
    /// released, `1 - ρ_τ^cu`.
    pub user_suppression: f64,
    pub small_count_asymptote: f64,
}

/// Suppression figures for a query with `n_aggs` aggregates under `budget`,
/// with the planner's budget split.
pub fn suppression(budget: &PrivacyBudget, n_aggs: usize) -> Result<Suppression> {
    let split = split_budget(budget, n_aggs)?;
    let eps_thr = budget.cu as f64 * split.threshold;
    let tau = compute_tau(eps_thr, budget.delta, budget.cu)?;
    let p = release_probability(tau, eps_thr, budget.cu)?;
    Ok(Suppression {
        tau,
        partition_release: p.per_count,
        user_suppression: 1.0 - p.all_counts,
        small_count_asymptote: suppression_asymptote(budget.delta, budget.cu)?,
    })
}

/// Expected shortfall of the mean when inputs uniform on `[a, b]` are
/// clamped above at `u`: `(b - u)² / (2(b - a))` for `u` in `[a, b]`.
pub fn uniform_clamp_error(a: f64, b: f64, u: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && u.is_finite() && a < b) {
        return Err(Error::parameter(format!("need finite a < b and finite u, got a={a}, b={b}, u={u}")));
    }
    Ok(if u >= b {
        0.0
    } else if u <= a {
        (a + b) / 2.0 - u
    } else {
        (b - u) * (b - u) / (2.0 * (b - a))
    })
}

/// Everything `accuracy` reports for one aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub sensitivity: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub cu: usize,
    pub median_noise: f64,
    pub median_relative_error: Option<f64>,
    pub suppression: Suppression,
    pub clamp_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformInput {
    pub a: f64,
    pub b: f64,
    pub upper_bound: f64,
}

/// Builds a report. `epsilon` is the share spent on the aggregate itself,
/// so the median noise uses it directly; suppression uses the full budget.
pub fn report(
    sensitivity: f64,
    budget: &PrivacyBudget,
    n_aggs: usize,
    true_value: Option<f64>,
    uniform: Option<UniformInput>,
) -> Result<AccuracyReport> {
    Ok(AccuracyReport {
        sensitivity,
        epsilon: budget.epsilon,
        delta: budget.delta,
        cu: budget.cu,
        median_noise: median_noise(sensitivity, budget.epsilon)?,
        median_relative_error: true_value.map(|t| median_relative_error(sensitivity, budget.epsilon, t)).transpose()?,
        suppression: suppression(budget, n_aggs)?,
        clamp_error: uniform.map(|u| uniform_clamp_error(u.a, u.b, u.upper_bound)).transpose()?,
    })
}
