//! Expansion of the anonymized aggregation (χ) into two stages, and their
//! execution.
//!
//! The per-user stage groups the validated subquery by `(uid, keys)` with
//! plain partial aggregates and keeps at most `cu` of those rows per user.
//! The cross-user stage groups by the keys, runs the DP aggregates on the
//! per-user rows (one per user and partition) and releases a partition only
//! when its noisy user count reaches τ.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::aggregates::{noise_ci, AggregatorKind, AggregatorSpec, AggregatorState, NoisyResult};
use crate::bounds::{ApproxBoundsConfig, LogHistogram};
use crate::noise::{sample_laplace, PrivacyBudget, RandomSource};
use crate::plan::{AnonAggCall, DpAggCall, ExecContext, OutputItem, PlanNode};
use crate::relation::{Catalog, ColumnRef, Diagnostics, Expr, PlainAgg, PlainAggFunc, Relation, Value};
use crate::{Error, Result};

/// Column of the per-user stage holding partial aggregate `i`.
pub fn partial_name(i: usize) -> String {
    format!("__p{i}")
}

/// Name of the noisy user count compared against τ.
pub const USER_COUNT_NAME: &str = "__users";

/// τ such that a partition with a single user is released with probability
/// at most δ, given `cu` counts each `eps_threshold / cu`-DP.
pub fn compute_tau(eps_threshold: f64, delta: f64, cu: usize) -> Result<f64> {
    if !(eps_threshold > 0.0 && eps_threshold.is_finite()) {
        return Err(Error::parameter(format!("threshold epsilon must be positive and finite, got {eps_threshold}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::parameter(format!("delta must lie strictly between 0 and 1, got {delta}")));
    }
    if cu == 0 {
        return Err(Error::parameter("cu must be at least 1"));
    }
    // ln(2 - 2(1-δ)^(1/cu)), written to stay accurate for tiny δ.
    let log_term = if cu == 1 { (2.0 * delta).ln() } else { (-2.0 * ((-delta).ln_1p() / cu as f64).exp_m1()).ln() };
    Ok(1.0 - cu as f64 * log_term / eps_threshold)
}

/// Probability that one user's partition passes the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReleaseProbability {
    /// ρ_τ: a single count of 1 reaches τ.
    pub per_count: f64,
    /// All `cu` counts of one user reach τ.
    pub all_counts: f64,
    /// At least one of the `cu` counts reaches τ; equals δ at the τ of
    /// [`compute_tau`].
    pub any_count: f64,
}

pub fn release_probability(tau: f64, eps_threshold: f64, cu: usize) -> Result<ReleaseProbability> {
    if tau.is_nan() || tau < 1.0 {
        return Err(Error::parameter(format!("release probability needs tau >= 1, got {tau}")));
    }
    if eps_threshold.is_nan() || eps_threshold <= 0.0 || cu == 0 {
        return Err(Error::parameter("threshold epsilon must be positive and cu at least 1"));
    }
    let rho = 0.5 * (-(tau - 1.0) * eps_threshold / cu as f64).exp();
    Ok(ReleaseProbability {
        per_count: rho,
        all_counts: rho.powi(cu as i32),
        any_count: -((-rho).ln_1p() * cu as f64).exp_m1(),
    })
}

/// Per-mechanism ε shares: every aggregate and the threshold count get
/// ε / (cu · (N + 1)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetSplit {
    pub per_aggregate: f64,
    pub threshold: f64,
    pub aggregates: usize,
}

pub fn split_budget(budget: &PrivacyBudget, n_aggs: usize) -> Result<BudgetSplit> {
    if n_aggs == 0 {
        return Err(Error::parameter("an anonymized query needs at least one aggregate"));
    }
    let share = budget.epsilon / (budget.cu as f64 * (n_aggs as f64 + 1.0));
    Ok(BudgetSplit { per_aggregate: share, threshold: share, aggregates: n_aggs })
}

/// δ = n^(−ε·ln n) = exp(−ε·(ln n)²) for `users` distinct users.
pub fn default_delta(users: usize, epsilon: f64) -> Result<f64> {
    if users < 2 {
        return Err(Error::parameter(format!(
            "cannot derive a default delta from {users} user(s); pass delta explicitly"
        )));
    }
    let ln_n = (users as f64).ln();
    let delta = (-epsilon * ln_n * ln_n).exp();
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::parameter(format!("default delta {delta} is out of range; pass delta explicitly")));
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub budget: PrivacyBudget,
    pub ci_level: f64,
    /// Merge suppressed partitions into one extra partition.
    pub leftovers: bool,
    /// Replaces the computed τ. For tests and debugging only.
    pub tau_override: Option<f64>,
    pub bounds: ApproxBoundsConfig,
}

impl PlannerConfig {
    pub fn new(budget: PrivacyBudget) -> Self {
        PlannerConfig {
            budget,
            ci_level: 0.95,
            leftovers: false,
            tau_override: None,
            bounds: ApproxBoundsConfig::default(),
        }
    }
}

/// `Π_s(_g χ_a(T(R)))`, taken apart.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonQuery {
    pub subquery: PlanNode,
    pub keys: Vec<(Expr, String)>,
    pub aggs: Vec<AnonAggCall>,
    pub output: Vec<OutputItem>,
}

impl AnonQuery {
    pub fn from_plan(plan: &PlanNode) -> Result<Self> {
        match plan {
            PlanNode::AnonAggregate { input, keys, aggs, output } => Ok(AnonQuery {
                subquery: (**input).clone(),
                keys: keys.clone(),
                aggs: aggs.clone(),
                output: output.clone(),
            }),
            other => Err(Error::Rejected(format!(
                "expected an anonymized aggregation at the plan root, found `{}`",
                other.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CrossAgg {
    spec_kind: AggregatorKind,
    bounds: Option<crate::ClampBounds>,
    phi: Option<f64>,
    /// Column of the per-user stage.
    column: usize,
    /// Only users whose partial count is positive take part.
    positive_only: bool,
    epsilon: f64,
    bounds_epsilon: Option<f64>,
}

/// A χ query after expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct RewrittenPlan {
    pub per_user_stage: PlanNode,
    /// Display form of the cross-user stage.
    pub cross_user_stage: PlanNode,
    pub tau: f64,
    /// ε spent by each aggregate (including any bounds inference).
    pub eps_shares: Vec<f64>,
    /// ε of each noisy user count.
    pub threshold_share: f64,
    pub budget: PrivacyBudget,
    pub leftovers_enabled: bool,
    pub ci_level: f64,
    bounds_cfg: ApproxBoundsConfig,
    key_names: Vec<String>,
    agg_names: Vec<String>,
    output: Vec<OutputItem>,
    cross: Vec<CrossAgg>,
}

fn partial_for(call: &AnonAggCall) -> PlainAgg {
    let func = match call.kind {
        AggregatorKind::Count => PlainAggFunc::Count,
        AggregatorKind::Sum => PlainAggFunc::Sum,
        AggregatorKind::Avg => PlainAggFunc::Avg,
        AggregatorKind::Var => PlainAggFunc::Var,
        AggregatorKind::Stddev => PlainAggFunc::Stddev,
        AggregatorKind::Ntile => PlainAggFunc::Quantile(call.phi.unwrap_or(0.5)),
    };
    PlainAgg::new(func, call.arg.clone())
}

fn validate_call(call: &AnonAggCall) -> Result<()> {
    if call.arg.is_none() && call.kind != AggregatorKind::Count {
        return Err(Error::Rejected(format!("{} needs a column argument", call.kind.sql_name())));
    }
    if (call.kind == AggregatorKind::Ntile) != call.phi.is_some() {
        return Err(Error::Rejected(format!("{} takes an n-tile parameter only for ANON_NTILE", call.kind.sql_name())));
    }
    if let Some(phi) = call.phi {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::parameter(format!("n-tile parameter must lie in (0, 1), got {phi}")));
        }
    }
    Ok(())
}

/// Expands χ into the per-user and cross-user stages.
pub fn rewrite(q: &AnonQuery, cfg: &PlannerConfig) -> Result<RewrittenPlan> {
    if !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
        return Err(Error::parameter(format!("confidence level must lie in (0, 1), got {}", cfg.ci_level)));
    }
    cfg.bounds.validate()?;
    q.aggs.iter().try_for_each(validate_call)?;
    let budget = cfg.budget;
    // The leftovers partition is one more partition a user can reach, so it
    // is paid for out of the same ε by splitting as if cu were one larger.
    let partitions = budget.cu + usize::from(cfg.leftovers);
    let split = split_budget(&PrivacyBudget { cu: partitions, ..budget }, q.aggs.len())?;
    let tau = match cfg.tau_override {
        Some(t) => t,
        None => compute_tau(partitions as f64 * split.threshold, budget.delta, partitions)?,
    };

    let k = q.keys.len();
    let mut keys = vec![(Expr::col("uid"), "uid".to_string())];
    keys.extend(q.keys.iter().cloned());
    let partials: Vec<(PlainAgg, String)> =
        q.aggs.iter().enumerate().map(|(i, a)| (partial_for(a), partial_name(i))).collect();
    let per_user_stage = PlanNode::Reservoir {
        input: Box::new(PlanNode::GroupAggregate { input: Box::new(q.subquery.clone()), keys, aggs: partials }),
        per_user: budget.cu,
    };

    let mut cross = Vec::with_capacity(q.aggs.len());
    let mut eps_shares = Vec::with_capacity(q.aggs.len());
    let mut display = Vec::with_capacity(q.aggs.len() + 1);
    for (i, a) in q.aggs.iter().enumerate() {
        let (kind, positive_only) = match (a.kind, a.bounds) {
            (AggregatorKind::Count, Some(_)) => (AggregatorKind::Sum, false),
            (AggregatorKind::Count, None) => (AggregatorKind::Count, true),
            (kind, _) => (kind, false),
        };
        let infer = a.bounds.is_none() && kind != AggregatorKind::Count;
        let (epsilon, bounds_epsilon) = if infer {
            (split.per_aggregate / 2.0, Some(split.per_aggregate / 2.0))
        } else {
            (split.per_aggregate, None)
        };
        cross.push(CrossAgg {
            spec_kind: kind,
            bounds: a.bounds,
            phi: a.phi,
            column: 1 + k + i,
            positive_only,
            epsilon,
            bounds_epsilon,
        });
        eps_shares.push(split.per_aggregate);
        display.push(DpAggCall {
            kind,
            input: Some(partial_name(i)),
            bounds: a.bounds,
            phi: a.phi,
            epsilon,
            bounds_epsilon,
            alias: a.alias.clone(),
        });
    }
    display.push(DpAggCall {
        kind: AggregatorKind::Count,
        input: None,
        bounds: None,
        phi: None,
        epsilon: split.threshold,
        bounds_epsilon: None,
        alias: USER_COUNT_NAME.to_string(),
    });

    let key_names: Vec<String> = q.keys.iter().map(|(_, n)| n.clone()).collect();
    let agg_names: Vec<String> = q.aggs.iter().map(|a| a.alias.clone()).collect();
    let out_items = q
        .output
        .iter()
        .map(|o| {
            let name = match *o {
                OutputItem::Key(i) => &key_names[i],
                OutputItem::Agg(i) => &agg_names[i],
            };
            (Expr::Column(ColumnRef::new(None, name)), name.clone())
        })
        .collect();
    let cross_user_stage = PlanNode::Project {
        input: Box::new(PlanNode::Threshold {
            input: Box::new(PlanNode::DpAggregate {
                input: Box::new(PlanNode::StageInput { name: "U".into() }),
                keys: key_names.clone(),
                aggs: display,
            }),
            column: USER_COUNT_NAME.to_string(),
            tau,
        }),
        items: out_items,
        propagate_uid: true,
    };

    Ok(RewrittenPlan {
        per_user_stage,
        cross_user_stage,
        tau,
        eps_shares,
        threshold_share: split.threshold,
        budget,
        leftovers_enabled: cfg.leftovers,
        ci_level: cfg.ci_level,
        bounds_cfg: cfg.bounds,
        key_names,
        agg_names,
        output: q.output.clone(),
        cross,
    })
}

impl RewrittenPlan {
    /// Stable text form of both stages and the derived parameters.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "U:");
        s.push_str(&self.per_user_stage.render());
        let _ = writeln!(s, "S:");
        s.push_str(&self.cross_user_stage.render());
        let _ = writeln!(
            s,
            "params: epsilon={:?} delta={:?} cu={} tau={:?} threshold_share={:?} leftovers={}",
            self.budget.epsilon,
            self.budget.delta,
            self.budget.cu,
            self.tau,
            self.threshold_share,
            self.leftovers_enabled
        );
        s
    }

    /// Total ε the plan can spend per user.
    pub fn epsilon_spent(&self) -> f64 {
        let partitions = self.budget.cu + usize::from(self.leftovers_enabled);
        partitions as f64 * (self.eps_shares.iter().sum::<f64>() + self.threshold_share)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    /// When false, counts and aggregates are released without noise. Bounds
    /// inference stays noisy. Test instrumentation only.
    pub add_noise: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions { add_noise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub keys: Vec<Value>,
    pub values: Vec<NoisyResult>,
    /// The noisy user count that passed τ.
    pub noisy_users: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub key_names: Vec<String>,
    pub agg_names: Vec<String>,
    pub output: Vec<OutputItem>,
    /// Released partitions, sorted by key.
    pub rows: Vec<ResultRow>,
    /// Non-empty partitions withheld by τ or failed bounds inference.
    pub suppressed_count: usize,
    pub leftovers: Option<ResultRow>,
    pub epsilon: f64,
    pub delta: f64,
    pub cu: usize,
    pub tau: f64,
    pub diagnostics: Diagnostics,
}

impl ResultTable {
    pub fn column_names(&self) -> Vec<&str> {
        self.output
            .iter()
            .map(|o| match *o {
                OutputItem::Key(i) => self.key_names[i].as_str(),
                OutputItem::Agg(i) => self.agg_names[i].as_str(),
            })
            .collect()
    }

    /// Released rows, then the leftovers row if any.
    pub fn all_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().chain(self.leftovers.iter())
    }
}

/// Runs the per-user stage alone, with the same randomness `execute` uses.
pub fn execute_per_user_stage(plan: &RewrittenPlan, catalog: &Catalog, rng: &RandomSource) -> Result<Relation> {
    let mut ctx = ExecContext::new(rng.substream("per-user"));
    let u = plan.per_user_stage.evaluate(catalog, &mut ctx)?;
    if !u.is_owned() {
        return Err(Error::Ownership {
            node: "anon_aggregate".into(),
            reason: "anonymized aggregation needs an owned input".into(),
        });
    }
    Ok(u)
}

enum Outcome {
    Released(ResultRow),
    Suppressed,
}

pub fn execute(plan: &RewrittenPlan, catalog: &Catalog, rng: &RandomSource, opts: ExecOptions) -> Result<ResultTable> {
    let mut ctx = ExecContext::new(rng.substream("per-user"));
    let u = plan.per_user_stage.evaluate(catalog, &mut ctx)?;
    if !u.is_owned() {
        return Err(Error::Ownership {
            node: "anon_aggregate".into(),
            reason: "anonymized aggregation needs an owned input".into(),
        });
    }
    let mut diagnostics = ctx.diagnostics;
    let k = plan.key_names.len();

    let mut groups: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    for (i, row) in u.rows().iter().enumerate() {
        groups.entry(row[1..=k].to_vec()).or_default().push(i);
    }

    let mut rows = Vec::new();
    let mut suppressed: Vec<usize> = Vec::new();
    let mut suppressed_count = 0;
    for (key, members) in groups {
        let mut stream = rng.substream(&format!("group/{key:?}"));
        match release_partition(plan, &u, &members, key, &mut stream, opts, &mut diagnostics)? {
            Outcome::Released(row) => rows.push(row),
            Outcome::Suppressed => {
                suppressed_count += 1;
                suppressed.extend(members);
            }
        }
    }

    let mut leftovers = None;
    if plan.leftovers_enabled && !suppressed.is_empty() {
        let members = one_row_per_user(&u, &suppressed, rng);
        let mut stream = rng.substream("leftovers");
        let key = vec![Value::Null; k];
        if let Outcome::Released(row) = release_partition(plan, &u, &members, key, &mut stream, opts, &mut diagnostics)?
        {
            leftovers = Some(row);
        }
    }

    Ok(ResultTable {
        key_names: plan.key_names.clone(),
        agg_names: plan.agg_names.clone(),
        output: plan.output.clone(),
        rows,
        suppressed_count,
        leftovers,
        epsilon: plan.budget.epsilon,
        delta: plan.budget.delta,
        cu: plan.budget.cu,
        tau: plan.tau,
        diagnostics,
    })
}

/// Picks one of each user's rows uniformly, so the merged partition still
/// sees one input per user.
fn one_row_per_user(u: &Relation, members: &[usize], rng: &RandomSource) -> Vec<usize> {
    let uid = u.uid_index().expect("per-user stage is owned");
    let mut by_user: BTreeMap<&Value, Vec<usize>> = BTreeMap::new();
    for &i in members {
        by_user.entry(&u.rows()[i][uid]).or_default().push(i);
    }
    let mut out: Vec<usize> = by_user
        .into_iter()
        .map(|(user, mut rows)| {
            rows.sort_unstable();
            let pick = rng.substream(&format!("leftovers/{user:?}")).index(rows.len());
            rows[pick]
        })
        .collect();
    out.sort_unstable();
    out
}

fn release_partition(
    plan: &RewrittenPlan,
    u: &Relation,
    members: &[usize],
    key: Vec<Value>,
    rng: &mut RandomSource,
    opts: ExecOptions,
    diagnostics: &mut Diagnostics,
) -> Result<Outcome> {
    let users = members.len() as f64;
    let noisy_users = if opts.add_noise {
        users + sample_laplace(1.0 / plan.threshold_share, &mut rng.substream("users"))?
    } else {
        users
    };
    if noisy_users < plan.tau {
        return Ok(Outcome::Suppressed);
    }

    let mut values = Vec::with_capacity(plan.cross.len());
    for (i, agg) in plan.cross.iter().enumerate() {
        let mut stream = rng.substream(&format!("agg{i}"));
        let inputs: Vec<f64> = members
            .iter()
            .filter_map(|&r| match &u.rows()[r][agg.column] {
                Value::Null => None,
                v if agg.positive_only => v.as_f64().filter(|&x| x > 0.0),
                v => Some(v.as_f64().unwrap_or(f64::NAN)),
            })
            .collect();
        let bounds = match (agg.bounds, agg.bounds_epsilon) {
            (Some(b), _) => Some(b),
            (None, Some(eps)) => {
                let mut hist = LogHistogram::new(plan.bounds_cfg)?;
                inputs.iter().for_each(|&x| hist.add(x));
                match hist.infer(eps, &mut stream) {
                    Ok(b) => Some(b),
                    Err(Error::BoundsInference(msg)) => {
                        diagnostics.record(format!("{}: {msg}", plan.agg_names[i]));
                        return Ok(Outcome::Suppressed);
                    }
                    Err(e) => return Err(e),
                }
            }
            (None, None) => None,
        };
        let spec = AggregatorSpec::new(agg.spec_kind, bounds, agg.phi)?;
        let mut state = AggregatorState::new(spec);
        inputs.iter().for_each(|&x| state.accumulate(x));
        let result = if opts.add_noise {
            state.release(agg.epsilon, plan.ci_level, &mut stream)?
        } else {
            let value = match state.exact_result() {
                Ok(v) => v,
                Err(_) if matches!(agg.spec_kind, AggregatorKind::Count | AggregatorKind::Sum) => 0.0,
                Err(_) => f64::NAN,
            };
            let (lo, hi) = noise_ci(state.spec(), agg.epsilon, plan.ci_level)?;
            NoisyResult { value, ci: (value + lo, value + hi), epsilon_spent: agg.epsilon }
        };
        values.push(NoisyResult { epsilon_spent: plan.eps_shares[i], ..result });
    }
    Ok(Outcome::Released(ResultRow { keys: key, values, noisy_users }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::ClampBounds;
    use crate::relation::{Column, DataType};

    #[test]
    fn tau_examples() {
        assert_eq!(compute_tau(1.0, 0.5, 1).unwrap(), 1.0);
        let t = compute_tau(1.0, 0.05, 1).unwrap();
        assert!((t - (1.0 - 0.1f64.ln())).abs() < 1e-12);
        assert!((t - 3.302585).abs() < 1e-6);
        assert!(compute_tau(1.0, 0.0, 1).is_err());
        assert!(compute_tau(1.0, 1.0, 1).is_err());
        assert!(compute_tau(0.0, 0.5, 1).is_err());
    }

    #[test]
    fn tau_decreases_with_delta() {
        for cu in [1, 2, 5] {
            let grid: Vec<f64> = (0..50).map(|i| 1e-6 * (0.5f64 / 1e-6).powf(i as f64 / 49.0)).collect();
            let taus: Vec<f64> = grid.iter().map(|&d| compute_tau(1.0, d, cu).unwrap()).collect();
            assert!(taus.windows(2).all(|w| w[1] < w[0]), "cu={cu}");
        }
    }

    #[test]
    fn tau_and_release_probability_are_inverse() {
        for (eps, delta, cu) in [(1.0, 0.05, 1), (0.5, 1e-5, 3), (2.0, 1e-9, 2)] {
            let tau = compute_tau(eps, delta, cu).unwrap();
            let p = release_probability(tau, eps, cu).unwrap();
            assert!((p.any_count - delta).abs() <= 1e-9 * delta.max(1e-3), "{eps} {delta} {cu}: {p:?}");
            assert!(p.all_counts <= delta * (1.0 + 1e-9));
        }
        assert_eq!(release_probability(1.0, 1.0, 1).unwrap().per_count, 0.5);
        let rho = release_probability(3.302585092994046, 1.0, 1).unwrap().per_count;
        assert!((rho - 0.05).abs() < 1e-12);
        assert!(release_probability(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn release_probability_matches_sampling() {
        let (eps, tau) = (1.0, 2.0);
        let rho = release_probability(tau, eps, 1).unwrap().per_count;
        let mut rng = RandomSource::from_seed(11);
        let n = 100_000;
        let hits = (0..n).filter(|_| 1.0 + sample_laplace(1.0 / eps, &mut rng).unwrap() >= tau).count();
        let sigma = (rho * (1.0 - rho) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - rho).abs() < 3.0 * sigma);
    }

    #[test]
    fn budget_split_examples() {
        let s = split_budget(&PrivacyBudget::new(1.0, 0.1, 2).unwrap(), 1).unwrap();
        assert_eq!((s.per_aggregate, s.threshold), (0.25, 0.25));
        let s = split_budget(&PrivacyBudget::new(1.0, 0.1, 1).unwrap(), 1).unwrap();
        assert_eq!((s.per_aggregate, s.threshold), (0.5, 0.5));
        let s = split_budget(&PrivacyBudget::new(4.0, 0.1, 1).unwrap(), 3).unwrap();
        assert_eq!(s.per_aggregate, 1.0);
        assert!(split_budget(&PrivacyBudget::new(4.0, 0.1, 1).unwrap(), 0).is_err());
    }

    #[test]
    fn default_delta_rule() {
        let d = default_delta(1_000_000, 0.1).unwrap();
        let expected = (1e6f64).powf(-0.1 * (1e6f64).ln());
        assert!((d / expected - 1.0).abs() < 1e-9);
        assert!(default_delta(1, 1.0).is_err());
        // ε·(ln n)² below ~1e-17 rounds δ to 1.
        assert!(default_delta(2, 1e-18).is_err());
    }

    fn fig1_catalog() -> Catalog {
        let mut c = Catalog::new();
        c.insert(
            "Employee",
            Relation::owned(
                vec![Column::new("uid", DataType::Int), Column::new("dept", DataType::Text)],
                "uid",
                vec![
                    vec![Value::Int(1), "Sales".into()],
                    vec![Value::Int(2), "Sales".into()],
                    vec![Value::Int(3), "HR".into()],
                    vec![Value::Int(4), "HR".into()],
                    vec![Value::Int(5), "IT".into()],
                ],
            )
            .unwrap(),
        );
        c.insert(
            "Order",
            Relation::owned(
                vec![Column::new("uid", DataType::Int), Column::new("item", DataType::Text)],
                "uid",
                [(1, "a"), (1, "b"), (2, "c"), (3, "d"), (4, "e"), (4, "f"), (4, "g"), (5, "h")]
                    .iter()
                    .map(|&(u, i)| vec![Value::Int(u), i.into()])
                    .collect(),
            )
            .unwrap(),
        );
        c
    }

    fn fig1_query() -> AnonQuery {
        AnonQuery {
            subquery: PlanNode::Join {
                left: Box::new(PlanNode::Scan { table: "Employee".into(), alias: Some("E".into()) }),
                right: Box::new(PlanNode::Scan { table: "Order".into(), alias: Some("O".into()) }),
                using_uid: true,
                condition: None,
            },
            keys: vec![(Expr::col("dept"), "dept".into())],
            aggs: vec![AnonAggCall {
                kind: AggregatorKind::Count,
                arg: None,
                bounds: Some(ClampBounds::new(0.0, 5.0).unwrap()),
                phi: None,
                alias: "c".into(),
            }],
            output: vec![OutputItem::Key(0), OutputItem::Agg(0)],
        }
    }

    #[test]
    fn two_step_example_drops_it() {
        let mut cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.05, 1).unwrap());
        cfg.tau_override = Some(2.0);
        let plan = rewrite(&fig1_query(), &cfg).unwrap();
        let out =
            execute(&plan, &fig1_catalog(), &RandomSource::from_seed(3), ExecOptions { add_noise: false }).unwrap();
        let depts: Vec<String> = out.rows.iter().map(|r| r.keys[0].to_string()).collect();
        assert_eq!(depts, ["HR", "Sales"]);
        assert_eq!(out.suppressed_count, 1);
        // HR: user 3 has one order, user 4 three; Sales: 2 + 1.
        assert_eq!(out.rows[0].values[0].value, 4.0);
        assert_eq!(out.rows[1].values[0].value, 3.0);
    }

    #[test]
    fn per_user_stage_bounds_contributions() {
        let cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.05, 1).unwrap());
        let plan = rewrite(&fig1_query(), &cfg).unwrap();
        let u = execute_per_user_stage(&plan, &fig1_catalog(), &RandomSource::from_seed(3)).unwrap();
        let mut uids: Vec<&Value> = u.rows().iter().map(|r| &r[0]).collect();
        let before = uids.len();
        uids.dedup();
        assert_eq!(uids.len(), before);
    }

    #[test]
    fn leftovers_merge_suppressed_partitions() {
        let mut cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.05, 1).unwrap());
        cfg.tau_override = Some(1.0);
        cfg.leftovers = true;
        let mut q = fig1_query();
        q.keys = vec![(Expr::col("item"), "item".into())];
        let plan = rewrite(&q, &cfg).unwrap();
        assert_eq!(plan.threshold_share, 0.25);
        let out =
            execute(&plan, &fig1_catalog(), &RandomSource::from_seed(3), ExecOptions { add_noise: false }).unwrap();
        assert_eq!(out.rows.len() + out.suppressed_count, 5);
        assert!(out.leftovers.is_none());
        cfg.tau_override = Some(1.5);
        let plan = rewrite(&q, &cfg).unwrap();
        let out =
            execute(&plan, &fig1_catalog(), &RandomSource::from_seed(3), ExecOptions { add_noise: false }).unwrap();
        assert_eq!(out.rows.len(), 0);
        assert_eq!(out.suppressed_count, 5);
        let left = out.leftovers.expect("five users pass τ=1.5");
        assert_eq!(left.keys, vec![Value::Null]);
        assert_eq!(left.noisy_users, 5.0);
    }

    #[test]
    fn empty_database_releases_nothing() {
        let cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.05, 1).unwrap());
        let plan = rewrite(&fig1_query(), &cfg).unwrap();
        let out =
            execute(&plan, &fig1_catalog().empty_like(), &RandomSource::from_seed(1), ExecOptions::default()).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.suppressed_count, 0);
    }

    #[test]
    fn budget_is_fully_accounted() {
        let mut cfg = PlannerConfig::new(PrivacyBudget::new(2.0, 0.05, 3).unwrap());
        let mut q = fig1_query();
        q.aggs.push(AnonAggCall { alias: "d".into(), ..q.aggs[0].clone() });
        let plan = rewrite(&q, &cfg).unwrap();
        assert!((plan.epsilon_spent() - 2.0).abs() < 1e-12);
        cfg.leftovers = true;
        let plan = rewrite(&q, &cfg).unwrap();
        assert!((plan.epsilon_spent() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn released_rows_pass_threshold() {
        let cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.3, 1).unwrap());
        let plan = rewrite(&fig1_query(), &cfg).unwrap();
        for seed in 0..200 {
            let out = execute(&plan, &fig1_catalog(), &RandomSource::from_seed(seed), ExecOptions::default()).unwrap();
            assert!(out.rows.iter().all(|r| r.noisy_users >= plan.tau));
            assert_eq!(out.rows.len() + out.suppressed_count, 3);
        }
    }

    #[test]
    fn auto_bounds_prologue() {
        let mut cfg = PlannerConfig::new(PrivacyBudget::new(1.0, 0.05, 1).unwrap());
        cfg.tau_override = Some(f64::NEG_INFINITY);
        let mut q = fig1_query();
        q.aggs[0] = AnonAggCall {
            kind: AggregatorKind::Sum,
            arg: Some(Expr::col("uid")),
            bounds: None,
            phi: None,
            alias: "s".into(),
        };
        let plan = rewrite(&q, &cfg).unwrap();
        assert!(plan.cross_user_stage.render().contains("ANON_SUM(__p0, auto) eps=0.25+0.25 AS s"));
        // Tiny partitions cannot clear the histogram threshold.
        let out = execute(&plan, &fig1_catalog(), &RandomSource::from_seed(5), ExecOptions::default()).unwrap();
        assert_eq!(out.rows.len(), 0);
        assert_eq!(out.suppressed_count, 3);
        assert_eq!(out.diagnostics.count, 3);
    }
}
