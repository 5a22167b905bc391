//! Differentially private SQL aggregation with bounded user contribution.
//!
//! The engine accepts `SELECT WITH ANONYMIZATION` queries over tables whose
//! rows are each owned by one user. An anonymized query is rewritten into a
//! per-user stage (group by user and key, then keep at most `cu` partitions per
//! user) followed by a cross-user stage that runs ε-DP aggregates with clamped
//! inputs and suppresses partitions whose noisy user count falls below τ.
//!
//! Module map:
//! - [`noise`]: Laplace sampling, snapping, clamping, quantiles.
//! - [`aggregates`] and [`bounds`]: the bounded-contribution DP aggregates and
//!   automatic bounds inference.
//! - [`relation`] and [`plan`]: in-memory relations, relational operators and
//!   ownership validation.
//! - [`planner`]: the two-stage rewrite, τ and budget computation, execution.
//! - [`sql`]: tokenizer, parser and lowering for the supported SQL subset.
//! - [`tester`]: the stochastic DP tester for aggregation primitives.
//! - [`accuracy`]: closed-form accuracy estimates.

pub mod accuracy;
pub mod aggregates;
pub mod bounds;
mod error;
pub mod exact_sum;
pub mod noise;
pub mod plan;
pub mod planner;
pub mod relation;
pub mod sql;
pub mod tester;

pub use aggregates::{AggregatorKind, AggregatorSpec, AggregatorState, NoisyResult};
pub use bounds::ApproxBoundsConfig;
pub use error::{Error, ErrorCategory, Result};
pub use noise::{ClampBounds, PrivacyBudget, RandomSource};
pub use plan::PlanNode;
pub use planner::{AnonQuery, ExecOptions, PlannerConfig, ResultTable, RewrittenPlan};
pub use relation::{Catalog, Column, DataType, Relation, Value};

/// Parses, lowers and rewrites an anonymized query. Plain queries are
/// rejected: their results carry no privacy guarantee.
pub fn plan_query(
    text: &str,
    catalog: &Catalog,
    cfg: &PlannerConfig,
    parse: sql::ParseOptions,
) -> Result<RewrittenPlan> {
    let plan = sql::compile(text, catalog, parse)?;
    planner::rewrite(&AnonQuery::from_plan(&plan)?, cfg)
}
