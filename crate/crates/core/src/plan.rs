//! Logical plan trees.
//!
//! Plain operators evaluate directly against a [`Catalog`]. The anonymized
//! aggregation node (χ) is never evaluated here: the planner expands it into
//! a per-user and a cross-user stage, and the nodes that describe the
//! cross-user stage exist only so the rewritten plan can be rendered.

use std::fmt::{self, Write as _};

use crate::aggregates::AggregatorKind;
use crate::noise::{ClampBounds, RandomSource};
use crate::relation::{ops, Catalog, Diagnostics, Expr, PlainAgg, Relation};
use crate::{Error, Result};

/// Anonymized aggregate call as written in the query.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonAggCall {
    pub kind: AggregatorKind,
    /// `None` means `*` (COUNT only).
    pub arg: Option<Expr>,
    /// `None` asks for bounds inference (or, for COUNT, means no bounds).
    pub bounds: Option<ClampBounds>,
    pub phi: Option<f64>,
    pub alias: String,
}

fn write_bounds(f: &mut fmt::Formatter<'_>, b: Option<ClampBounds>) -> fmt::Result {
    if let Some(b) = b {
        write!(f, ", {}, {}", b.lower(), b.upper())?;
    }
    Ok(())
}

impl AnonAggCall {
    fn write_call(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arg = self.arg.as_ref().map_or_else(|| "*".to_string(), Expr::to_string);
        write!(f, "{}({arg}", self.kind.sql_name())?;
        if let Some(phi) = self.phi {
            write!(f, ", {phi}")?;
        }
        write_bounds(f, self.bounds)?;
        f.write_str(")")
    }
}

impl fmt::Display for AnonAggCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_call(f)?;
        write!(f, " AS {}", self.alias)
    }
}

/// Output column of an anonymized query: a grouping key or an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputItem {
    Key(usize),
    Agg(usize),
}

/// A DP aggregate of the cross-user stage, for display.
#[derive(Debug, Clone, PartialEq)]
pub struct DpAggCall {
    pub kind: AggregatorKind,
    /// Per-user column aggregated; `None` counts users.
    pub input: Option<String>,
    pub bounds: Option<ClampBounds>,
    pub phi: Option<f64>,
    pub epsilon: f64,
    /// Share spent on bounds inference when bounds were omitted.
    pub bounds_epsilon: Option<f64>,
    pub alias: String,
}

impl fmt::Display for DpAggCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.kind.sql_name(), self.input.as_deref().unwrap_or("*"))?;
        if let Some(phi) = self.phi {
            write!(f, ", {phi}")?;
        }
        write_bounds(f, self.bounds)?;
        if self.bounds.is_none() && self.bounds_epsilon.is_some() {
            f.write_str(", auto")?;
        }
        write!(f, ") eps={}", self.epsilon)?;
        if let Some(b) = self.bounds_epsilon {
            write!(f, "+{b}")?;
        }
        write!(f, " AS {}", self.alias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanNode {
    Scan {
        table: String,
        alias: Option<String>,
    },
    /// Projection. On owned inputs uid is carried along unless
    /// `propagate_uid` is false, which is an ownership violation.
    Project {
        input: Box<PlanNode>,
        items: Vec<(Expr, String)>,
        propagate_uid: bool,
    },
    Select {
        input: Box<PlanNode>,
        predicate: Expr,
    },
    GroupAggregate {
        input: Box<PlanNode>,
        keys: Vec<(Expr, String)>,
        aggs: Vec<(PlainAgg, String)>,
    },
    Join {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        using_uid: bool,
        condition: Option<Expr>,
    },
    /// Keeps at most `per_user` rows per uid.
    Reservoir {
        input: Box<PlanNode>,
        per_user: usize,
    },
    /// Requalifies every column, as for an aliased subquery.
    Alias {
        input: Box<PlanNode>,
        alias: String,
    },
    /// Drops ownership. Only plain (non-private) queries use it.
    Disown {
        input: Box<PlanNode>,
    },
    /// χ: anonymized grouping and aggregation.
    AnonAggregate {
        input: Box<PlanNode>,
        keys: Vec<(Expr, String)>,
        aggs: Vec<AnonAggCall>,
        output: Vec<OutputItem>,
    },
    /// Reference to the output of a named stage.
    StageInput {
        name: String,
    },
    DpAggregate {
        input: Box<PlanNode>,
        keys: Vec<String>,
        aggs: Vec<DpAggCall>,
    },
    Threshold {
        input: Box<PlanNode>,
        column: String,
        tau: f64,
    },
}

/// Mutable state of one plan evaluation.
#[derive(Debug)]
pub struct ExecContext {
    pub rng: RandomSource,
    pub diagnostics: Diagnostics,
    reservoirs: u32,
}

impl ExecContext {
    pub fn new(rng: RandomSource) -> Self {
        ExecContext { rng, diagnostics: Diagnostics::default(), reservoirs: 0 }
    }
}

fn render_items(items: &[(Expr, String)]) -> String {
    items
        .iter()
        .map(|(e, n)| if &e.default_name() == n { e.to_string() } else { format!("{e} AS {n}") })
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_display<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn ownership(node: &str, reason: &str) -> Error {
    Error::Ownership { node: node.to_string(), reason: reason.to_string() }
}

impl PlanNode {
    pub fn name(&self) -> &'static str {
        match self {
            PlanNode::Scan { .. } => "scan",
            PlanNode::Project { .. } => "project",
            PlanNode::Select { .. } => "select",
            PlanNode::GroupAggregate { .. } => "group_aggregate",
            PlanNode::Join { .. } => "join",
            PlanNode::Reservoir { .. } => "reservoir",
            PlanNode::Alias { .. } => "alias",
            PlanNode::Disown { .. } => "disown",
            PlanNode::AnonAggregate { .. } => "anon_aggregate",
            PlanNode::StageInput { .. } => "stage",
            PlanNode::DpAggregate { .. } => "dp_aggregate",
            PlanNode::Threshold { .. } => "threshold",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match self {
            PlanNode::Scan { .. } | PlanNode::StageInput { .. } => vec![],
            PlanNode::Join { left, right, .. } => vec![left, right],
            PlanNode::Project { input, .. }
            | PlanNode::Select { input, .. }
            | PlanNode::GroupAggregate { input, .. }
            | PlanNode::Reservoir { input, .. }
            | PlanNode::Alias { input, .. }
            | PlanNode::Disown { input }
            | PlanNode::AnonAggregate { input, .. }
            | PlanNode::DpAggregate { input, .. }
            | PlanNode::Threshold { input, .. } => vec![input],
        }
    }

    fn line(&self) -> String {
        match self {
            PlanNode::Scan { table, alias: Some(a) } => format!("scan {table} AS {a}"),
            PlanNode::Scan { table, alias: None } => format!("scan {table}"),
            PlanNode::Project { items, propagate_uid, .. } => {
                let drop = if *propagate_uid { "" } else { " drop_uid" };
                format!("project ({}){drop}", render_items(items))
            }
            PlanNode::Select { predicate, .. } => format!("select {predicate}"),
            PlanNode::GroupAggregate { keys, aggs, .. } => {
                let aggs: Vec<String> = aggs.iter().map(|(a, n)| format!("{a} AS {n}")).collect();
                format!("group_aggregate keys=({}) aggs=({})", render_items(keys), aggs.join(", "))
            }
            PlanNode::Join { using_uid, condition, .. } => {
                let mut s = if *using_uid { "join using (uid)".to_string() } else { "join cross".to_string() };
                if let Some(c) = condition {
                    let _ = write!(s, " on {c}");
                }
                s
            }
            PlanNode::Reservoir { per_user, .. } => format!("reservoir per_user={per_user} partition_by=(uid)"),
            PlanNode::Alias { alias, .. } => format!("alias {alias}"),
            PlanNode::Disown { .. } => "disown".to_string(),
            PlanNode::AnonAggregate { keys, aggs, .. } => {
                format!("anon_aggregate keys=({}) aggs=({})", render_items(keys), join_display(aggs))
            }
            PlanNode::StageInput { name } => format!("stage {name}"),
            PlanNode::DpAggregate { keys, aggs, .. } => {
                format!("dp_aggregate keys=({}) aggs=({})", keys.join(", "), join_display(aggs))
            }
            PlanNode::Threshold { column, tau, .. } => format!("threshold {column} >= {tau}"),
        }
    }

    /// Indented one-node-per-line rendering, stable for golden tests.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        let _ = writeln!(out, "{}{}", "  ".repeat(depth), self.line());
        for c in self.children() {
            c.render_into(depth + 1, out);
        }
    }

    /// Evaluates a plain plan. χ and the cross-user display nodes are
    /// rejected; the planner runs those.
    pub fn evaluate(&self, catalog: &Catalog, ctx: &mut ExecContext) -> Result<Relation> {
        Ok(match self {
            PlanNode::Scan { table, alias } => {
                let rel = catalog.get(table)?.clone();
                rel.with_qualifier(alias.as_deref().unwrap_or(table))
            }
            PlanNode::Project { input, items, propagate_uid } => {
                let rel = input.evaluate(catalog, ctx)?;
                if rel.is_owned() && !propagate_uid {
                    return Err(ownership("project", "projection drops uid from an owned relation"));
                }
                ops::project(&rel, items, &mut ctx.diagnostics)?
            }
            PlanNode::Select { input, predicate } => {
                let rel = input.evaluate(catalog, ctx)?;
                ops::select(&rel, predicate, &mut ctx.diagnostics)?
            }
            PlanNode::GroupAggregate { input, keys, aggs } => {
                let rel = input.evaluate(catalog, ctx)?;
                ops::group_aggregate(&rel, keys, aggs, &mut ctx.diagnostics)?
            }
            PlanNode::Join { left, right, using_uid, condition } => {
                let l = left.evaluate(catalog, ctx)?;
                let r = right.evaluate(catalog, ctx)?;
                ops::join(&l, &r, *using_uid, condition.as_ref(), &mut ctx.diagnostics)?
            }
            PlanNode::Reservoir { input, per_user } => {
                let rel = input.evaluate(catalog, ctx)?;
                ctx.reservoirs += 1;
                let stream = ctx.rng.substream(&format!("reservoir#{}", ctx.reservoirs));
                ops::reservoir_per_user(&rel, *per_user, &stream)?
            }
            PlanNode::Alias { input, alias } => input.evaluate(catalog, ctx)?.with_qualifier(alias),
            PlanNode::Disown { input } => {
                let rel = input.evaluate(catalog, ctx)?;
                let mut schema = rel.schema().clone();
                schema.uid = None;
                Relation::from_parts(schema, rel.into_rows())
            }
            other => {
                return Err(Error::Unsupported(format!(
                    "`{}` nodes are executed by the anonymization planner",
                    other.name()
                )))
            }
        })
    }

    /// Output schema, computed by evaluating against empty tables. Name,
    /// type and ownership errors surface exactly as they would at run time.
    pub fn schema(&self, catalog: &Catalog) -> Result<crate::relation::Schema> {
        let empty = catalog.empty_like();
        let mut ctx = ExecContext::new(RandomSource::from_seed(0));
        Ok(self.evaluate(&empty, &mut ctx)?.schema().clone())
    }

    /// Checks that every operator under χ keeps rows single-owner: the χ
    /// input must be owned, and no node below it may drop ownership.
    pub fn validate_ownership(&self, catalog: &Catalog) -> Result<()> {
        match self {
            PlanNode::AnonAggregate { input, .. } => {
                check_below_anon(input)?;
                let schema = input.schema(catalog)?;
                if !schema.owned() {
                    return Err(ownership("anon_aggregate", "anonymized aggregation needs an owned input"));
                }
                Ok(())
            }
            other => other.children().into_iter().try_for_each(|c| c.validate_ownership(catalog)),
        }
    }
}

fn check_below_anon(node: &PlanNode) -> Result<()> {
    match node {
        PlanNode::Disown { .. } => Err(ownership("disown", "ownership cannot be dropped below anonymization")),
        PlanNode::Project { propagate_uid: false, .. } => {
            Err(ownership("project", "projection drops uid from an owned relation"))
        }
        PlanNode::Join { using_uid: false, .. } => {
            Err(ownership("join", "joins below anonymization must be on uid (USING (uid))"))
        }
        PlanNode::AnonAggregate { .. }
        | PlanNode::DpAggregate { .. }
        | PlanNode::Threshold { .. }
        | PlanNode::StageInput { .. } => Err(ownership(node.name(), "anonymized aggregation cannot be nested")),
        other => other.children().into_iter().try_for_each(check_below_anon),
    }
}

impl fmt::Display for PlanNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
