//! AST to plan lowering with name resolution and ownership checks.

use super::ast::*;
use crate::aggregates::AggregatorKind;
use crate::noise::ClampBounds;
use crate::plan::{AnonAggCall, OutputItem, PlanNode};
use crate::relation::{Catalog, Expr, PlainAgg, PlainAggFunc, Schema, Value};
use crate::{Error, Result};

/// Lowers a parsed query. Anonymized queries become a χ node over their
/// validated subquery; plain queries drop ownership at the top and run as
/// ordinary SQL.
pub fn lower(q: &Query, catalog: &Catalog) -> Result<PlanNode> {
    if q.anonymized {
        lower_anon(q, catalog)
    } else {
        lower_plain(q, catalog, true)
    }
}

fn scalar(e: &SqlExpr) -> Result<Expr> {
    Ok(match e {
        SqlExpr::Column(c) => Expr::Column(c.clone()),
        SqlExpr::Literal(v) => Expr::Literal(v.clone()),
        SqlExpr::Unary { op, expr } => Expr::unary(*op, scalar(expr)?),
        SqlExpr::Binary { op, left, right } => Expr::binary(*op, scalar(left)?, scalar(right)?),
        SqlExpr::If { cond, then, otherwise } => Expr::if_then_else(scalar(cond)?, scalar(then)?, scalar(otherwise)?),
        SqlExpr::Call(c) => return Err(misplaced_call(c)),
    })
}

fn misplaced_call(c: &Call) -> Error {
    if c.is_anon() {
        Error::Rejected(format!("{} must be a top-level select item", c.name))
    } else if is_plain_agg_name(&c.name) {
        Error::Rejected(format!("aggregate {} is not allowed here", c.name))
    } else {
        Error::Unsupported(format!("function {} is not supported", c.name))
    }
}

fn is_plain_agg_name(name: &str) -> bool {
    matches!(name, "COUNT" | "SUM" | "AVG" | "VAR" | "STDDEV")
}

fn no_calls(e: &SqlExpr, clause: &str) -> Result<()> {
    match e.calls().first() {
        None => Ok(()),
        Some(c) if c.is_anon() || is_plain_agg_name(&c.name) => {
            Err(Error::Rejected(format!("{clause} cannot contain aggregate {}", c.name)))
        }
        Some(c) => Err(misplaced_call(c)),
    }
}

fn single_expr_arg(c: &Call) -> Result<&SqlExpr> {
    match c.args.as_slice() {
        [FnArg::Expr(e)] => Ok(e),
        _ => Err(Error::Rejected(format!("{} takes exactly one column argument", c.name))),
    }
}

fn plain_agg(c: &Call) -> Result<PlainAgg> {
    let func = match c.name.as_str() {
        "COUNT" => {
            return match (c.args.as_slice(), c.distinct) {
                ([FnArg::Star], false) => Ok(PlainAgg::new(PlainAggFunc::Count, None)),
                ([FnArg::Expr(e)], distinct) => {
                    let func = if distinct { PlainAggFunc::CountDistinct } else { PlainAggFunc::Count };
                    Ok(PlainAgg::new(func, Some(scalar(e)?)))
                }
                _ => Err(Error::Rejected("COUNT takes `*` or one argument".into())),
            };
        }
        "SUM" => PlainAggFunc::Sum,
        "AVG" => PlainAggFunc::Avg,
        "VAR" => PlainAggFunc::Var,
        "STDDEV" => PlainAggFunc::Stddev,
        _ => return Err(misplaced_call(c)),
    };
    if c.distinct {
        return Err(Error::Unsupported(format!("{}(DISTINCT ...) is not supported", c.name)));
    }
    Ok(PlainAgg::new(func, Some(scalar(single_expr_arg(c)?)?)))
}

fn number(e: &SqlExpr, fname: &str) -> Result<f64> {
    match e {
        SqlExpr::Literal(Value::Int(i)) => Ok(*i as f64),
        SqlExpr::Literal(Value::Float(x)) => Ok(*x),
        other => Err(Error::Rejected(format!("{fname} parameters must be numeric literals, got {other}"))),
    }
}

fn anon_call(c: &Call, alias: String) -> Result<AnonAggCall> {
    let kind = match c.name.as_str() {
        "ANON_COUNT" => AggregatorKind::Count,
        "ANON_SUM" => AggregatorKind::Sum,
        "ANON_AVG" => AggregatorKind::Avg,
        "ANON_VAR" => AggregatorKind::Var,
        "ANON_STDDEV" => AggregatorKind::Stddev,
        "ANON_NTILE" => AggregatorKind::Ntile,
        other => return Err(Error::Unsupported(format!("unknown anonymized aggregate {other}"))),
    };
    if c.distinct {
        return Err(Error::Rejected(format!("{} does not take DISTINCT", c.name)));
    }
    let (first, rest) = c.args.split_first().ok_or_else(|| Error::Rejected(format!("{} needs an argument", c.name)))?;
    let arg = match first {
        FnArg::Star if kind == AggregatorKind::Count => None,
        FnArg::Star => return Err(Error::Rejected(format!("{} does not accept `*`", c.name))),
        FnArg::Expr(e) => Some(scalar(e)?),
    };
    let params: Vec<f64> = rest
        .iter()
        .map(|a| match a {
            FnArg::Expr(e) => number(e, &c.name),
            FnArg::Star => Err(Error::Rejected(format!("`*` can only be the first argument of {}", c.name))),
        })
        .collect::<Result<_>>()?;
    let (phi, bound_params) = match (kind, params.as_slice()) {
        (AggregatorKind::Ntile, [phi, rest @ ..]) => (Some(*phi), rest),
        (AggregatorKind::Ntile, []) => {
            return Err(Error::Rejected("ANON_NTILE needs an n-tile parameter: ANON_NTILE(col, ntile[, L, U])".into()))
        }
        (_, ps) => (None, ps),
    };
    let bounds = match bound_params {
        [] => None,
        [l, u] => Some(ClampBounds::new(*l, *u)?),
        _ => return Err(Error::Rejected(format!("{} takes either no bounds or both L and U", c.name))),
    };
    if let Some(phi) = phi {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::parameter(format!("n-tile parameter must lie in (0, 1), got {phi}")));
        }
    }
    Ok(AnonAggCall { kind, arg, bounds, phi, alias })
}

fn factor(t: &TableFactor, catalog: &Catalog) -> Result<PlanNode> {
    let mut node = match &t.source {
        TableSource::Named(name) => {
            catalog.get(name)?;
            PlanNode::Scan { table: name.clone(), alias: t.alias.clone() }
        }
        TableSource::Subquery(q) => {
            let inner = lower_plain(q, catalog, false)?;
            match &t.alias {
                Some(a) => PlanNode::Alias { input: Box::new(inner), alias: a.clone() },
                None => inner,
            }
        }
    };
    if let Some(n) = t.sample_rows {
        node = PlanNode::Reservoir { input: Box::new(node), per_user: n as usize };
    }
    Ok(node)
}

fn lower_from(items: &[FromItem], catalog: &Catalog) -> Result<PlanNode> {
    let (first, rest) = items.split_first().ok_or_else(|| Error::Rejected("FROM needs a table".into()))?;
    let mut node = factor(&first.table, catalog)?;
    for item in rest {
        node = PlanNode::Join {
            left: Box::new(node),
            right: Box::new(factor(&item.table, catalog)?),
            using_uid: item.using_uid,
            condition: None,
        };
    }
    Ok(node)
}

/// Whether two grouping expressions denote the same key.
fn same_key(a: &SqlExpr, b: &SqlExpr, schema: &Schema) -> bool {
    if a == b {
        return true;
    }
    match (a, b) {
        (SqlExpr::Column(x), SqlExpr::Column(y)) => {
            matches!((schema.resolve(x), schema.resolve(y)), (Ok(i), Ok(j)) if i == j)
        }
        _ => false,
    }
}

fn lower_anon(q: &Query, catalog: &Catalog) -> Result<PlanNode> {
    let mut input = lower_from(&q.from, catalog)?;
    if let Some(w) = &q.where_clause {
        no_calls(w, "WHERE")?;
        input = PlanNode::Select { input: Box::new(input), predicate: scalar(w)? };
    }
    let schema = input.schema(catalog)?;

    let mut keys = Vec::with_capacity(q.group_by.len());
    for g in &q.group_by {
        no_calls(g, "GROUP BY")?;
        let expr = scalar(g)?;
        expr.bind(&schema)?;
        let name = q
            .select
            .iter()
            .find(|s| s.alias.is_some() && same_key(&s.expr, g, &schema))
            .map(SelectItem::output_name)
            .unwrap_or_else(|| SelectItem { expr: g.clone(), alias: None }.output_name());
        keys.push((expr, name));
    }

    let mut aggs = Vec::new();
    let mut output = Vec::with_capacity(q.select.len());
    for item in &q.select {
        if let SqlExpr::Call(c) = &item.expr {
            if c.is_anon() {
                let call = anon_call(c, item.output_name())?;
                if let Some(arg) = &call.arg {
                    let bound = arg.bind(&schema)?;
                    if call.kind != AggregatorKind::Count && !bound.data_type().is_numeric() {
                        return Err(Error::Type(format!(
                            "{} needs a numeric argument, got {}",
                            c.name,
                            bound.data_type()
                        )));
                    }
                }
                output.push(OutputItem::Agg(aggs.len()));
                aggs.push(call);
                continue;
            }
        }
        if let Some(c) = item.expr.calls().first() {
            return Err(if c.is_anon() || !is_plain_agg_name(&c.name) {
                misplaced_call(c)
            } else {
                Error::Rejected(format!("plain aggregate {} in an anonymized query; use ANON_{}", c.name, c.name))
            });
        }
        match q.group_by.iter().position(|g| same_key(&item.expr, g, &schema)) {
            Some(i) => output.push(OutputItem::Key(i)),
            None => {
                return Err(Error::Name(format!(
                    "select item {} must be a GROUP BY key or an anonymized aggregate",
                    item.expr
                )))
            }
        }
    }
    if aggs.is_empty() {
        return Err(Error::Rejected("an anonymized query needs at least one ANON_* aggregate".into()));
    }

    let node = PlanNode::AnonAggregate { input: Box::new(input), keys, aggs, output };
    node.validate_ownership(catalog)?;
    Ok(node)
}

struct Grouping<'a> {
    keys: &'a [SqlExpr],
    schema: &'a Schema,
    calls: Vec<Call>,
    aggs: Vec<(PlainAgg, String)>,
}

impl Grouping<'_> {
    fn rewrite(&mut self, e: &SqlExpr) -> Result<Expr> {
        if let Some(i) = self.keys.iter().position(|k| same_key(e, k, self.schema)) {
            return Ok(Expr::col(&format!("__k{i}")));
        }
        Ok(match e {
            SqlExpr::Call(c) => {
                if let Some(j) = self.calls.iter().position(|x| x == c) {
                    return Ok(Expr::col(&self.aggs[j].1));
                }
                let agg = plain_agg(c)?;
                let name = format!("__a{}", self.aggs.len());
                self.calls.push(c.clone());
                self.aggs.push((agg, name.clone()));
                Expr::col(&name)
            }
            SqlExpr::Column(c) => {
                return Err(Error::Name(format!("column {c} must appear in GROUP BY or inside an aggregate")))
            }
            SqlExpr::Literal(v) => Expr::Literal(v.clone()),
            SqlExpr::Unary { op, expr } => Expr::unary(*op, self.rewrite(expr)?),
            SqlExpr::Binary { op, left, right } => Expr::binary(*op, self.rewrite(left)?, self.rewrite(right)?),
            SqlExpr::If { cond, then, otherwise } => {
                Expr::if_then_else(self.rewrite(cond)?, self.rewrite(then)?, self.rewrite(otherwise)?)
            }
        })
    }
}

/// Replaces unqualified references to select-list aliases by the aliased
/// expression, so HAVING can name output columns.
fn substitute_aliases(e: &SqlExpr, select: &[SelectItem]) -> SqlExpr {
    match e {
        SqlExpr::Column(c) if c.qualifier.is_none() => select
            .iter()
            .find(|s| s.alias.as_deref().is_some_and(|a| a.eq_ignore_ascii_case(&c.name)))
            .map_or_else(|| e.clone(), |s| s.expr.clone()),
        SqlExpr::Unary { op, expr } => SqlExpr::Unary { op: *op, expr: Box::new(substitute_aliases(expr, select)) },
        SqlExpr::Binary { op, left, right } => SqlExpr::Binary {
            op: *op,
            left: Box::new(substitute_aliases(left, select)),
            right: Box::new(substitute_aliases(right, select)),
        },
        SqlExpr::If { cond, then, otherwise } => SqlExpr::If {
            cond: Box::new(substitute_aliases(cond, select)),
            then: Box::new(substitute_aliases(then, select)),
            otherwise: Box::new(substitute_aliases(otherwise, select)),
        },
        other => other.clone(),
    }
}

fn lower_plain(q: &Query, catalog: &Catalog, top: bool) -> Result<PlanNode> {
    let mut input = lower_from(&q.from, catalog)?;
    if top {
        input = PlanNode::Disown { input: Box::new(input) };
    }
    if let Some(w) = &q.where_clause {
        no_calls(w, "WHERE")?;
        input = PlanNode::Select { input: Box::new(input), predicate: scalar(w)? };
    }
    let has_agg = |e: &SqlExpr| e.calls().iter().any(|c| is_plain_agg_name(&c.name));
    let aggregated =
        !q.group_by.is_empty() || q.select.iter().any(|s| has_agg(&s.expr)) || q.having.as_ref().is_some_and(has_agg);

    if !aggregated {
        if q.having.is_some() {
            return Err(Error::Rejected("HAVING needs GROUP BY or an aggregate".into()));
        }
        let items = q.select.iter().map(|s| Ok((scalar(&s.expr)?, s.output_name()))).collect::<Result<_>>()?;
        return Ok(PlanNode::Project { input: Box::new(input), items, propagate_uid: true });
    }

    let schema = input.schema(catalog)?;
    let keys = q
        .group_by
        .iter()
        .enumerate()
        .map(|(i, g)| {
            no_calls(g, "GROUP BY")?;
            Ok((scalar(g)?, format!("__k{i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grouping = Grouping { keys: &q.group_by, schema: &schema, calls: Vec::new(), aggs: Vec::new() };
    let items: Vec<(Expr, String)> =
        q.select.iter().map(|s| Ok((grouping.rewrite(&s.expr)?, s.output_name()))).collect::<Result<_>>()?;
    let having = q.having.as_ref().map(|h| grouping.rewrite(&substitute_aliases(h, &q.select))).transpose()?;

    let mut node = PlanNode::GroupAggregate { input: Box::new(input), keys, aggs: grouping.aggs };
    if let Some(predicate) = having {
        node = PlanNode::Select { input: Box::new(node), predicate };
    }
    Ok(PlanNode::Project { input: Box::new(node), items, propagate_uid: true })
}
