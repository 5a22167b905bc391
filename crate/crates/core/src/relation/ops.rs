//! Relational operators with ownership propagation.
//!
//! Every operator on an owned input either keeps the uid column or refuses to
//! run. Row-level evaluation failures never abort a query: the row is dropped
//! (or the value becomes NULL) and the failure is recorded in [`Diagnostics`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::{BoundExpr, Column, DataType, Expr, Relation, Schema, Value};
use crate::aggregates::exact_quantile;
use crate::exact_sum::ExactSum;
use crate::noise::RandomSource;
use crate::{Error, Result};

/// Row-level failures, kept out of the query result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub count: u64,
    pub messages: Vec<String>,
}

const MAX_MESSAGES: usize = 64;

impl Diagnostics {
    pub fn record(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::debug!("row-level failure: {message}");
        self.count += 1;
        if self.messages.len() < MAX_MESSAGES {
            self.messages.push(message);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

fn ownership(node: &str, reason: impl Into<String>) -> Error {
    Error::Ownership { node: node.to_string(), reason: reason.into() }
}

fn bind_items(schema: &Schema, items: &[(Expr, String)]) -> Result<Vec<BoundExpr>> {
    items.iter().map(|(e, _)| e.bind(schema)).collect()
}

fn output_column(schema: &Schema, expr: &Expr, bound: &BoundExpr, name: &str) -> Column {
    let qualifier = match (bound.as_column(), expr) {
        (Some(i), Expr::Column(c)) if c.name.eq_ignore_ascii_case(name) => schema.columns[i].qualifier.clone(),
        _ => None,
    };
    Column::qualified(qualifier, name, bound.data_type())
}

/// Position of the item that is a bare reference to the uid column.
fn uid_item(schema: &Schema, bound: &[BoundExpr]) -> Option<usize> {
    let uid = schema.uid?;
    bound.iter().position(|b| b.as_column() == Some(uid))
}

/// Projection. On an owned input the uid column is carried along, prepended
/// if the items do not already mention it.
pub fn project(rel: &Relation, items: &[(Expr, String)], diag: &mut Diagnostics) -> Result<Relation> {
    let schema = rel.schema();
    let mut bound = bind_items(schema, items)?;
    let mut columns: Vec<Column> = items.iter().zip(&bound).map(|((e, n), b)| output_column(schema, e, b, n)).collect();
    let mut uid = None;
    if let Some(u) = schema.uid {
        uid = Some(match uid_item(schema, &bound) {
            Some(i) => i,
            None => {
                let uid_col = schema.columns[u].clone();
                bound.insert(0, BoundExpr::from_column(u, uid_col.ty));
                columns.insert(0, uid_col);
                0
            }
        });
    }
    let mut rows = Vec::with_capacity(rel.len());
    for row in rel.rows() {
        let out = bound
            .iter()
            .map(|b| {
                b.eval(row).unwrap_or_else(|e| {
                    diag.record(format!("projection: {e}"));
                    Value::Null
                })
            })
            .collect();
        rows.push(out);
    }
    Ok(Relation::from_parts(Schema { columns, uid }, rows))
}

/// Keeps rows where `predicate` is true. NULL and failing rows are dropped.
pub fn select(rel: &Relation, predicate: &Expr, diag: &mut Diagnostics) -> Result<Relation> {
    let bound = predicate.bind(rel.schema())?;
    if !matches!(bound.data_type(), DataType::Bool | DataType::Null) {
        return Err(Error::Type(format!("WHERE predicate {predicate} is not boolean")));
    }
    let mut rows = Vec::new();
    for row in rel.rows() {
        match bound.eval(row) {
            Ok(Value::Bool(true)) => rows.push(row.clone()),
            Ok(_) => {}
            Err(e) => diag.record(format!("selection: {e}")),
        }
    }
    Ok(Relation::from_parts(rel.schema().clone(), rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlainAggFunc {
    Count,
    CountDistinct,
    Sum,
    Avg,
    Var,
    Stddev,
    Quantile(f64),
}

/// Ordinary (non-private) aggregate: used for per-user partials and for
/// queries over public relations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainAgg {
    pub func: PlainAggFunc,
    /// `None` means `*`.
    pub arg: Option<Expr>,
}

impl PlainAgg {
    pub fn new(func: PlainAggFunc, arg: Option<Expr>) -> Self {
        PlainAgg { func, arg }
    }

    fn output_type(&self) -> DataType {
        match self.func {
            PlainAggFunc::Count | PlainAggFunc::CountDistinct => DataType::Int,
            _ => DataType::Float,
        }
    }

    fn bind(&self, schema: &Schema) -> Result<Option<BoundExpr>> {
        let Some(arg) = &self.arg else {
            if self.func != PlainAggFunc::Count {
                return Err(Error::Type(format!("{self} needs an argument")));
            }
            return Ok(None);
        };
        let b = arg.bind(schema)?;
        let numeric = !matches!(self.func, PlainAggFunc::Count | PlainAggFunc::CountDistinct);
        if numeric && !b.data_type().is_numeric() {
            return Err(Error::Type(format!("{self} needs a numeric argument, got {}", b.data_type())));
        }
        Ok(Some(b))
    }

    fn finish(&self, values: &[Value], rows: usize) -> Value {
        let present = || values.iter().filter(|v| !v.is_null());
        match self.func {
            PlainAggFunc::Count if self.arg.is_none() => Value::Int(rows as i64),
            PlainAggFunc::Count => Value::Int(present().count() as i64),
            PlainAggFunc::CountDistinct => {
                let mut vs: Vec<&Value> = present().collect();
                vs.sort();
                vs.dedup();
                Value::Int(vs.len() as i64)
            }
            _ => {
                let xs: Vec<f64> = present().filter_map(Value::as_f64).collect();
                if xs.is_empty() {
                    return Value::Null;
                }
                let n = xs.len() as f64;
                Value::Float(match self.func {
                    PlainAggFunc::Sum => sum(&xs),
                    PlainAggFunc::Avg => sum(&xs) / n,
                    PlainAggFunc::Var => variance(&xs),
                    PlainAggFunc::Stddev => variance(&xs).sqrt(),
                    PlainAggFunc::Quantile(phi) => exact_quantile(&xs, phi),
                    _ => unreachable!(),
                })
            }
        }
    }
}

fn sum(xs: &[f64]) -> f64 {
    if xs.iter().all(|x| x.is_finite()) {
        let mut s = ExactSum::new();
        xs.iter().for_each(|&x| s.add(x));
        s.value()
    } else {
        xs.iter().sum()
    }
}

/// Population variance.
fn variance(xs: &[f64]) -> f64 {
    let mean = sum(xs) / xs.len() as f64;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    sum(&dev) / xs.len() as f64
}

impl fmt::Display for PlainAgg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arg = self.arg.as_ref().map_or_else(|| "*".to_string(), |a| a.to_string());
        match self.func {
            PlainAggFunc::Count => write!(f, "COUNT({arg})"),
            PlainAggFunc::CountDistinct => write!(f, "COUNT(DISTINCT {arg})"),
            PlainAggFunc::Sum => write!(f, "SUM({arg})"),
            PlainAggFunc::Avg => write!(f, "AVG({arg})"),
            PlainAggFunc::Var => write!(f, "VAR({arg})"),
            PlainAggFunc::Stddev => write!(f, "STDDEV({arg})"),
            PlainAggFunc::Quantile(phi) => write!(f, "QUANTILE({arg}, {phi})"),
        }
    }
}

/// Grouped aggregation. On an owned input the keys must include the uid, so
/// every output row summarizes one user's rows. Groups come out sorted.
pub fn group_aggregate(
    rel: &Relation,
    keys: &[(Expr, String)],
    aggs: &[(PlainAgg, String)],
    diag: &mut Diagnostics,
) -> Result<Relation> {
    let schema = rel.schema();
    let bound_keys = bind_items(schema, keys)?;
    let uid = match schema.uid {
        Some(_) => Some(
            uid_item(schema, &bound_keys)
                .ok_or_else(|| ownership("group_aggregate", "grouping keys of an owned relation must include uid"))?,
        ),
        None => None,
    };
    let bound_aggs: Vec<Option<BoundExpr>> = aggs.iter().map(|(a, _)| a.bind(schema)).collect::<Result<_>>()?;

    let mut groups: BTreeMap<Vec<Value>, Vec<usize>> = BTreeMap::new();
    'rows: for (i, row) in rel.rows().iter().enumerate() {
        let mut key = Vec::with_capacity(bound_keys.len());
        for b in &bound_keys {
            match b.eval(row) {
                Ok(v) => key.push(v),
                Err(e) => {
                    diag.record(format!("grouping key: {e}"));
                    continue 'rows;
                }
            }
        }
        groups.entry(key).or_default().push(i);
    }

    let mut rows = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let mut out = key;
        for ((agg, _), bound) in aggs.iter().zip(&bound_aggs) {
            let values: Vec<Value> = match bound {
                None => Vec::new(),
                Some(b) => members
                    .iter()
                    .map(|&i| {
                        b.eval(&rel.rows()[i]).unwrap_or_else(|e| {
                            diag.record(format!("aggregate argument: {e}"));
                            Value::Null
                        })
                    })
                    .collect(),
            };
            out.push(agg.finish(&values, members.len()));
        }
        rows.push(out);
    }

    let mut columns: Vec<Column> =
        keys.iter().zip(&bound_keys).map(|((e, n), b)| output_column(schema, e, b, n)).collect();
    columns.extend(aggs.iter().map(|(a, n)| Column::new(n.clone(), a.output_type())));
    Ok(Relation::from_parts(Schema { columns, uid }, rows))
}

/// Equi-join of two owned relations on uid, optionally filtered by
/// `condition`. The output has one uid column, then the remaining left and
/// right columns. Two public relations may be cross joined instead.
pub fn join(
    left: &Relation,
    right: &Relation,
    using_uid: bool,
    condition: Option<&Expr>,
    diag: &mut Diagnostics,
) -> Result<Relation> {
    let joined = match (left.uid_index(), right.uid_index(), using_uid) {
        (Some(lu), Some(ru), true) => join_on_uid(left, lu, right, ru),
        (None, None, false) => cross_join(left, right),
        (_, _, true) => return Err(ownership("join", "USING (uid) needs two owned relations")),
        _ => return Err(ownership("join", "an owned relation may only be joined with another owned relation on uid")),
    };
    match condition {
        Some(c) => select(&joined, c, diag),
        None => Ok(joined),
    }
}

fn join_on_uid(left: &Relation, lu: usize, right: &Relation, ru: usize) -> Relation {
    let mut columns = vec![Column { qualifier: None, ..left.columns()[lu].clone() }];
    columns.extend(left.columns().iter().enumerate().filter(|(i, _)| *i != lu).map(|(_, c)| c.clone()));
    columns.extend(right.columns().iter().enumerate().filter(|(i, _)| *i != ru).map(|(_, c)| c.clone()));

    let mut by_uid: HashMap<&Value, Vec<usize>> = HashMap::new();
    for (i, row) in right.rows().iter().enumerate() {
        by_uid.entry(&row[ru]).or_default().push(i);
    }
    let mut rows = Vec::new();
    for lrow in left.rows() {
        let Some(matches) = by_uid.get(&lrow[lu]) else { continue };
        for &j in matches {
            let rrow = &right.rows()[j];
            let mut out = Vec::with_capacity(columns.len());
            out.push(lrow[lu].clone());
            out.extend(lrow.iter().enumerate().filter(|(i, _)| *i != lu).map(|(_, v)| v.clone()));
            out.extend(rrow.iter().enumerate().filter(|(i, _)| *i != ru).map(|(_, v)| v.clone()));
            rows.push(out);
        }
    }
    Relation::from_parts(Schema { columns, uid: Some(0) }, rows)
}

fn cross_join(left: &Relation, right: &Relation) -> Relation {
    let columns = left.columns().iter().chain(right.columns()).cloned().collect();
    let rows = left
        .rows()
        .iter()
        .flat_map(|l| right.rows().iter().map(move |r| l.iter().chain(r).cloned().collect()))
        .collect();
    Relation::from_parts(Schema { columns, uid: None }, rows)
}

/// Keeps at most `per_user` rows of each user, chosen uniformly at random
/// (reservoir sampling). Each user draws from its own substream, so the
/// choice for one user does not depend on any other user's rows. Output rows
/// are ordered by uid, then by input position.
pub fn reservoir_per_user(rel: &Relation, per_user: usize, rng: &RandomSource) -> Result<Relation> {
    let uid = rel.uid_index().ok_or_else(|| ownership("reservoir", "per-user sampling needs an owned relation"))?;
    if per_user == 0 {
        return Err(Error::parameter("per-user row limit must be at least 1"));
    }
    let mut by_user: BTreeMap<&Value, Vec<usize>> = BTreeMap::new();
    for (i, row) in rel.rows().iter().enumerate() {
        by_user.entry(&row[uid]).or_default().push(i);
    }
    let mut rows = Vec::with_capacity(rel.len().min(by_user.len() * per_user));
    for (user, indices) in by_user {
        let mut kept: Vec<usize> = indices.iter().copied().take(per_user).collect();
        if indices.len() > per_user {
            let mut stream = rng.substream(&format!("reservoir/{user:?}"));
            for (seen, &idx) in indices.iter().enumerate().skip(per_user) {
                let j = stream.index(seen + 1);
                if j < per_user {
                    kept[j] = idx;
                }
            }
            kept.sort_unstable();
        }
        rows.extend(kept.into_iter().map(|i| rel.rows()[i].clone()));
    }
    Ok(Relation::from_parts(rel.schema().clone(), rows))
}
