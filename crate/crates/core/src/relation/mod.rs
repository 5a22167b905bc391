//! In-memory relations with user-ownership metadata.
//!
//! A relation is *owned* when it carries a uid column. Owned relations may
//! only be transformed by operators that keep each output row derived from a
//! single user's rows; the operators in [`ops`] enforce that.

mod expr;
pub mod ops;
mod value;

use std::collections::BTreeMap;
use std::fmt;

pub use expr::EvalError;
pub use expr::{BinaryOp, BoundExpr, ColumnRef, Expr, UnaryOp};
pub use ops::{Diagnostics, PlainAgg, PlainAggFunc};
pub use value::{DataType, Value};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub qualifier: Option<String>,
    pub name: String,
    pub ty: DataType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: DataType) -> Self {
        Column { qualifier: None, name: name.into(), ty }
    }

    pub fn qualified(qualifier: Option<String>, name: impl Into<String>, ty: DataType) -> Self {
        Column { qualifier, name: name.into(), ty }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

/// Column layout plus the position of the uid column, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub uid: Option<usize>,
}

/// Name used in queries to refer to the uid column, whatever its real name.
pub const UID_ALIAS: &str = "uid";

impl Schema {
    pub fn new(columns: Vec<Column>, uid: Option<usize>) -> Result<Self> {
        if let Some(i) = uid {
            if i >= columns.len() {
                return Err(Error::parameter(format!("uid column index {i} out of range")));
            }
        }
        Ok(Schema { columns, uid })
    }

    pub fn owned(&self) -> bool {
        self.uid.is_some()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    fn has_qualifier(&self, q: &str) -> bool {
        self.columns.iter().any(|c| c.qualifier.as_deref().is_some_and(|cq| cq.eq_ignore_ascii_case(q)))
    }

    /// Resolves a column reference. `uid` (case-insensitive, optionally
    /// qualified by any table in scope) always names the uid column.
    pub fn resolve(&self, r: &ColumnRef) -> Result<usize> {
        let matches: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                c.name.eq_ignore_ascii_case(&r.name)
                    && match (&r.qualifier, &c.qualifier) {
                        (None, _) => true,
                        (Some(q), Some(cq)) => q.eq_ignore_ascii_case(cq),
                        (Some(_), None) => false,
                    }
            })
            .map(|(i, _)| i)
            .collect();
        match matches.as_slice() {
            [i] => return Ok(*i),
            [] => {}
            _ => return Err(Error::Name(format!("column reference `{r}` is ambiguous"))),
        }
        if r.name.eq_ignore_ascii_case(UID_ALIAS) {
            if let Some(uid) = self.uid {
                if r.qualifier.as_deref().is_none_or(|q| self.has_qualifier(q)) {
                    return Ok(uid);
                }
            }
        }
        Err(Error::Name(format!("unknown column `{r}`")))
    }

    pub fn with_qualifier(mut self, qualifier: &str) -> Self {
        for c in &mut self.columns {
            c.qualifier = Some(qualifier.to_string());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl Relation {
    /// Builds a relation, checking arity and that owned rows have a uid.
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::parameter(format!(
                    "row {i} has {} values, schema has {} columns",
                    row.len(),
                    schema.len()
                )));
            }
            if let Some(u) = schema.uid {
                if row[u].is_null() {
                    return Err(Error::parameter(format!("row {i} has a null uid")));
                }
            }
        }
        Ok(Relation { schema, rows })
    }

    /// An owned relation whose uid column is `uid_column`.
    pub fn owned(columns: Vec<Column>, uid_column: &str, rows: Vec<Vec<Value>>) -> Result<Self> {
        let uid = columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(uid_column))
            .ok_or_else(|| Error::Name(format!("uid column `{uid_column}` not found")))?;
        Relation::new(Schema::new(columns, Some(uid))?, rows)
    }

    pub fn public(columns: Vec<Column>, rows: Vec<Vec<Value>>) -> Result<Self> {
        Relation::new(Schema::new(columns, None)?, rows)
    }

    pub(crate) fn from_parts(schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        Relation { schema, rows }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.schema.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<Value>> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_owned(&self) -> bool {
        self.schema.owned()
    }

    pub fn uid_index(&self) -> Option<usize> {
        self.schema.uid
    }

    pub fn uid_of(&self, row: usize) -> Option<&Value> {
        self.schema.uid.map(|u| &self.rows[row][u])
    }

    pub fn with_qualifier(self, qualifier: &str) -> Self {
        Relation { schema: self.schema.with_qualifier(qualifier), rows: self.rows }
    }

    /// Number of distinct uids (0 for public relations).
    pub fn distinct_users(&self) -> usize {
        let Some(u) = self.schema.uid else { return 0 };
        let mut uids: Vec<&Value> = self.rows.iter().map(|r| &r[u]).collect();
        uids.sort();
        uids.dedup();
        uids.len()
    }
}

/// Named tables. Lookups are case-insensitive.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, (String, Relation)>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, relation: Relation) {
        let name = name.into();
        self.tables.insert(name.to_ascii_lowercase(), (name, relation));
    }

    pub fn get(&self, name: &str) -> Result<&Relation> {
        self.tables
            .get(&name.to_ascii_lowercase())
            .map(|(_, r)| r)
            .ok_or_else(|| Error::Name(format!("unknown table `{name}`")))
    }

    /// Same tables and schemas, no rows.
    pub fn empty_like(&self) -> Catalog {
        let tables = self
            .tables
            .iter()
            .map(|(k, (n, r))| (k.clone(), (n.clone(), Relation::from_parts(r.schema().clone(), Vec::new()))))
            .collect();
        Catalog { tables }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.values().map(|(n, _)| n.as_str())
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.tables.values().map(|(_, r)| r)
    }

    /// Distinct uids across every owned table.
    pub fn distinct_users(&self) -> usize {
        let mut uids: Vec<&Value> = self
            .relations()
            .filter_map(|r| r.uid_index().map(|u| (r, u)))
            .flat_map(|(r, u)| r.rows().iter().map(move |row| &row[u]))
            .collect();
        uids.sort();
        uids.dedup();
        uids.len()
    }
}
