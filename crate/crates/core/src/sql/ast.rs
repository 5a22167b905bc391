//! Syntax tree of the supported SQL subset.
//!
//! `Display` renders canonical SQL with every compound expression
//! parenthesized, so parsing a rendering reproduces the tree.

use std::fmt;

use crate::relation::{BinaryOp, ColumnRef, UnaryOp, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub anonymized: bool,
    pub select: Vec<SelectItem>,
    pub from: Vec<FromItem>,
    pub where_clause: Option<SqlExpr>,
    pub group_by: Vec<SqlExpr>,
    pub having: Option<SqlExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: SqlExpr,
    pub alias: Option<String>,
}

impl SelectItem {
    /// Output column name: the alias, else the column name, else the
    /// rendered expression.
    pub fn output_name(&self) -> String {
        match (&self.alias, &self.expr) {
            (Some(a), _) => a.clone(),
            (None, SqlExpr::Column(c)) => c.name.clone(),
            (None, e) => e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    /// The first table of the FROM clause.
    First,
    Comma,
    Join,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FromItem {
    pub join: JoinKind,
    pub table: TableFactor,
    pub using_uid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableSource {
    Named(String),
    Subquery(Box<Query>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableFactor {
    pub source: TableSource,
    pub alias: Option<String>,
    /// `TABLESAMPLE RESERVOIR (n ROWS PARTITION BY uid)`.
    pub sample_rows: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FnArg {
    Star,
    Expr(SqlExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    /// Upper-cased function name.
    pub name: String,
    pub distinct: bool,
    pub args: Vec<FnArg>,
}

impl Call {
    pub fn is_anon(&self) -> bool {
        self.name.starts_with("ANON_")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SqlExpr {
    Column(ColumnRef),
    Literal(Value),
    Unary { op: UnaryOp, expr: Box<SqlExpr> },
    Binary { op: BinaryOp, left: Box<SqlExpr>, right: Box<SqlExpr> },
    If { cond: Box<SqlExpr>, then: Box<SqlExpr>, otherwise: Box<SqlExpr> },
    Call(Call),
}

impl SqlExpr {
    /// Visits every function call, outermost first.
    pub fn calls(&self) -> Vec<&Call> {
        let mut out = Vec::new();
        self.collect_calls(&mut out);
        out
    }

    fn collect_calls<'a>(&'a self, out: &mut Vec<&'a Call>) {
        match self {
            SqlExpr::Column(_) | SqlExpr::Literal(_) => {}
            SqlExpr::Unary { expr, .. } => expr.collect_calls(out),
            SqlExpr::Binary { left, right, .. } => {
                left.collect_calls(out);
                right.collect_calls(out);
            }
            SqlExpr::If { cond, then, otherwise } => {
                cond.collect_calls(out);
                then.collect_calls(out);
                otherwise.collect_calls(out);
            }
            SqlExpr::Call(c) => {
                out.push(c);
                for a in &c.args {
                    if let FnArg::Expr(e) = a {
                        e.collect_calls(out);
                    }
                }
            }
        }
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Null => f.write_str("NULL"),
        Value::Bool(true) => f.write_str("TRUE"),
        Value::Bool(false) => f.write_str("FALSE"),
        Value::Int(i) => write!(f, "{i}"),
        Value::Float(x) => write!(f, "{x:?}"),
        Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
    }
}

/// Identifiers that would lex as keywords are double-quoted.
fn write_ident(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    let plain = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && super::lexer::Keyword::lookup(s).is_none();
    if plain {
        f.write_str(s)
    } else {
        write!(f, "\"{s}\"")
    }
}

impl fmt::Display for SqlExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SqlExpr::Column(c) => {
                if let Some(q) = &c.qualifier {
                    write_ident(f, q)?;
                    f.write_str(".")?;
                }
                write_ident(f, &c.name)
            }
            SqlExpr::Literal(v) => write_literal(f, v),
            SqlExpr::Unary { op: UnaryOp::Neg, expr } => write!(f, "(-{expr})"),
            SqlExpr::Unary { op: UnaryOp::Not, expr } => write!(f, "(NOT {expr})"),
            SqlExpr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            SqlExpr::If { cond, then, otherwise } => write!(f, "(IF {cond} THEN {then} ELSE {otherwise})"),
            SqlExpr::Call(c) => {
                write!(f, "{}(", c.name)?;
                if c.distinct {
                    f.write_str("DISTINCT ")?;
                }
                for (i, a) in c.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match a {
                        FnArg::Star => f.write_str("*")?,
                        FnArg::Expr(e) => write!(f, "{e}")?,
                    }
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for TableFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            TableSource::Named(n) => write_ident(f, n)?,
            TableSource::Subquery(q) => write!(f, "({q})")?,
        }
        if let Some(a) = &self.alias {
            f.write_str(" AS ")?;
            write_ident(f, a)?;
        }
        if let Some(n) = self.sample_rows {
            write!(f, " TABLESAMPLE RESERVOIR ({n} ROWS PARTITION BY uid)")?;
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        if self.anonymized {
            f.write_str("WITH ANONYMIZATION ")?;
        }
        for (i, item) in self.select.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", item.expr)?;
            if let Some(a) = &item.alias {
                f.write_str(" AS ")?;
                write_ident(f, a)?;
            }
        }
        f.write_str(" FROM ")?;
        for item in &self.from {
            match item.join {
                JoinKind::First => {}
                JoinKind::Comma => f.write_str(", ")?,
                JoinKind::Join => f.write_str(" JOIN ")?,
            }
            write!(f, "{}", item.table)?;
            if item.using_uid {
                f.write_str(" USING (uid)")?;
            }
        }
        if let Some(w) = &self.where_clause {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            for (i, g) in self.group_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        if let Some(h) = &self.having {
            write!(f, " HAVING {h}")?;
        }
        Ok(())
    }
}
