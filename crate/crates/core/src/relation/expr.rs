use std::cmp::Ordering;
use std::fmt;

use super::{DataType, Schema, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn new(qualifier: Option<&str>, name: &str) -> Self {
        ColumnRef { qualifier: qualifier.map(str::to_string), name: name.to_string() }
    }

    /// `"t.c"` or `"c"`.
    pub fn parse(s: &str) -> Self {
        match s.split_once('.') {
            Some((q, n)) => ColumnRef::new(Some(q), n),
            None => ColumnRef::new(None, s),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }

    fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }

    fn is_logical(self) -> bool {
        matches!(self, BinaryOp::And | BinaryOp::Or)
    }
}

/// Scalar expression over named columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(ColumnRef),
    Literal(Value),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinaryOp, left: Box<Expr>, right: Box<Expr> },
    If { cond: Box<Expr>, then: Box<Expr>, otherwise: Box<Expr> },
}

impl Expr {
    pub fn col(name: &str) -> Expr {
        Expr::Column(ColumnRef::parse(name))
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn unary(op: UnaryOp, expr: Expr) -> Expr {
        Expr::Unary { op, expr: Box::new(expr) }
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn if_then_else(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::If { cond: Box::new(cond), then: Box::new(then), otherwise: Box::new(otherwise) }
    }

    /// Resolves columns against `schema` and type-checks.
    pub fn bind(&self, schema: &Schema) -> Result<BoundExpr> {
        let (node, ty) = bind_node(self, schema)?;
        Ok(BoundExpr { node, ty })
    }

    /// Column references appearing in the expression.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::Column(c) => out.push(c),
            Expr::Literal(_) => {}
            Expr::Unary { expr, .. } => expr.collect_columns(out),
            Expr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
            Expr::If { cond, then, otherwise } => {
                cond.collect_columns(out);
                then.collect_columns(out);
                otherwise.collect_columns(out);
            }
        }
    }

    /// Output name a projection gives this expression when it has no alias.
    pub fn default_name(&self) -> String {
        match self {
            Expr::Column(c) => c.name.clone(),
            other => other.to_string(),
        }
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, v: &Value) -> fmt::Result {
    match v {
        Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        Value::Float(x) if x.is_finite() => write!(f, "{x:?}"),
        Value::Bool(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        other => write!(f, "{other}"),
    }
}

/// Fully parenthesized, so rendering then reparsing yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => write!(f, "{c}"),
            Expr::Literal(v) => write_literal(f, v),
            Expr::Unary { op: UnaryOp::Neg, expr } => write!(f, "(-{expr})"),
            Expr::Unary { op: UnaryOp::Not, expr } => write!(f, "(NOT {expr})"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::If { cond, then, otherwise } => write!(f, "(IF {cond} THEN {then} ELSE {otherwise})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Column(usize),
    Literal(Value),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    If(Box<Node>, Box<Node>, Box<Node>),
}

/// An expression with columns resolved to positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    node: Node,
    ty: DataType,
}

fn type_err(msg: String) -> Error {
    Error::Type(msg)
}

fn unify(a: DataType, b: DataType) -> Option<DataType> {
    use DataType::*;
    match (a, b) {
        (Null, t) | (t, Null) => Some(t),
        (Int, Float) | (Float, Int) => Some(Float),
        (x, y) if x == y => Some(x),
        _ => None,
    }
}

fn bind_node(e: &Expr, schema: &Schema) -> Result<(Node, DataType)> {
    Ok(match e {
        Expr::Column(c) => {
            let i = schema.resolve(c)?;
            (Node::Column(i), schema.columns[i].ty)
        }
        Expr::Literal(v) => (Node::Literal(v.clone()), v.data_type()),
        Expr::Unary { op, expr } => {
            let (n, t) = bind_node(expr, schema)?;
            let ok = match op {
                UnaryOp::Neg => t.is_numeric(),
                UnaryOp::Not => matches!(t, DataType::Bool | DataType::Null),
            };
            if !ok {
                return Err(type_err(format!("cannot apply {op:?} to {t} in {e}")));
            }
            let out = if *op == UnaryOp::Not { DataType::Bool } else { t };
            (Node::Unary(*op, Box::new(n)), out)
        }
        Expr::Binary { op, left, right } => {
            let (ln, lt) = bind_node(left, schema)?;
            let (rn, rt) = bind_node(right, schema)?;
            let out = if op.is_arithmetic() {
                if !lt.is_numeric() || !rt.is_numeric() {
                    return Err(type_err(format!("operator {} needs numbers, got {lt} and {rt} in {e}", op.symbol())));
                }
                match (op, lt, rt) {
                    (BinaryOp::Div, _, _) => DataType::Float,
                    (_, DataType::Int, DataType::Int) => DataType::Int,
                    (_, DataType::Null, DataType::Null) => DataType::Null,
                    (_, DataType::Int | DataType::Null, DataType::Int | DataType::Null) => DataType::Int,
                    _ => DataType::Float,
                }
            } else if op.is_logical() {
                for t in [lt, rt] {
                    if !matches!(t, DataType::Bool | DataType::Null) {
                        return Err(type_err(format!("operator {} needs booleans, got {t} in {e}", op.symbol())));
                    }
                }
                DataType::Bool
            } else {
                if unify(lt, rt).is_none() {
                    return Err(type_err(format!("cannot compare {lt} with {rt} in {e}")));
                }
                DataType::Bool
            };
            (Node::Binary(*op, Box::new(ln), Box::new(rn)), out)
        }
        Expr::If { cond, then, otherwise } => {
            let (cn, ct) = bind_node(cond, schema)?;
            if !matches!(ct, DataType::Bool | DataType::Null) {
                return Err(type_err(format!("IF condition must be boolean, got {ct} in {e}")));
            }
            let (tn, tt) = bind_node(then, schema)?;
            let (on, ot) = bind_node(otherwise, schema)?;
            let out = unify(tt, ot)
                .ok_or_else(|| type_err(format!("IF branches have incompatible types {tt} and {ot} in {e}")))?;
            (Node::If(Box::new(cn), Box::new(tn), Box::new(on)), out)
        }
    })
}

/// Runtime failure of a single row, e.g. integer overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalError(pub String);

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl BoundExpr {
    pub(crate) fn from_column(index: usize, ty: DataType) -> Self {
        BoundExpr { node: Node::Column(index), ty }
    }

    pub fn data_type(&self) -> DataType {
        self.ty
    }

    /// Position of the column if the expression is a bare column.
    pub fn as_column(&self) -> Option<usize> {
        match self.node {
            Node::Column(i) => Some(i),
            _ => None,
        }
    }

    pub fn eval(&self, row: &[Value]) -> std::result::Result<Value, EvalError> {
        eval(&self.node, row)
    }
}

fn eval(n: &Node, row: &[Value]) -> std::result::Result<Value, EvalError> {
    match n {
        Node::Column(i) => Ok(row[*i].clone()),
        Node::Literal(v) => Ok(v.clone()),
        Node::Unary(op, inner) => {
            let v = eval(inner, row)?;
            match (op, v) {
                (_, Value::Null) => Ok(Value::Null),
                (UnaryOp::Neg, Value::Int(i)) => {
                    i.checked_neg().map(Value::Int).ok_or_else(|| EvalError(format!("overflow negating {i}")))
                }
                (UnaryOp::Neg, Value::Float(x)) => Ok(Value::Float(-x)),
                (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                (op, v) => Err(EvalError(format!("cannot apply {op:?} to {v}"))),
            }
        }
        Node::Binary(op, l, r) if op.is_logical() => {
            let a = as_bool(eval(l, row)?)?;
            // Short-circuit where three-valued logic allows it.
            match (op, a) {
                (BinaryOp::And, Some(false)) => return Ok(Value::Bool(false)),
                (BinaryOp::Or, Some(true)) => return Ok(Value::Bool(true)),
                _ => {}
            }
            let b = as_bool(eval(r, row)?)?;
            Ok(match (op, a, b) {
                (BinaryOp::And, _, Some(false)) => Value::Bool(false),
                (BinaryOp::Or, _, Some(true)) => Value::Bool(true),
                (BinaryOp::And, Some(x), Some(y)) => Value::Bool(x && y),
                (_, Some(x), Some(y)) => Value::Bool(x || y),
                _ => Value::Null,
            })
        }
        Node::Binary(op, l, r) => {
            let a = eval(l, row)?;
            let b = eval(r, row)?;
            if a.is_null() || b.is_null() {
                return Ok(Value::Null);
            }
            if op.is_arithmetic() {
                arithmetic(*op, &a, &b)
            } else {
                compare(*op, &a, &b)
            }
        }
        Node::If(c, t, o) => match as_bool(eval(c, row)?)? {
            Some(true) => eval(t, row),
            _ => eval(o, row),
        },
    }
}

fn as_bool(v: Value) -> std::result::Result<Option<bool>, EvalError> {
    match v {
        Value::Bool(b) => Ok(Some(b)),
        Value::Null => Ok(None),
        other => Err(EvalError(format!("expected boolean, got {other}"))),
    }
}

fn arithmetic(op: BinaryOp, a: &Value, b: &Value) -> std::result::Result<Value, EvalError> {
    if op != BinaryOp::Div {
        if let (Value::Int(x), Value::Int(y)) = (a, b) {
            let r = match op {
                BinaryOp::Add => x.checked_add(*y),
                BinaryOp::Sub => x.checked_sub(*y),
                _ => x.checked_mul(*y),
            };
            return r.map(Value::Int).ok_or_else(|| EvalError(format!("integer overflow in {x} {} {y}", op.symbol())));
        }
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return Err(EvalError(format!("operator {} needs numbers, got {a} and {b}", op.symbol())));
    };
    Ok(Value::Float(match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        _ => x / y,
    }))
}

fn compare(op: BinaryOp, a: &Value, b: &Value) -> std::result::Result<Value, EvalError> {
    let ord: Option<Ordering> = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => return Err(EvalError(format!("cannot compare {a} with {b}"))),
        },
    };
    // Comparisons involving NaN are false, except <>.
    let Some(ord) = ord else { return Ok(Value::Bool(op == BinaryOp::NotEq)) };
    Ok(Value::Bool(match op {
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::NotEq => ord != Ordering::Equal,
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::LtEq => ord != Ordering::Greater,
        BinaryOp::Gt => ord == Ordering::Greater,
        _ => ord != Ordering::Less,
    }))
}
