use super::ast::*;
use super::lexer::{tokenize, Keyword, Token, TokenKind};
use crate::relation::{BinaryOp, ColumnRef, UnaryOp, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept `TABLESAMPLE RESERVOIR`, which exposes the per-user sampling
    /// step directly. Off for analyst queries.
    pub debug: bool,
}

pub fn parse(text: &str) -> Result<Query> {
    parse_with(text, ParseOptions::default())
}

pub fn parse_with(text: &str, opts: ParseOptions) -> Result<Query> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let q = p.query()?;
    p.eat(&TokenKind::Semicolon);
    p.expect(&TokenKind::Eof, "end of query")?;
    check_query(&q, opts, 0)?;
    Ok(q)
}

fn check_query(q: &Query, opts: ParseOptions, depth: usize) -> Result<()> {
    let mut exprs: Vec<&SqlExpr> = q.select.iter().map(|s| &s.expr).collect();
    exprs.extend(q.where_clause.iter());
    exprs.extend(q.group_by.iter());
    exprs.extend(q.having.iter());
    let anon_call = exprs.iter().flat_map(|e| e.calls()).find(|c| c.is_anon());
    if let (Some(c), false) = (anon_call, q.anonymized) {
        return Err(Error::Rejected(format!("{} requires SELECT WITH ANONYMIZATION", c.name)));
    }
    if q.anonymized && q.having.is_some() {
        return Err(Error::Rejected("HAVING is not allowed in anonymized queries; thresholding is implicit".into()));
    }
    for item in &q.from {
        if item.table.sample_rows.is_some() && !opts.debug {
            return Err(Error::Rejected("TABLESAMPLE RESERVOIR is only accepted in debug mode".into()));
        }
        if let TableSource::Subquery(sub) = &item.table.source {
            if depth > 0 {
                return Err(Error::Rejected("table subqueries may be nested only one level deep".into()));
            }
            if sub.anonymized {
                return Err(Error::Rejected("anonymized queries cannot be nested".into()));
            }
            check_query(sub, opts, depth + 1)?;
        }
    }
    Ok(())
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: Keyword) -> bool {
        self.eat(&TokenKind::Keyword(kw))
    }

    fn error(&self, expected: &str) -> Error {
        let t = &self.tokens[self.pos];
        Error::Syntax { offset: t.offset, expected: expected.to_string(), found: t.kind.to_string() }
    }

    fn expect(&mut self, kind: &TokenKind, expected: &str) -> Result<()> {
        if self.eat(kind) {
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn expect_kw(&mut self, kw: Keyword) -> Result<()> {
        self.expect(&TokenKind::Keyword(kw), kw.as_str())
    }

    fn ident(&mut self, expected: &str) -> Result<String> {
        match self.peek() {
            TokenKind::Ident(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(expected)),
        }
    }

    fn query(&mut self) -> Result<Query> {
        self.expect_kw(Keyword::Select)?;
        let anonymized = if self.eat_kw(Keyword::With) {
            self.expect_kw(Keyword::Anonymization)?;
            true
        } else {
            false
        };
        let mut select = vec![self.select_item()?];
        while self.eat(&TokenKind::Comma) {
            select.push(self.select_item()?);
        }
        self.expect_kw(Keyword::From)?;
        let from = self.parse_from()?;
        let where_clause = if self.eat_kw(Keyword::Where) { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw(Keyword::Group) {
            self.expect_kw(Keyword::By)?;
            group_by.push(self.expr()?);
            while self.eat(&TokenKind::Comma) {
                group_by.push(self.expr()?);
            }
        }
        let having = if self.eat_kw(Keyword::Having) { Some(self.expr()?) } else { None };
        Ok(Query { anonymized, select, from, where_clause, group_by, having })
    }

    fn alias(&mut self) -> Result<Option<String>> {
        if self.eat_kw(Keyword::As) {
            return self.ident("alias").map(Some);
        }
        if let TokenKind::Ident(s) = self.peek() {
            let s = s.clone();
            self.advance();
            return Ok(Some(s));
        }
        Ok(None)
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        let expr = self.expr()?;
        let alias = self.alias()?;
        Ok(SelectItem { expr, alias })
    }

    fn parse_from(&mut self) -> Result<Vec<FromItem>> {
        let mut items = vec![FromItem { join: JoinKind::First, table: self.table_factor()?, using_uid: false }];
        loop {
            let join = if self.eat(&TokenKind::Comma) {
                JoinKind::Comma
            } else if self.eat_kw(Keyword::Join) {
                JoinKind::Join
            } else {
                break;
            };
            let table = self.table_factor()?;
            let using_uid = if self.eat_kw(Keyword::Using) {
                self.expect(&TokenKind::LParen, "`(`")?;
                let offset = self.tokens[self.pos].offset;
                let col = self.ident("uid")?;
                if !col.eq_ignore_ascii_case("uid") {
                    return Err(Error::Syntax { offset, expected: "uid".into(), found: format!("identifier `{col}`") });
                }
                self.expect(&TokenKind::RParen, "`)`")?;
                true
            } else {
                false
            };
            items.push(FromItem { join, table, using_uid });
        }
        Ok(items)
    }

    fn table_factor(&mut self) -> Result<TableFactor> {
        let source = if self.eat(&TokenKind::LParen) {
            let q = self.query()?;
            self.expect(&TokenKind::RParen, "`)` closing the subquery")?;
            TableSource::Subquery(Box::new(q))
        } else {
            TableSource::Named(self.ident("table name or `(`")?)
        };
        let alias = self.alias()?;
        let mut sample_rows = None;
        if self.eat_kw(Keyword::Tablesample) {
            self.expect_kw(Keyword::Reservoir)?;
            self.expect(&TokenKind::LParen, "`(`")?;
            let n = match self.peek() {
                TokenKind::Int(n) if *n >= 1 => *n as u64,
                _ => return Err(self.error("positive row count")),
            };
            self.advance();
            self.expect_kw(Keyword::Rows)?;
            self.expect_kw(Keyword::Partition)?;
            self.expect_kw(Keyword::By)?;
            let offset = self.tokens[self.pos].offset;
            let col = self.ident("uid")?;
            if !col.eq_ignore_ascii_case("uid") {
                return Err(Error::Syntax { offset, expected: "uid".into(), found: format!("identifier `{col}`") });
            }
            self.expect(&TokenKind::RParen, "`)`")?;
            sample_rows = Some(n);
        }
        Ok(TableFactor { source, alias, sample_rows })
    }

    pub(super) fn expr(&mut self) -> Result<SqlExpr> {
        let mut left = self.and_expr()?;
        while self.eat_kw(Keyword::Or) {
            let right = self.and_expr()?;
            left = binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<SqlExpr> {
        let mut left = self.not_expr()?;
        while self.eat_kw(Keyword::And) {
            let right = self.not_expr()?;
            left = binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<SqlExpr> {
        if self.eat_kw(Keyword::Not) {
            let inner = self.not_expr()?;
            return Ok(SqlExpr::Unary { op: UnaryOp::Not, expr: Box::new(inner) });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<SqlExpr> {
        let left = self.additive()?;
        let op = match self.peek() {
            TokenKind::Eq => BinaryOp::Eq,
            TokenKind::NotEq => BinaryOp::NotEq,
            TokenKind::Lt => BinaryOp::Lt,
            TokenKind::LtEq => BinaryOp::LtEq,
            TokenKind::Gt => BinaryOp::Gt,
            TokenKind::GtEq => BinaryOp::GtEq,
            _ => return Ok(left),
        };
        self.advance();
        let right = self.additive()?;
        Ok(binary(op, left, right))
    }

    fn additive(&mut self) -> Result<SqlExpr> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                TokenKind::Plus => BinaryOp::Add,
                TokenKind::Minus => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.multiplicative()?;
            left = binary(op, left, right);
        }
    }

    fn multiplicative(&mut self) -> Result<SqlExpr> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                TokenKind::Star => BinaryOp::Mul,
                TokenKind::Slash => BinaryOp::Div,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.unary()?;
            left = binary(op, left, right);
        }
    }

    fn unary(&mut self) -> Result<SqlExpr> {
        if self.eat(&TokenKind::Minus) {
            let inner = self.unary()?;
            // Negative numeric literals are literals, not negations.
            return Ok(match inner {
                SqlExpr::Literal(Value::Int(i)) if i != i64::MIN => SqlExpr::Literal(Value::Int(-i)),
                SqlExpr::Literal(Value::Float(x)) => SqlExpr::Literal(Value::Float(-x)),
                other => SqlExpr::Unary { op: UnaryOp::Neg, expr: Box::new(other) },
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<SqlExpr> {
        let lit = |v| Ok(SqlExpr::Literal(v));
        match self.peek().clone() {
            TokenKind::Int(i) => {
                self.advance();
                lit(Value::Int(i))
            }
            TokenKind::Float(x) => {
                self.advance();
                lit(Value::Float(x))
            }
            TokenKind::Str(s) => {
                self.advance();
                lit(Value::Text(s))
            }
            TokenKind::Keyword(Keyword::Null) => {
                self.advance();
                lit(Value::Null)
            }
            TokenKind::Keyword(Keyword::True) => {
                self.advance();
                lit(Value::Bool(true))
            }
            TokenKind::Keyword(Keyword::False) => {
                self.advance();
                lit(Value::Bool(false))
            }
            TokenKind::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Keyword(Keyword::If) => {
                self.advance();
                let cond = self.expr()?;
                self.expect_kw(Keyword::Then)?;
                let then = self.expr()?;
                self.expect_kw(Keyword::Else)?;
                let otherwise = self.expr()?;
                Ok(SqlExpr::If { cond: Box::new(cond), then: Box::new(then), otherwise: Box::new(otherwise) })
            }
            TokenKind::Ident(name) => {
                self.advance();
                if *self.peek() == TokenKind::LParen {
                    return self.call(name);
                }
                if self.eat(&TokenKind::Dot) {
                    let col = self.ident("column name")?;
                    return Ok(SqlExpr::Column(ColumnRef { qualifier: Some(name), name: col }));
                }
                Ok(SqlExpr::Column(ColumnRef { qualifier: None, name }))
            }
            _ => Err(self.error("expression")),
        }
    }

    fn call(&mut self, name: String) -> Result<SqlExpr> {
        self.expect(&TokenKind::LParen, "`(`")?;
        let distinct = self.eat_kw(Keyword::Distinct);
        let mut args = Vec::new();
        if *self.peek() != TokenKind::RParen {
            loop {
                if self.eat(&TokenKind::Star) {
                    args.push(FnArg::Star);
                } else {
                    args.push(FnArg::Expr(self.expr()?));
                }
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
        }
        self.expect(&TokenKind::RParen, "`,` or `)`")?;
        Ok(SqlExpr::Call(Call { name: name.to_ascii_uppercase(), distinct, args }))
    }
}

fn binary(op: BinaryOp, left: SqlExpr, right: SqlExpr) -> SqlExpr {
    SqlExpr::Binary { op, left: Box::new(left), right: Box::new(right) }
}

#[cfg(test)]
pub(crate) fn parse_expr(text: &str) -> Result<SqlExpr> {
    let mut p = Parser { tokens: tokenize(text)?, pos: 0 };
    let e = p.expr()?;
    p.expect(&TokenKind::Eof, "end of expression")?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expr("a + b * c = 1 OR NOT x AND y").unwrap();
        assert_eq!(e.to_string(), "(((a + (b * c)) = 1) OR ((NOT x) AND y))");
        assert_eq!(parse_expr("-3 - -x").unwrap().to_string(), "(-3 - (-x))");
        assert_eq!(parse_expr("IF uid = 7 THEN 0/0 ELSE 0").unwrap().to_string(), "(IF (uid = 7) THEN (0 / 0) ELSE 0)");
        assert_eq!(parse_expr("count(DISTINCT uid)").unwrap().to_string(), "COUNT(DISTINCT uid)");
    }

    #[test]
    fn syntax_errors_name_expectation_and_position() {
        let err = parse("SELECT a FROM").unwrap_err();
        assert_eq!(
            err,
            Error::Syntax { offset: 13, expected: "table name or `(`".into(), found: "end of input".into() }
        );
        assert!(matches!(parse("SELECT a b c FROM t"), Err(Error::Syntax { offset: 11, .. })));
        assert!(matches!(parse("SELECT FROM t"), Err(Error::Syntax { offset: 7, .. })));
        assert!(matches!(parse("SELECT a FROM t, u USING (id)"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn anon_functions_need_the_anonymization_clause() {
        assert!(matches!(parse("SELECT ANON_SUM(x) FROM t"), Err(Error::Rejected(_))));
        assert!(matches!(parse("SELECT a FROM t WHERE ANON_COUNT(*) > 1"), Err(Error::Rejected(_))));
        assert!(parse("SELECT WITH ANONYMIZATION ANON_SUM(x) FROM t").is_ok());
    }

    #[test]
    fn having_only_in_plain_queries() {
        assert!(parse("SELECT a, COUNT(*) AS c FROM t GROUP BY a HAVING c >= 2").is_ok());
        assert!(matches!(
            parse("SELECT WITH ANONYMIZATION a, ANON_COUNT(*) AS c FROM t GROUP BY a HAVING c >= 2"),
            Err(Error::Rejected(_))
        ));
    }

    #[test]
    fn tablesample_is_debug_only() {
        let q = "SELECT a FROM (SELECT a, uid FROM t GROUP BY a, uid) TABLESAMPLE RESERVOIR (2 ROWS PARTITION BY uid)";
        assert!(matches!(parse(q), Err(Error::Rejected(_))));
        let parsed = parse_with(q, ParseOptions { debug: true }).unwrap();
        assert_eq!(parsed.from[0].table.sample_rows, Some(2));
    }

    #[test]
    fn nesting_limits() {
        assert!(matches!(parse("SELECT a FROM (SELECT a FROM (SELECT a FROM t))"), Err(Error::Rejected(_))));
        assert!(matches!(
            parse("SELECT a FROM (SELECT WITH ANONYMIZATION ANON_COUNT(*) AS a FROM t)"),
            Err(Error::Rejected(_))
        ));
    }
}
