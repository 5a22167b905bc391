//! The supported SQL subset: tokenizer, parser, and lowering to plans.
//!
//! ```text
//! query      := SELECT [WITH ANONYMIZATION] item {, item} FROM table_expr
//!               [WHERE expr] [GROUP BY expr {, expr}] [HAVING expr] [;]
//! table_expr := factor {(, | JOIN) factor [USING (uid)]}
//! factor     := (name | "(" query ")") [[AS] alias]
//!               [TABLESAMPLE RESERVOIR (n ROWS PARTITION BY uid)]   -- debug only
//! anon_fn    := ANON_COUNT | ANON_SUM | ANON_AVG | ANON_VAR | ANON_STDDEV
//!               | ANON_NTILE "(" (* | expr) {, literal} ")"
//! ```

pub mod ast;
mod lexer;
mod lower;
mod parser;

pub use lexer::{tokenize, Keyword, Token, TokenKind};
pub use lower::lower;
pub use parser::{parse, parse_with, ParseOptions};

use crate::plan::PlanNode;
use crate::relation::Catalog;
use crate::Result;

/// Parses and lowers in one step.
pub fn compile(text: &str, catalog: &Catalog, opts: ParseOptions) -> Result<PlanNode> {
    lower(&parse_with(text, opts)?, catalog)
}
