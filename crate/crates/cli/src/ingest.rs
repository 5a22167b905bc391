//! CSV loading with per-column type inference.

use std::path::Path;

use dpquery_core::{Catalog, Column, DataType, Relation, Value};

use crate::error::CliError;

/// Narrowest type that parses every non-empty cell: INT64, then FLOAT64,
/// then TEXT. Columns with no values are TEXT.
fn infer_type<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> DataType {
    let mut present = cells.filter(|c| !c.is_empty()).peekable();
    if present.peek().is_none() {
        return DataType::Text;
    }
    if present.clone().all(|c| c.parse::<i64>().is_ok()) {
        DataType::Int
    } else if present.all(|c| c.parse::<f64>().is_ok()) {
        DataType::Float
    } else {
        DataType::Text
    }
}

fn convert(cell: &str, ty: DataType) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    match ty {
        DataType::Int => Value::Int(cell.parse().expect("inferred as integer")),
        DataType::Float => Value::Float(cell.parse().expect("inferred as float")),
        _ => Value::Text(cell.to_string()),
    }
}

/// Reads a CSV file with a header row into a relation owned by `uid_col`.
/// Empty cells are NULL; `NaN` and `inf` in numeric columns stay non-finite.
pub fn ingest_csv(path: &Path, uid_col: &str) -> Result<Relation, CliError> {
    let err = |message: String| CliError::Ingest { path: path.to_path_buf(), message };
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => err(format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    if !headers.iter().any(|h| h.eq_ignore_ascii_case(uid_col)) {
        return Err(err(format!("no user id column `{uid_col}` among {headers:?}")));
    }
    let records: Vec<csv::StringRecord> =
        reader.records().collect::<Result<_, _>>().map_err(|e| err(format!("malformed row: {e}")))?;

    let columns: Vec<Column> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| Column::new(h.as_str(), infer_type(records.iter().map(move |r| &r[i]))))
        .collect();
    let rows = records.iter().map(|r| r.iter().zip(&columns).map(|(cell, c)| convert(cell, c.ty)).collect()).collect();
    Relation::owned(columns, uid_col, rows).map_err(|e| err(e.to_string()))
}

/// Loads every `*.csv` in `dir` as a table named after the file stem.
pub fn load_catalog(dir: &Path, uid_col: &str) -> Result<Catalog, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<_> =
        entries.map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err))).collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Ingest { path: dir.to_path_buf(), message: "no .csv files found".into() });
    }
    let mut catalog = Catalog::new();
    for p in paths {
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        log::debug!("loading table {name} from {}", p.display());
        catalog.insert(&name, ingest_csv(&p, uid_col)?);
    }
    Ok(catalog)
}
