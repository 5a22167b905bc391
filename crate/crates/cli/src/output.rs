//! Result rendering: CSV with a `#` footer, or JSON lines.

use std::io::Write;

use dpquery_core::plan::OutputItem;
use dpquery_core::{NoisyResult, ResultTable, Value};
use serde_json::{json, Map};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Key cell of the row that merges every suppressed partition.
pub const LEFTOVERS_KEY: &str = "__leftovers__";

fn key_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub fn write_result(table: &ResultTable, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Csv => write_csv(table, out),
        Format::Json => write_json(table, out),
    }
}

fn write_csv(table: &ResultTable, out: &mut dyn Write) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_writer(&mut *out);
    let mut header = Vec::new();
    for item in &table.output {
        match *item {
            OutputItem::Key(i) => header.push(table.key_names[i].clone()),
            OutputItem::Agg(i) => {
                let name = &table.agg_names[i];
                header.extend([name.clone(), format!("{name}_ci_low"), format!("{name}_ci_high")]);
            }
        }
    }
    w.write_record(&header)?;
    let rows = table.rows.iter().map(|r| (r, false)).chain(table.leftovers.iter().map(|r| (r, true)));
    for (row, leftovers) in rows {
        let mut record = Vec::with_capacity(header.len());
        for item in &table.output {
            match *item {
                OutputItem::Key(_) if leftovers => record.push(LEFTOVERS_KEY.to_string()),
                OutputItem::Key(i) => record.push(key_cell(&row.keys[i])),
                OutputItem::Agg(i) => {
                    let v = row.values[i];
                    record.extend([v.value.to_string(), v.ci.0.to_string(), v.ci.1.to_string()]);
                }
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    drop(w);
    writeln!(out, "# suppressed_partitions={}", table.suppressed_count)?;
    writeln!(out, "# epsilon={:?} delta={:?} cu={} tau={:?}", table.epsilon, table.delta, table.cu, table.tau)?;
    if table.leftovers.is_some() {
        writeln!(out, "# the {LEFTOVERS_KEY} row aggregates all suppressed partitions")?;
    }
    if !table.diagnostics.is_empty() {
        writeln!(out, "# diagnostics={}", table.diagnostics.count)?;
    }
    Ok(())
}

fn cell(v: &NoisyResult) -> serde_json::Value {
    json!({ "value": v.value, "ci": [v.ci.0, v.ci.1] })
}

fn write_json(table: &ResultTable, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = table.rows.iter().map(|r| (r, false)).chain(table.leftovers.iter().map(|r| (r, true)));
    for (row, leftovers) in rows {
        let mut obj = Map::new();
        for item in &table.output {
            match *item {
                OutputItem::Key(i) => {
                    let v = if leftovers { json!(LEFTOVERS_KEY) } else { serde_json::to_value(&row.keys[i])? };
                    obj.insert(table.key_names[i].clone(), v);
                }
                OutputItem::Agg(i) => {
                    obj.insert(table.agg_names[i].clone(), cell(&row.values[i]));
                }
            }
        }
        writeln!(out, "{}", serde_json::Value::Object(obj))?;
    }
    let summary = json!({ "summary": {
        "suppressed_partitions": table.suppressed_count,
        "leftovers": table.leftovers.is_some(),
        "epsilon": table.epsilon,
        "delta": table.delta,
        "cu": table.cu,
        "tau": table.tau,
        "diagnostics": table.diagnostics.count,
    }});
    writeln!(out, "{summary}")?;
    Ok(())
}
