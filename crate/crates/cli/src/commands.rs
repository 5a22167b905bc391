//! The three subcommands.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use dpquery_core::accuracy::{self, UniformInput};
use dpquery_core::planner::{default_delta, execute, ExecOptions};
use dpquery_core::sql::ParseOptions;
use dpquery_core::tester::{self, Mechanism, TesterConfig};
use dpquery_core::{plan_query, PlannerConfig, PrivacyBudget, RandomSource};
use serde_json::json;

use crate::error::{CliError, ExitCode};
use crate::ingest::load_catalog;
use crate::output::{write_result, Format};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub query: PathBuf,
    pub uid_col: String,
    pub epsilon: f64,
    /// Derived from the number of users when absent.
    pub delta: Option<f64>,
    pub cu: usize,
    /// Fresh entropy when absent.
    pub seed: Option<u64>,
    pub format: Format,
    pub leftovers: bool,
    pub ci_level: f64,
    /// Accept debug-only syntax such as `TABLESAMPLE`.
    pub debug: bool,
    /// Print the rewritten plan instead of running it.
    pub explain: bool,
}

fn read_query(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::io(path, e))?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses, plans and runs an anonymized query over the CSV tables in
/// `cfg.data`, writing the released rows to `out`.
pub fn cmd_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_query(&cfg.query)?;
    let catalog = load_catalog(&cfg.data, &cfg.uid_col)?;
    let delta = match cfg.delta {
        Some(d) => d,
        None => default_delta(catalog.distinct_users(), cfg.epsilon)?,
    };
    let mut planner = PlannerConfig::new(PrivacyBudget::new(cfg.epsilon, delta, cfg.cu)?);
    planner.ci_level = cfg.ci_level;
    planner.leftovers = cfg.leftovers;
    let plan = plan_query(&text, &catalog, &planner, ParseOptions { debug: cfg.debug })?;
    if cfg.explain {
        write!(out, "{}", plan.dump())?;
        return Ok(());
    }
    let rng = cfg.seed.map_or_else(RandomSource::from_entropy, RandomSource::from_seed);
    let table = execute(&plan, &catalog, &rng, ExecOptions::default())?;
    for m in &table.diagnostics.messages {
        log::warn!("{m}");
    }
    write_result(&table, cfg.format, out)
}

/// Runs the stochastic tester on a built-in mechanism. On failure the
/// witness is written as JSON to `report` (or a file in the temp dir).
pub fn cmd_testdp(
    function: &str,
    cfg: &TesterConfig,
    seed: Option<u64>,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<ExitCode, CliError> {
    let mech = Mechanism::builtin(function, cfg.value_range).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown function `{function}`; expected one of {}",
            Mechanism::BUILTIN_NAMES.join(", ")
        ))
    })?;
    let seed = seed.unwrap_or_else(RandomSource::entropy_seed);
    let verdict = tester::run(&mech, cfg, &RandomSource::from_seed(seed))?;
    if verdict.passed {
        writeln!(
            out,
            "PASS {function}: {} pairs over {} databases (seed {seed})",
            verdict.pairs_tested, verdict.databases_sampled
        )?;
        return Ok(ExitCode::Success);
    }
    let path =
        report.map_or_else(|| std::env::temp_dir().join(format!("dpquery-{function}-witness.json")), Path::to_path_buf);
    let body = json!({ "function": function, "seed": seed, "config": cfg, "verdict": verdict });
    std::fs::write(&path, serde_json::to_string_pretty(&body)?).map_err(|e| CliError::io(&path, e))?;
    let w = verdict.witness.as_ref().expect("a failing verdict carries a witness");
    writeln!(
        out,
        "FAIL {function}: {:?} vs {:?} violates the predicate in {} bucket(s); report at {}",
        w.d1,
        w.d2,
        w.report.violations.len(),
        path.display()
    )?;
    Ok(ExitCode::DpViolation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyArgs {
    pub sensitivity: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub cu: usize,
    pub aggregates: usize,
    pub true_value: Option<f64>,
    /// `(a, b, u)`: inputs uniform on `[a, b]`, clamped above at `u`.
    pub uniform: Option<(f64, f64, f64)>,
    pub json: bool,
}

pub fn cmd_accuracy(args: &AccuracyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let budget = PrivacyBudget::new(args.epsilon, args.delta, args.cu)?;
    let uniform = args.uniform.map(|(a, b, upper_bound)| UniformInput { a, b, upper_bound });
    let r = accuracy::report(args.sensitivity, &budget, args.aggregates, args.true_value, uniform)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&r)?)?;
        return Ok(());
    }
    writeln!(out, "median_noise={}", r.median_noise)?;
    if let Some(e) = r.median_relative_error {
        writeln!(out, "median_relative_error={e}")?;
    }
    writeln!(out, "tau={}", r.suppression.tau)?;
    writeln!(out, "single_user_partition_release={}", r.suppression.partition_release)?;
    writeln!(out, "single_user_suppression={}", r.suppression.user_suppression)?;
    writeln!(out, "small_count_suppression_limit={}", r.suppression.small_count_asymptote)?;
    if let Some(c) = r.clamp_error {
        writeln!(out, "expected_clamp_error={c}")?;
    }
    Ok(())
}
