//! Command-line front end: CSV ingestion, anonymized query execution, the
//! stochastic DP tester and accuracy estimates.

pub mod commands;
mod error;
pub mod ingest;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dpquery_core::tester::TesterConfig;

pub use commands::{cmd_accuracy, cmd_run, cmd_testdp, AccuracyArgs, RunConfig};
pub use error::{CliError, ExitCode};
pub use ingest::{ingest_csv, load_catalog};
pub use output::Format;

#[derive(Debug, Parser)]
#[command(name = "dpquery", version, about = "Differentially private SQL over CSV tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a `SELECT WITH ANONYMIZATION` query.
    Run {
        /// Directory of CSV files; each file is a table named after its stem.
        #[arg(long)]
        data: PathBuf,
        /// File holding the query, or `-` for stdin.
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "uid")]
        uid_col: String,
        #[arg(long)]
        epsilon: f64,
        /// Defaults to exp(-ε·(ln n)²) for n distinct users.
        #[arg(long)]
        delta: Option<f64>,
        /// Maximum partitions per user.
        #[arg(long, default_value_t = 1)]
        cu: usize,
        #[arg(long, env = "DPQUERY_SEED")]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        /// Release one extra row aggregating all suppressed partitions.
        #[arg(long)]
        leftovers: bool,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
        /// Accept debug-only syntax.
        #[arg(long)]
        debug: bool,
        /// Print the rewritten plan and exit.
        #[arg(long)]
        explain: bool,
    },
    /// Stochastically test a built-in aggregation primitive for DP.
    TestDp {
        /// anon_count, anon_sum, anon_avg, anon_var, anon_stddev, anon_ntile,
        /// broken_avg or broken_sum.
        function: String,
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        buckets: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Fraction of buckets allowed to violate the predicate.
        #[arg(long, default_value_t = 0.02)]
        alpha: f64,
        #[arg(long, default_value_t = 0.999)]
        ci_level: f64,
        /// Root databases per size.
        #[arg(long, default_value_t = 16)]
        databases: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        sizes: Vec<usize>,
        /// Records lie in [-range, range].
        #[arg(long, default_value_t = 0.5)]
        range: f64,
        #[arg(long, env = "DPQUERY_SEED")]
        seed: Option<u64>,
        /// Where to write the witness on failure.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Closed-form accuracy figures for one aggregate.
    Accuracy {
        /// Per-user sensitivity Δu of the aggregate.
        #[arg(long)]
        sensitivity: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        cu: usize,
        /// Number of aggregates sharing the budget.
        #[arg(long, default_value_t = 1)]
        aggregates: usize,
        #[arg(long)]
        true_value: Option<f64>,
        /// `a,b,u`: inputs uniform on [a, b] clamped above at u.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        uniform: Option<Vec<f64>>,
        #[arg(long)]
        json: bool,
    },
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<ExitCode, CliError> {
    match command {
        Command::Run {
            data,
            query,
            uid_col,
            epsilon,
            delta,
            cu,
            seed,
            format,
            leftovers,
            ci_level,
            debug,
            explain,
        } => {
            let cfg = RunConfig {
                data,
                query,
                uid_col,
                epsilon,
                delta,
                cu,
                seed,
                format,
                leftovers,
                ci_level,
                debug,
                explain,
            };
            cmd_run(&cfg, out).map(|()| ExitCode::Success)
        }
        Command::TestDp {
            function,
            samples,
            buckets,
            epsilon,
            delta,
            alpha,
            ci_level,
            databases,
            sizes,
            range,
            seed,
            report,
        } => {
            let cfg = TesterConfig {
                num_databases: databases,
                db_sizes: sizes,
                value_range: range,
                samples,
                buckets,
                epsilon,
                delta,
                alpha,
                ci_level,
            };
            cmd_testdp(&function, &cfg, seed, report.as_deref(), out)
        }
        Command::Accuracy { sensitivity, epsilon, delta, cu, aggregates, true_value, uniform, json } => {
            let uniform = match uniform.as_deref() {
                None => None,
                Some(&[a, b, u]) => Some((a, b, u)),
                Some(_) => return Err(CliError::Usage("--uniform takes exactly three values a,b,u".into())),
            };
            let args = AccuracyArgs { sensitivity, epsilon, delta, cu, aggregates, true_value, uniform, json };
            cmd_accuracy(&args, out).map(|()| ExitCode::Success)
        }
    }
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Success };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code as i32;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code as i32,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(err, "error: {e}");
            code as i32
        }
    }
}
