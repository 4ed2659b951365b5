//! Command-line entry point.
//!
//! `affdim --config PATH` loads an [`ExperimentConfig`], executes its task and
//! writes a [`Report`]. Exit codes: 0 on success, 2 when the configuration is
//! missing or invalid, 3 on numeric or resource failures. `affdim selftest`
//! runs the fast checks and exits with 1 if any fails.

pub mod config;
pub mod report;
pub mod selftest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use report::{effective, execute, Outcome, Report, Table, TaskOutput};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "affdim",
    version,
    about = "Dimension experiments for affine iterated function systems"
)]
#[command(subcommand_negates_reqs = true)]
pub struct Args {
    /// Experiment configuration (JSON).
    #[arg(long, required = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the report path in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks automatically.
    #[arg(long, env = "AFFDIM_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Suppress the summary on standard output.
    #[arg(long)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the fast built-in checks and print a table.
    Selftest,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_FAILURE
    }
}

/// Serialize `report` as pretty JSON with a trailing newline.
pub fn render_report(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_csv(table: &Table, path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Load `path`, apply overrides and execute.
pub fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Outcome, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if out.is_some() {
        config.output = out;
    }
    execute(&config)
}

fn run_experiment(args: Args) -> i32 {
    let Some(path) = args.config else {
        eprintln!("error: --config is required");
        return EXIT_INVALID;
    };
    let outcome = match run(&path, args.seed, args.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let text = render_report(&outcome.report);
    let config = &outcome.report.config;
    let mut stdout = std::io::stdout().lock();
    match &config.output {
        Some(p) => {
            if let Err(e) = fs::write(p, &text) {
                eprintln!("error: cannot write {}: {e}", p.display());
                return EXIT_FAILURE;
            }
        }
        None => {
            if stdout.write_all(text.as_bytes()).is_err() {
                return EXIT_FAILURE;
            }
        }
    }
    if let (Some(p), Some(table)) = (&config.csv, &outcome.table) {
        if let Err(e) = write_csv(table, p) {
            eprintln!("error: cannot write {}: {e}", p.display());
            return EXIT_FAILURE;
        }
    }
    if !args.quiet {
        let summary = &outcome.summary;
        let stream: &mut dyn Write = if config.output.is_some() {
            &mut stdout
        } else {
            &mut std::io::stderr()
        };
        let _ = write!(stream, "{}: {}", outcome.report.task, summary);
    }
    EXIT_OK
}

/// Parse the process arguments and run; returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    }
    match args.command {
        Some(Command::Selftest) => {
            let results = selftest::run_checks();
            print!("{}", selftest::render(&results));
            if results.iter().all(|r| r.pass) {
                EXIT_OK
            } else {
                EXIT_SELFTEST_FAILED
            }
        }
        None => run_experiment(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let a = Args::try_parse_from([
            "affdim",
            "--config",
            "c.json",
            "--seed",
            "7",
            "--threads",
            "2",
            "--quiet",
        ])
        .unwrap();
        assert_eq!(a.config, Some(PathBuf::from("c.json")));
        assert_eq!(a.seed, Some(7));
        assert_eq!(a.threads, 2);
        assert!(a.quiet);
        assert!(Args::try_parse_from(["affdim"]).is_err());
        assert!(matches!(
            Args::try_parse_from(["affdim", "selftest"])
                .unwrap()
                .command,
            Some(Command::Selftest)
        ));
    }

    #[test]
    fn report_round_trips() {
        let config = ExperimentConfig::from_json(
            r#"{"task": {"kind": "carpet", "n_cols": 3, "m_rows": 2, "digits": [[0,0],[1,0],[2,1]]}}"#,
        )
        .unwrap();
        let report = execute(&config).unwrap().report;
        let back: Report = serde_json::from_str(&render_report(&report)).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_round_trips_exactly() {
        let config = ExperimentConfig::from_json(
            r#"{"seed": 3,
                "ifs": {"matrices": [[[0.5, 0.1], [0.0, 0.3]], [[0.4, 0.0], [0.2, 0.5]]], "translations": [[0, 0], [1, 1]]},
                "measure": {"kind": "uniform"},
                "task": {"kind": "sample", "cloud": {"n_points": 50, "depth": 40}}}"#,
        )
        .unwrap();
        let outcome = execute(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        write_csv(outcome.table.as_ref().unwrap(), &path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["x0", "x1"]
        );
        let parsed: Vec<f64> = r
            .records()
            .flat_map(|rec| {
                rec.unwrap()
                    .iter()
                    .map(|f| f.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect();
        let again = crate::estimator::sample_points(
            &config.ifs().unwrap(),
            &config.measure(2).unwrap(),
            50,
            40,
            crate::rng::derive_seed(3, 5),
        )
        .unwrap();
        assert_eq!(parsed, again.points());
    }
}
