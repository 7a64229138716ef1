//! Argument handling for the `clts` binary. Exit codes: 0 on success, 1 when
//! a run or check fails, 2 for usage errors, bad configs and missing outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{run_checks, CheckRow, FaultInjection};
use crate::error::{CltsError, Result};
use crate::pipeline::{
    audit_persisted_state, build_stream, read_matrix_csv, run_clts_detailed, run_naive_baseline, write_matrix_csv,
    write_run_outputs, ExperimentConfig, MemoryReport, RunReport, Summary,
};

#[derive(Debug, Parser)]
#[command(name = "clts", version, about = "Continual learning from task captions")]
pub struct Cli {
    /// Log progress (info level) to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the captioned-replay learner and write its outputs.
    Run(RunArgs),
    /// Train the naive fine-tuning baseline on the same stream.
    Baseline(RunArgs),
    /// Print a summary of a finished run.
    Report(ReportArgs),
    /// Gradient checks and oracle round trips.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Random networks per gradient suite.
    #[arg(long, default_value_t = 20)]
    pub networks: u64,
    /// Corrupts the analytic gradient of the named parameter block.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let outcome = match cli.command {
        Command::Run(args) => run(&args),
        Command::Baseline(args) => baseline(&args),
        Command::Report(args) => report(&args.out),
        Command::Check(args) => Ok(check(&args)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.repetitions = reps;
    }
    config.validate()?;
    Ok(config)
}

fn run(args: &RunArgs) -> Result<i32> {
    let config = load_config(args)?;
    let stream = build_stream(&config)?;
    log::info!("{} tasks, {} repetitions", stream.len(), config.repetitions);
    let outcome = run_clts_detailed(&stream, &config)?;
    write_run_outputs(&args.out, &outcome)?;
    print_acc(&outcome.report);
    println!("outputs written to {}", args.out.display());

    let audit = audit_persisted_state(&args.out, &stream)?;
    let mut code = 0;
    for v in outcome.report.audit_violations.iter().chain(&audit.violations) {
        eprintln!("privacy violation: {v}");
        code = 1;
    }
    Ok(code)
}

fn baseline(args: &RunArgs) -> Result<i32> {
    let config = load_config(args)?;
    let stream = build_stream(&config)?;
    let report = run_naive_baseline(&stream, &config)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CltsError::io(&args.out, e))?;
    let path = args.out.join("report.json");
    std::fs::write(&path, report.to_json()?).map_err(|e| CltsError::io(&path, e))?;
    write_matrix_csv(&args.out.join("matrix.csv"), &report.mean_matrix)?;
    print_acc(&report);
    println!("outputs written to {}", args.out.display());
    Ok(0)
}

fn fmt_summary(s: &Summary) -> String {
    match s.std {
        Some(std) => format!("{:.4} ± {std:.4}", s.mean),
        None => format!("{:.4}", s.mean),
    }
}

fn print_acc(report: &RunReport) {
    println!("ACC {} over {} repetition(s)", fmt_summary(&report.acc), report.repetitions.len());
}

fn report(out: &Path) -> Result<i32> {
    let path = out.join("report.json");
    if !path.is_file() {
        return Err(CltsError::Config(format!("no report at {}", path.display())));
    }
    let report = RunReport::read(&path)?;
    report.verify_acc()?;
    let csv = out.join("matrix.csv");
    if csv.is_file() && read_matrix_csv(&csv)? != report.mean_matrix {
        return Err(CltsError::Metric(format!("{} disagrees with report.json", csv.display())));
    }
    print!("{}", render_report(&report)?);
    Ok(0)
}

/// Plain-text summary of a stored run, in aligned columns.
pub fn render_report(report: &RunReport) -> Result<String> {
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line(format!("{:<16}{:?}", "method", report.method));
    line(format!("{:<16}{}", "tasks", report.tasks));
    line(format!("{:<16}{}", "repetitions", report.repetitions.len()));
    line(format!("{:<16}{}", "ACC", fmt_summary(&report.acc)));
    line(format!("{:<16}{}", "ACC (all)", fmt_summary(&report.acc_all_entries)));
    if let Some(oracle) = &report.oracle_acc {
        line(format!("{:<16}{}", "ACC (oracle)", fmt_summary(oracle)));
    }
    line(String::new());

    let final_row = report.mean_matrix.final_row()?;
    line(format!("{:<6}{:<12}{:<12}{}", "task", "classes", "final acc", "routing"));
    for (j, acc) in final_row.iter().enumerate() {
        let classes: Vec<String> = report.class_sets[j].iter().map(u32::to_string).collect();
        let routing = report
            .routing_accuracy
            .as_ref()
            .map_or_else(|| "-".to_owned(), |r| fmt_summary(&r[j]));
        line(format!("{:<6}{:<12}{:<12.4}{}", j + 1, classes.join(","), acc, routing));
    }
    if let Some(memory) = &report.memory {
        line(String::new());
        render_memory(memory, &mut line);
    }
    Ok(s)
}

fn render_memory(m: &MemoryReport, line: &mut impl FnMut(String)) {
    line(format!("{:<24}{:>12}{:>10}", "replay memory", "bytes", "ratio"));
    line(format!("{:<24}{:>12}{:>10}", format!("captions ({})", m.caption_records), m.caption_buffer_bytes, "-"));
    for row in [&m.primary, &m.quantized] {
        line(format!(
            "{:<24}{:>12}{:>10.4}",
            format!("exemplars ({} B/value)", row.bytes_per_value),
            row.exemplar_bytes,
            row.ratio
        ));
    }
    line(String::new());
    line(format!("{:<16}{:<10}{:>10}  {}", "reference", "method", "MB", "excess"));
    for r in &m.reference_rows {
        line(format!(
            "{:<16}{:<10}{:>10}  {}",
            r.dataset,
            r.method,
            r.megabytes,
            r.excess_over_clts.as_deref().unwrap_or("-")
        ));
    }
}

fn check(args: &CheckArgs) -> i32 {
    let fault = args.inject_fault.as_deref().map(FaultInjection::new);
    let rows = run_checks(args.networks.max(1), fault.as_ref());
    print!("{}", render_checks(&rows));
    if rows.iter().all(|r| r.passed) {
        0
    } else {
        1
    }
}

pub fn render_checks(rows: &[CheckRow]) -> String {
    let mut s = format!("{:<28}{:<8}{:<14}{}\n", "check", "result", "max rel err", "detail");
    for r in rows {
        let err = r.max_relative_error.map_or_else(|| "-".to_owned(), |e| format!("{e:.2e}"));
        let result = if r.passed { "ok" } else { "FAIL" };
        s.push_str(&format!("{:<28}{:<8}{:<14}{}\n", r.name, result, err, r.detail));
    }
    s
}
