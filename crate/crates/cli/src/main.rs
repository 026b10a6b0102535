use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use punch_core::experiments::{
    cells, figure_table, run_experiment, write_figure_csv, ExperimentConfig, Family, RunOptions, Summary,
};

#[derive(Parser)]
#[command(name = "punch", version, about = "Run PUNCH network coding simulations and sweeps")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config and write CSV and JSON results.
    Run {
        config: PathBuf,
        /// Override a config value by dotted path, e.g. punch.theta=1.6.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, env = "PUNCH_OUT_DIR", default_value = "punch-out")]
        out: PathBuf,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the per-cell time series files.
        #[arg(long)]
        no_series: bool,
    },
    /// Extract the table behind one figure family from a summary.
    Figure {
        summary: PathBuf,
        /// rate, channels, pus, activity or random.
        #[arg(long)]
        family: String,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            set,
            out,
            jobs,
            no_series,
        } => {
            let cfg = ExperimentConfig::load(&config, &set).map_err(|e| Failure::Config(e.to_string()))?;
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = cancel.clone();
            ctrlc::set_handler(move || {
                eprintln!("interrupt: finishing running cells, skipping the rest");
                flag.store(true, Ordering::SeqCst);
            })
            .map_err(|e| Failure::Runtime(format!("cannot install interrupt handler: {e}")))?;
            let opts = RunOptions {
                jobs,
                write_series: !no_series,
            };
            let report = run_experiment(&cfg, &out, &cancel, &opts).map_err(|e| Failure::Runtime(e.to_string()))?;
            print_summary(&report.summary);
            if !report.summary.complete {
                return Err(Failure::Runtime(format!(
                    "interrupted after {} of {} cells; partial results in {}",
                    report.summary.cells_done,
                    report.summary.cells_total,
                    out.display()
                )));
            }
            let _ = writeln!(io::stdout(), "results in {}", out.display());
            Ok(())
        }
        Command::Figure {
            summary,
            family,
            output,
        } => {
            let family: Family = family
                .parse()
                .map_err(|e: punch_core::UsageError| Failure::Config(e.to_string()))?;
            let summary = Summary::load(&summary).map_err(|e| Failure::Config(e.to_string()))?;
            let table = figure_table(&summary, family).map_err(|e| Failure::Config(e.to_string()))?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            let written = match output {
                Some(path) => {
                    let f = File::create(&path)
                        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))?;
                    write_figure_csv(&table, BufWriter::new(f))
                }
                None => write_figure_csv(&table, io::stdout().lock()),
            };
            written.map_err(|e| Failure::Runtime(e.to_string()))
        }
        Command::Validate { config, set } => {
            let cfg = ExperimentConfig::load(&config, &set).map_err(|e| Failure::Config(e.to_string()))?;
            let n = cells(&cfg).len();
            match cfg.sweep.parameter {
                Some(p) => writeln!(io::stdout(), "ok: {n} cells ({} values of {p})", cfg.sweep.values.len()),
                None => writeln!(io::stdout(), "ok: {n} cells"),
            }
            .map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

/// Printing stops quietly if stdout goes away (e.g. piped into `head`).
fn print_summary(s: &Summary) {
    let mut out = io::stdout().lock();
    let _ = writeln!(
        out,
        "{:>10} {:>10} {:>8} {:>8} {:>9} {:>7}",
        s.parameter.map_or("x", |p| p.name()),
        "mode",
        "tput",
        "coding",
        "queue",
        "loss"
    );
    let fmt = |v: Option<f64>, w: usize, d: usize| v.map_or(format!("{:>w$}", "-"), |v| format!("{v:>w$.d$}"));
    for p in &s.points {
        let m = |k: &str| p.metric(k).map(|s| s.mean);
        let _ = writeln!(
            out,
            "{} {:>10} {} {} {} {}",
            fmt(p.x, 10, 2),
            p.mode.label(),
            fmt(m("throughput_gain"), 8, 3),
            fmt(m("coding_gain"), 8, 3),
            fmt(m("avg_queue"), 9, 2),
            fmt(m("loss_rate"), 7, 3),
        );
    }
}
