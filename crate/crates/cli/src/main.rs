use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdrift_core::experiment::{
    cost_histogram, plan_report, run_experiment_with, table2_report, ExperimentConfig, Row,
};
use qdrift_core::Error;

const THREADS_ENV: &str = "QDRIFT_THREADS";
const DEFAULT_OUTPUT: &str = "qdrift-out";

#[derive(Parser)]
#[command(name = "qdrift", version, about = "Randomized product-formula experiments")]
struct Cli {
    /// Worker threads; overrides QDRIFT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write results.csv and summary.json.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Exit with status 3 if any diamond estimate did not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Print the expected-cost table of the built-in lattice models.
    Table2 {
        #[arg(long)]
        json: bool,
    },
    /// Cost histograms of the sampled channels, as JSON.
    Costs {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Resource plans for every point of a config, as JSON.
    BoundsPlan {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    NotConverged(usize),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print_stdout(text),
    }
    Ok(())
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn run(config: &Path, output: Option<PathBuf>, strict: bool) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = output
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join("results.csv");
    let mut writer = csv::Writer::from_writer(File::create(&csv_path)?);
    let mut groups = 0usize;
    let result = run_experiment_with(&cfg, |records| {
        for r in records {
            writer.serialize(&r.row)?;
        }
        writer.flush()?;
        groups += 1;
        if let Some(first) = records.first() {
            let r: &Row = &first.row;
            eprintln!("[{groups}] {} t={} b={} done", r.model, r.t, r.b);
        }
        Ok(())
    })?;
    drop(writer);
    std::fs::write(dir.join("summary.json"), result.aggregate_json()?)?;
    eprintln!(
        "{} rows written to {} in {:.1?}",
        result.points.len(),
        csv_path.display(),
        result.elapsed
    );
    let unconverged = result.points.iter().filter(|p| !p.row.converged).count();
    if unconverged > 0 {
        eprintln!("{unconverged} diamond estimates did not converge");
        if strict {
            return Err(Failure::NotConverged(unconverged));
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    match cli.command {
        Command::Run {
            config,
            output,
            strict,
        } => run(&config, output, strict),
        Command::Table2 { json } => {
            let report = table2_report()?;
            if json {
                print_stdout(&serde_json::to_string_pretty(&report).map_err(Error::from)?);
            } else {
                print_stdout(report.to_string().trim_end());
            }
            if report.passes() {
                Ok(())
            } else {
                Err(Failure::Other("table entries disagree with the reference".into()))
            }
        }
        Command::Costs { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let hist = cost_histogram(&cfg)?;
            let text = serde_json::to_string_pretty(&hist).map_err(Error::from)?;
            emit(&text, output.as_deref())
        }
        Command::BoundsPlan { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let plans = plan_report(&cfg)?;
            let text = serde_json::to_string_pretty(&plans).map_err(Error::from)?;
            emit(&text, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = execute(cli);
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(n)) => {
            eprintln!("error: {n} estimates did not converge (--strict)");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
