//! Batch front end: validate, estimate, simulate, minimax and report on JSON models.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use spectral_interp::minimax::SaddleOptions;
use spectral_interp::model::ModelDocument;

use crate::commands::Context;
use crate::config::{read_json, ClassesDocument, Overrides};
use crate::error::CliError;
use crate::output::{OutputDir, CSV_SCHEMA};

#[derive(Parser, Debug)]
#[command(name = "spectral-interp", version, about = "Interpolation of integral functionals of stationary processes with missing intervals")]
struct Cli {
    /// Worker threads for the parallel loops
    #[arg(long, env = "SPECTRAL_INTERP_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Model JSON file
    model: PathBuf,
    /// Directory for result.json and the CSV tables
    #[arg(short, long, default_value = "out")]
    output_dir: PathBuf,
    /// Reuse assembled operators stored here, keyed by the model hash
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check densities, minimality and the missing-set discretization
    Validate(Common),
    /// Optimal estimate: Δ in both forms, h.csv and c.csv
    Estimate(Common),
    /// Monte Carlo check of Δ
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the first replication's paths to paths.csv
        #[arg(long)]
        emit_paths: bool,
    },
    /// Least favorable densities and the minimax characteristic
    Minimax {
        #[command(flatten)]
        common: Common,
        /// Class JSON file: {"F": class, "G": class}
        #[arg(long)]
        classes: PathBuf,
    },
    /// Estimate, refined estimate and brute-force oracle side by side
    Report(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Estimate(_) => "estimate",
            Command::Simulate { .. } => "simulate",
            Command::Minimax { .. } => "minimax",
            Command::Report(_) => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Estimate(c) | Command::Report(c) => c,
            Command::Simulate { common, .. } | Command::Minimax { common, .. } => common,
        }
    }
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn run(cli: &Cli, out: &mut OutputDir) -> Result<(), CliError> {
    let common = cli.command.common();
    common.overrides.check()?;
    let mut doc: ModelDocument = read_json(&common.model)?;
    common.overrides.apply_model(&mut doc);
    let model = doc.build()?;
    let mut config = json!({
        "model": doc,
        "overrides": common.overrides,
        "threads": cli.threads,
    });
    let mut ctx = Context {
        doc: &doc,
        model: &model,
        out,
        cache_dir: common.cache_dir.as_deref(),
    };
    let (result, failure) = match &cli.command {
        Command::Validate(_) => {
            let (result, pass) = commands::validate(&mut ctx)?;
            (result, (!pass).then(|| CliError::Validation("model fails validation, see result.json".into())))
        }
        Command::Estimate(_) => (commands::estimate(&mut ctx)?, None),
        Command::Simulate { emit_paths, .. } => (commands::simulate(&mut ctx, *emit_paths)?, None),
        Command::Report(_) => (commands::report(&mut ctx)?, None),
        Command::Minimax { classes, .. } => {
            let classes: ClassesDocument = read_json(classes)?;
            let mut options = SaddleOptions {
                estimate: doc.estimate_options(),
                trace_every: 10,
                ..SaddleOptions::default()
            };
            common.overrides.apply_saddle(&mut options);
            config["classes"] = json!(classes);
            config["saddle"] = json!(options);
            (commands::minimax(&mut ctx, &classes, &options)?, None)
        }
    };
    let document = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp": timestamp(),
        "csv_schema": CSV_SCHEMA,
        "config": config,
        "result": result,
    });
    out.write_json("result.json", &document)?;
    failure.map_or(Ok(()), Err)
}

fn write_diagnostic(out: &mut OutputDir, command: &str, err: &CliError) {
    let mut value: Value = json!({
        "command": command,
        "timestamp": timestamp(),
        "exit_code": err.exit_code(),
        "kind": err.kind(),
        "message": err.to_string(),
    });
    if let CliError::Core(e) = err {
        value["error"] = json!(format!("{e:?}"));
    }
    if let Err(e) = out.write_json("error.json", &value) {
        eprintln!("error: could not write error.json: {e}");
    }
}

fn setup_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = setup_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    let dir: &Path = &cli.command.common().output_dir;
    let mut out = match OutputDir::create(dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let status = run(&cli, &mut out);
    if let Err(e) = &status {
        eprintln!("error: {e}");
        write_diagnostic(&mut out, cli.command.name(), e);
    }
    for path in out.written() {
        println!("{}", path.display());
    }
    match status {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(e.exit_code()),
    }
}
