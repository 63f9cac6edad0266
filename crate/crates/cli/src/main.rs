mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::{Check, Checks, Status};
use config::{ExperimentConfig, Format};
use output::{sha256_hex, unix_now, FileEntry, Writer, SCHEMA_VERSION};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "lilkit", version, about = "Ergodicity, coupling and LIL experiments for Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the model conditions and drift constants.
    CheckConditions(Common),
    /// Coupling diagnostics and the coupled decay curve.
    Coupling(Common),
    /// Fortet-Mourier decay fit and invariant-measure check.
    Ergodicity(Common),
    /// Martingale, variance and Strassen-path analysis.
    Lil(Common),
    /// Write one trajectory.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides run.workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides output.format.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::CheckConditions(c) => ("check-conditions", c),
            Command::Coupling(c) => ("coupling", c),
            Command::Ergodicity(c) => ("ergodicity", c),
            Command::Lil(c) => ("lil", c),
            Command::Simulate(c) => ("simulate", c),
        }
    }
}

#[derive(Serialize)]
struct Summary {
    status: Status,
    checks: Vec<Check>,
    error: Option<String>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema_version: &'static str,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    workers: usize,
    config_hash: String,
    config: &'a ExperimentConfig,
    started_unix: f64,
    finished_unix: f64,
    files: Vec<FileEntry>,
    summary: Summary,
}

fn resolve(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = config::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    if let Some(w) = common.workers {
        anyhow::ensure!(w >= 1, "--workers must be >= 1");
        cfg.run.workers = w;
    }
    if let Some(f) = common.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn error_status(e: &anyhow::Error) -> Status {
    match e.downcast_ref::<lilkit::Error>() {
        Some(lilkit::Error::Inconclusive(_) | lilkit::Error::NonConvergence(_)) => Status::Inconclusive,
        _ => Status::Fail,
    }
}

fn run(name: &str, command: &Command, cfg: &ExperimentConfig) -> anyhow::Result<Status> {
    let started = unix_now();
    let mut writer = Writer::new(&cfg.output.dir, cfg.output.format)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.workers).build()?;
    let result = pool.install(|| match command {
        Command::CheckConditions(_) => commands::check_conditions(cfg, &mut writer),
        Command::Coupling(_) => commands::coupling(cfg, &mut writer),
        Command::Ergodicity(_) => commands::ergodicity(cfg, &mut writer),
        Command::Lil(_) => commands::lil(cfg, &mut writer),
        Command::Simulate(_) => commands::simulate_cmd(cfg, &mut writer),
    });
    let (summary, status) = match result {
        Ok(checks) => {
            let s = checks.overall();
            (Summary { status: s, checks: checks.0, error: None }, s)
        }
        Err(e) => {
            eprintln!("lilkit {name}: {e:#}");
            let s = error_status(&e);
            (Summary { status: s, checks: Checks::default().0, error: Some(format!("{e:#}")) }, s)
        }
    };
    // the hash covers what determines the results, not where they go
    let mut hashed = cfg.clone();
    hashed.run.workers = 1;
    hashed.output.dir = PathBuf::new();
    let config_hash = sha256_hex(&output::to_json(&hashed)?);
    writer.finish(|files| RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: "lilkit",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        config_hash,
        config: cfg,
        started_unix: started,
        finished_unix: unix_now(),
        files,
        summary,
    })?;
    Ok(status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.parts();
    let cfg = match resolve(common).and_then(|c| {
        let needs_gene = matches!(cli.command, Command::CheckConditions(_) | Command::Coupling(_));
        anyhow::ensure!(!needs_gene || c.model.is_gene(), "{name} needs a gene model (model.kind = gene_reference or gene)");
        Ok(c)
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("lilkit: configuration error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(name, &cli.command, &cfg) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(EXIT_FAIL),
        Ok(Status::Inconclusive) => ExitCode::from(EXIT_INCONCLUSIVE),
        Err(e) => {
            eprintln!("lilkit {name}: {e:#}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}
