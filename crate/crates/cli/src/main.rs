use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::Parser;
use squeezelab_cli::config::{self, ConfigFile, EngineChoice, Experiment, OutputFormat, Overrides};
use squeezelab_cli::error::{HarnessError, Result};
use squeezelab_cli::output::{write_csv, write_json, Meta, SweepDocument};
use squeezelab_cli::{run_experiment, run_validate};

/// Environment variable consulted for the worker count when --threads is
/// not given on the command line.
const THREADS_ENV: &str = "SQUEEZELAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "squeezelab",
    about = "Sweep and self-check harness for squeezed-light interferometer simulations",
    version
)]
struct Cli {
    /// Experiment to run: fig3_bs_sweep, fig4_tmm_sweep, fig5_qcrb_compare,
    /// fig6_min_vs_r, single_point or validate
    experiment: String,

    /// JSON configuration file; command-line flags win over its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed for the trajectory ensembles
    #[arg(long)]
    seed: Option<u64>,

    /// Trajectories per ensemble
    #[arg(long)]
    trajectories: Option<usize>,

    /// Engine selection: tw, pp or both
    #[arg(long)]
    engine: Option<String>,

    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format: csv or json
    #[arg(long)]
    format: Option<String>,

    /// Worker threads; overrides the SQUEEZELAB_THREADS environment variable
    #[arg(long)]
    threads: Option<usize>,

    /// Record real wall times (off by default so reruns are byte-identical)
    #[arg(long)]
    timings: bool,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => {
            let n: usize = raw.trim().parse().map_err(|_| {
                HarnessError::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got '{raw}'"
                ))
            })?;
            if n == 0 {
                return Err(HarnessError::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got 0"
                )));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let file = File::create(p)
                .map_err(|e| HarnessError::io(p.display().to_string(), e))?;
            Ok(Box::new(file))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn run(cli: Cli) -> Result<()> {
    let experiment = Experiment::from_str(&cli.experiment)?;
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        trajectories: cli.trajectories,
        engine: cli
            .engine
            .as_deref()
            .map(EngineChoice::from_str)
            .transpose()?,
        out: cli.out,
        format: cli
            .format
            .as_deref()
            .map(OutputFormat::from_str)
            .transpose()?,
        threads: match cli.threads {
            Some(n) => Some(n),
            None => threads_from_env()?,
        },
        timings: cli.timings,
    };
    let cfg = config::resolve(experiment, file, overrides)?;

    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("cannot size worker pool: {e}")))?;
    }

    let started = Instant::now();
    if experiment == Experiment::Validate {
        let report = run_validate(&cfg);
        let mut out = open_output(&cfg.output_path)?;
        match cfg.output_format {
            OutputFormat::Csv => out
                .write_all(report.render_text().as_bytes())
                .map_err(|e| HarnessError::io(describe_output(&cfg.output_path), e))?,
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut out, &report)
                    .map_err(|e| HarnessError::Config(format!("cannot serialize report: {e}")))?;
                out.write_all(b"\n")
                    .map_err(|e| HarnessError::io(describe_output(&cfg.output_path), e))?;
            }
        }
        report.into_result()?;
        return Ok(());
    }

    let result = run_experiment(&cfg)?;
    let wall = if cfg.timings {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let out = open_output(&cfg.output_path)?;
    match cfg.output_format {
        OutputFormat::Csv => write_csv(out, &result.rows)?,
        OutputFormat::Json => {
            let doc = SweepDocument {
                meta: Meta::new(&cfg, result.references, wall),
                rows: result.rows,
            };
            write_json(out, &doc)?;
        }
    }
    Ok(())
}

fn describe_output(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<stdout>".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("squeezelab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
