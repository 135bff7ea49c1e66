use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use attx::checkpoint::{load_checkpoint, save_checkpoint};
use attx::data::{
    export_csv, generate_synthetic, ingest, read_dataset, write_atomic, write_dataset, ExperimentConfig,
    IngestManifest, SyntheticSpec,
};
use attx::gradcheck::{run_suite, SuiteOptions};
use attx::model::Model;
use attx::signal::{build_dataset, WindowPair};
use attx::train::{ablation_run, evaluate, train, Grid, Metrics};
use attx::{par, rng, Error, Result};

/// Tolerance for `gradcheck`.
const GRAD_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "attx", version, about = "ECG/EDA stress classification with attentive cross-modal connections")]
struct Cli {
    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Run seed; overrides config files. Defaults to $ATTX_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic recordings as CSV columns plus manifest.json.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, resample and window ingested recordings into a dataset file.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config whose [pipeline] table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Forward-backward (zero-phase) filtering.
        #[arg(long)]
        zero_phase: bool,
    },
    /// Train on a whole dataset and save a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Leave-one-subject-out evaluation of every row of a grid.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Grid file, or `type-stage` / `components` for a built-in grid.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient rule.
    Gradcheck {
        /// Only checks whose name starts with this prefix.
        #[arg(long)]
        op: Option<String>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn load_windows(path: &Path) -> Result<Vec<WindowPair>> {
    let w = read_dataset(path)?;
    if w.is_empty() {
        return Err(Error::format(path, "dataset holds no windows"));
    }
    Ok(w)
}

#[derive(Serialize)]
struct MetricsOut<'a> {
    windows: usize,
    metrics: &'a Metrics,
}

fn print_metrics(n: usize, m: &Metrics) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&MetricsOut { windows: n, metrics: m })?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { spec, out } => {
            let mut s = SyntheticSpec::load(&spec)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let records = generate_synthetic(&s)?;
            let m = export_csv(&records, &out, "synthetic")?;
            println!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Preprocess {
            manifest,
            out,
            config,
            zero_phase,
        } => {
            let mut cfg = load_config(config.as_deref(), None)?;
            cfg.pipeline.zero_phase |= zero_phase;
            let m = IngestManifest::load(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let records = ingest(&m, base)?;
            let windows = build_dataset(&records, &cfg.pipeline)?;
            write_dataset(&out, &windows)?;
            println!("wrote {} windows to {}", windows.len(), out.display());
        }
        Command::Train { dataset, config, out } => {
            let cfg = load_config(Some(&config), cli.seed)?;
            let windows = load_windows(&dataset)?;
            let refs: Vec<&WindowPair> = windows.iter().collect();
            let mut model = Model::new(&cfg.model, cfg.train.seed)?;
            let rep = train(&mut model, &refs, &cfg.train)?;
            save_checkpoint(&out, &model)?;
            let history = serde_json::to_string_pretty(&rep)? + "\n";
            let mut hist_path = out.clone().into_os_string();
            hist_path.push(".history.json");
            write_atomic(Path::new(&hist_path), history.as_bytes())?;
            let m = evaluate(&mut model, &refs, cfg.train.batch_size)?;
            info!("saved checkpoint to {}", out.display());
            print_metrics(refs.len(), &m)?;
        }
        Command::Evaluate { dataset, checkpoint } => {
            let windows = load_windows(&dataset)?;
            let refs: Vec<&WindowPair> = windows.iter().collect();
            let mut model = load_checkpoint(&checkpoint)?;
            let m = evaluate(&mut model, &refs, 16)?;
            print_metrics(refs.len(), &m)?;
        }
        Command::Ablate {
            dataset,
            grid,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let grid = Grid::resolve(&grid)?;
            let windows = load_windows(&dataset)?;
            let table = ablation_run(&windows, &grid, &cfg.model, &cfg.train)?;
            table.write_outputs(&out)?;
            print!("{}", table.to_text());
        }
        Command::Gradcheck { op } => {
            let results = run_suite(&SuiteOptions {
                only: op.clone(),
                ..SuiteOptions::default()
            })?;
            if results.is_empty() {
                return Err(Error::Config(format!("no gradient check matches `{}`", op.unwrap_or_default())));
            }
            let mut ok = true;
            for r in &results {
                let pass = r.passed(GRAD_TOL);
                ok &= pass;
                println!(
                    "{:<28} max_rel_err {:.3e}  coords {:>4}  {}",
                    r.name,
                    r.max_rel_err,
                    r.coords,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.seed.is_none() {
        info!("seed {}", rng::default_seed());
    }
    match par::with_threads(cli.threads, || run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
