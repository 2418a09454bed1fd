use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hossnet_harness::pipeline::{evaluate_run, predict_run};
use hossnet_harness::report::compare_runs;
use hossnet_harness::train::train_from_config;
use hossnet_harness::{Dataset, ExperimentConfig, Preset, Protocol, Scenario, Variant};

// glibc malloc returns the large per-step tensors to the OS and page-faults them back in every step
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "hossnet", version, about = "Crack-field reconstruction surrogate: data, training, evaluation and reports")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base settings that the config file and flags overlay.
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
    /// TOML file with sections mirroring the experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    #[arg(long, global = true)]
    scenario: Option<Scenario>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Clamp predictions so damage never decreases in time.
    #[arg(long, global = true)]
    positive_direction: Option<bool>,
    /// Dataset directory (default: $HOSSNET_DATA_DIR, then ./data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Directory holding run directories.
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark into the dataset directory.
    GenerateData {
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train one variant and write its checkpoint, history and manifest.
    Train,
    /// Evaluate a trained run on its test split and write the report.
    Evaluate {
        /// Run directory or manifest.json.
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a run's test-set predictions as dataset sequences.
    Predict {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare evaluated runs; each argument is a run directory with an `eval` report or a report directory.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(c.preset, p)?,
        None => ExperimentConfig::preset(c.preset),
    };
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(p) = c.protocol {
        cfg.protocol = p;
    }
    if let Some(s) = c.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = c.positive_direction {
        cfg.positive_direction = p;
    }
    if let Some(d) = &c.data_dir {
        cfg.data.root = Some(d.clone());
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(r) = &c.runs_dir {
        cfg.output_dir = r.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData { force } => {
            let cfg = config(&cli.common)?;
            let dir = cfg.data.resolved_root();
            if force && dir.exists() {
                std::fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
            }
            let ds = Dataset::load_or_generate(&dir, &cfg.data)?;
            println!("{} samples × {} steps in {} (sha256 {})", ds.damage.len(), ds.n_steps(), dir.display(), ds.hash());
        }
        Command::Train => {
            let cfg = config(&cli.common)?;
            let (outcome, manifest) = train_from_config(&cfg)?;
            println!(
                "{}: {} epochs, {} optimizer steps, best epoch {} (score {:.6}), {:.1}s -> {}",
                manifest.run_name,
                manifest.epochs_run,
                manifest.optimizer_steps,
                outcome.best_epoch,
                outcome.best_score,
                manifest.wall_clock_seconds,
                cfg.run_dir().display()
            );
        }
        Command::Evaluate { run, out } => {
            let (evals, files) = evaluate_run(&run, out.as_deref(), cli.common.positive_direction)?;
            let rows = std::fs::read_to_string(&files.summary)?;
            print!("{rows}");
            println!("{} samples evaluated; report in {}", evals.len(), files.metrics.parent().unwrap_or(&files.metrics).display());
        }
        Command::Predict { run, out } => {
            let written = predict_run(&run, &out, cli.common.positive_direction)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Report { runs, out } => {
            let dirs = runs
                .iter()
                .map(|r| {
                    let d = if r.join("summary.csv").exists() { r.clone() } else { r.join("eval") };
                    let name = r.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| r.display().to_string());
                    (name, d)
                })
                .collect::<Vec<_>>();
            let rows = compare_runs(&dirs, &out)?;
            println!("{:<48} {:>10} {:>10} {:>10}", "run", "rmse", "ssim", "wfe");
            for r in rows {
                println!("{:<48} {:>10.5} {:>10.5} {:>10.5}", r.run, r.rmse, r.ssim, r.wfe);
            }
            println!("comparison written to {}", out.display());
        }
    }
    Ok(())
}
