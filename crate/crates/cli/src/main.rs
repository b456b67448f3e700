use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use respnet_core::data::Split;
use respnet_core::pipeline::{self, RunConfig, SplitVolumes};
use respnet_core::trainer::write_log_jsonl;
use respnet_core::{load_checkpoint, save_checkpoint};
use respnet_eval::{render_point_metrics, render_summary, to_json_string, ConfusionMatrix, MetricsReport};

const CHECKPOINT_FILE: &str = "model.ckpt";
const TRAIN_LOG_FILE: &str = "training_log.jsonl";
const REPORT_FILE: &str = "report.json";
const SUMMARY_FILE: &str = "summary.txt";

#[derive(Parser, Debug)]
#[command(name = "respnet", version, about = "Synthetic lesion-mask response classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a manifest and split assignment.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model and write the checkpoint and per-epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a split with the validation-selected threshold and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second model compared against `--checkpoint` on the same patients.
        #[arg(long)]
        baseline_checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Print the human-readable summary of a report or a confusion matrix.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; omitted sections take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn generate(common: &Common) -> Result<()> {
    let cfg = common.run_config()?;
    let (manifest, path) = pipeline::generate_dataset(common.out_dir()?, &cfg)?;
    for w in &manifest.split.as_ref().map(|s| s.warnings.clone()).unwrap_or_default() {
        eprintln!("warning: {w}");
    }
    println!("wrote {} volumes, manifest {}", manifest.patients.len(), path.display());
    Ok(())
}

fn train(common: &Common, dataset: &Path) -> Result<()> {
    let cfg = common.run_config()?;
    let data = SplitVolumes::load(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let out = common.out_dir()?;
    let result = pipeline::train_model(&data, &cfg)?;
    write_log_jsonl(out.join(TRAIN_LOG_FILE), &result.log)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &result.model, Some(&cfg.train), Some(result.best_epoch), Some(result.best_val_f1))?;
    println!(
        "trained {} epochs, best epoch {} (val F1 {:.4}), checkpoint {}",
        result.log.len(),
        result.best_epoch,
        result.best_val_f1,
        ckpt.display()
    );
    Ok(())
}

fn evaluate(common: &Common, dataset: &Path, checkpoint: &Path, baseline: Option<&Path>, split: Split) -> Result<()> {
    let cfg = common.run_config()?;
    let data = SplitVolumes::load(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let (model, _) = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let main = pipeline::score_with_threshold(&model_name(checkpoint), &model, &data, split)?;
    let base = match baseline {
        Some(path) => {
            let (b, _) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let mut name = model_name(path);
            if name == main.name {
                name.push_str("-baseline");
            }
            Some(pipeline::score_with_threshold(&name, &b, &data, split)?)
        }
        None => None,
    };
    let report = pipeline::evaluation_report(&main, base.as_ref(), &cfg.report)?;
    let out = common.out_dir()?;
    fs::write(out.join(REPORT_FILE), to_json_string(&report)?)?;
    fs::write(out.join(format!("scores_{}.csv", split.name())), main.cohort.to_csv_string()?)?;
    let summary = render_summary(&report);
    fs::write(out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    Ok(())
}

fn model_name(checkpoint: &Path) -> String {
    checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string())
}

fn report(input: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    let rendered = if value.get("auc").is_some() || value.get("model").is_some() {
        let r: MetricsReport = serde_json::from_value(value).context("input is not a metrics report")?;
        render_summary(&r)
    } else if value.get("tp").is_some() {
        let cm: ConfusionMatrix = serde_json::from_value(value).context("input is not a confusion matrix")?;
        render_point_metrics(&cm)
    } else {
        bail!("{}: expected a metrics report or a confusion matrix {{tp, fp, tn, fn}}", input.display());
    };
    print!("{rendered}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => generate(&common),
        Command::Train { common, dataset } => train(&common, &dataset),
        Command::Evaluate {
            common,
            dataset,
            checkpoint,
            baseline_checkpoint,
            split,
        } => evaluate(&common, &dataset, &checkpoint, baseline_checkpoint.as_deref(), split),
        Command::Report { input } => report(&input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
