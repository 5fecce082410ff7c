use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use forgeloc::datagen::DataGenConfig;
use forgeloc::dataset::{load_split, read_manifest, write_dataset, LabeledImage, Split, SplitPlan};
use forgeloc::metrics::Aggregation;
use forgeloc::pipeline::run::SUMMARY;
use forgeloc::pipeline::{self, Checkpoint, RunDir, TrainConfig, Trainer};
use forgeloc::theory::run_theory_checks;
use serde_json::json;

#[derive(Parser)]
#[command(name = "forgeloc", version, about = "Image forgery localization on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    Datagen(DatagenArgs),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train the four loss ablations and compare them on the test split.
    Ablate(AblateArgs),
    /// Score a checkpoint under JPEG compression and Gaussian blur.
    Robustness(RobustnessArgs),
    /// Run the information-theory identity sweep and print a JSON report.
    TheoryCheck(TheoryArgs),
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    val: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 0.5)]
    splice_prob: f64,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    runs: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Defaults to the checkpoint's configured threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Score all pixels together instead of averaging per image.
    #[arg(long)]
    pooled: bool,
    #[arg(long, default_value = "run")]
    runs: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    pooled: bool,
    #[arg(long, default_value = "run")]
    runs: PathBuf,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_delimiter = ',', default_value = "90,70,50")]
    jpeg: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    blur: Vec<usize>,
    #[arg(long)]
    pooled: bool,
    #[arg(long, default_value = "run")]
    runs: PathBuf,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    max_counterexamples: usize,
}

fn aggregation(pooled: bool) -> Aggregation {
    if pooled {
        Aggregation::Pooled
    } else {
        Aggregation::PerImage
    }
}

fn load_nonempty(root: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let data = load_split(root, split).with_context(|| format!("loading {} split of {}", split.as_str(), root.display()))?;
    if data.is_empty() {
        bail!("{} split of {} is empty", split.as_str(), root.display());
    }
    Ok(data)
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let cfg = DataGenConfig {
        splice_prob: a.splice_prob,
        ..DataGenConfig::default().with_size(a.size, a.size)
    };
    let plan = SplitPlan {
        train: a.train,
        val: a.val,
        test: a.test,
        seed_offset: a.seed_offset,
    };
    let records = write_dataset(&a.out, &cfg, &plan)?;
    println!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    read_manifest(&a.data)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = match &resume {
        Some(c) => c.config.clone(),
        None => a.config.load()?,
    };
    let data = load_nonempty(&a.data, Split::Train)?;
    let run = RunDir::create(&a.runs)?;
    let out = pipeline::train(&cfg, &data, resume.as_ref(), Some(&run))?;
    let t = &out.trainer;
    let held_out = [Split::Val, Split::Test]
        .into_iter()
        .map(|s| load_split(&a.data, s).map(|d| (s, d)))
        .find(|r| r.as_ref().map_or(true, |(_, d)| !d.is_empty()))
        .transpose()?;
    let mut summary = json!({
        "command": "train",
        "data": a.data,
        "epochs": t.epoch,
        "steps": t.step,
        "seconds": out.seconds,
        "gamma": t.gamma(),
        "final_losses": out.log.last().map(|l| l.losses),
    });
    if let Some((split, d)) = held_out {
        let ev = pipeline::evaluate(&t.model, &t.store, &d, cfg.threshold, Aggregation::PerImage, cfg.eval_batch_size)?;
        let ids: Vec<String> = d.iter().map(|x| x.id.clone()).collect();
        pipeline::write_predictions(&run.join("predictions"), &ids, &ev.predictions)?;
        run.write_json("report.json", &ev.report)?;
        summary["eval_split"] = json!(split.as_str());
        summary["f1"] = json!(ev.report.f1);
        summary["auc"] = json!(ev.report.auc);
    }
    run.write_json(SUMMARY, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("run directory: {}", run.path().display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Trainer::from_checkpoint(&ckpt)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let t = load_checkpoint(&a.ckpt)?;
    let split: Split = a.split.parse()?;
    let data = load_nonempty(&a.data, split)?;
    let threshold = a.threshold.unwrap_or(t.config.threshold);
    let ev = pipeline::evaluate(&t.model, &t.store, &data, threshold, aggregation(a.pooled), t.config.eval_batch_size)?;
    let run = RunDir::create(&a.runs)?;
    run.write_config(&t.config)?;
    let ids: Vec<String> = data.iter().map(|x| x.id.clone()).collect();
    pipeline::write_predictions(&run.join("predictions"), &ids, &ev.predictions)?;
    run.write_json("report.json", &ev.report)?;
    let summary = json!({
        "command": "eval",
        "checkpoint": a.ckpt,
        "split": split.as_str(),
        "threshold": threshold,
        "aggregation": ev.report.aggregation,
        "images": ev.report.images,
        "f1": ev.report.f1,
        "auc": ev.report.auc,
    });
    run.write_json(SUMMARY, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let train_data = load_nonempty(&a.data, Split::Train)?;
    let test_data = load_nonempty(&a.data, Split::Test)?;
    let run = RunDir::create(&a.runs)?;
    run.write_config(&cfg)?;
    let table = pipeline::ablate(&cfg, &train_data, &test_data, aggregation(a.pooled), Some(&run))?;
    run.write_json(SUMMARY, &json!({ "command": "ablate", "rows": table.rows }))?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn robustness(a: RobustnessArgs) -> Result<()> {
    let t = load_checkpoint(&a.ckpt)?;
    let split: Split = a.split.parse()?;
    let data = load_nonempty(&a.data, split)?;
    let curves = pipeline::robustness(
        &t.model,
        &t.store,
        &data,
        &a.jpeg,
        &a.blur,
        t.config.threshold,
        aggregation(a.pooled),
        t.config.eval_batch_size,
    )?;
    let run = RunDir::create(&a.runs)?;
    run.write_config(&t.config)?;
    for c in &curves {
        run.write_text(&format!("robustness-{}.csv", c.family), &c.to_csv())?;
        c.render().save(run.join(&format!("robustness-{}.png", c.family)))?;
        print!("{}", c.to_csv());
    }
    run.write_json(SUMMARY, &json!({ "command": "robustness", "checkpoint": a.ckpt, "curves": curves }))?;
    Ok(())
}

fn theory_check(a: TheoryArgs) -> Result<bool> {
    let report = run_theory_checks(a.instances, a.seed, a.max_counterexamples)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.passed)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Robustness(a) => robustness(a),
        Command::TheoryCheck(a) => {
            if !theory_check(a)? {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}
