//! Command-line interface: `train`, `score`, `eval`, `check` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::check;
use crate::data::{Dataset, DatasetSource, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, ReportTable, SweepSpec};
use crate::nn::checkpoint;
use crate::scoring::{self, ScoreKind};
use crate::training::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "oaae",
    version,
    about = "Orthogonalized adversarial autoencoders for novelty detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the normal classes and write a checkpoint.
    Train(TrainArgs),
    /// Score images with a trained checkpoint.
    Score(ScoreArgs),
    /// Train and score one or all held-out classes.
    Eval(EvalArgs),
    /// Run the numerical self-test.
    Check(CheckArgs),
    /// Render an evaluation CSV as a text table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    Fmnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub dataset: DatasetKind,
    /// Directory holding the dataset files.
    #[arg(long, env = "OAAE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub synthetic_classes: usize,
    #[arg(long, default_value_t = 500)]
    pub synthetic_per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub synthetic_side: usize,
    #[arg(long, default_value_t = 0.1)]
    pub synthetic_noise: f64,
    /// Seed of the synthetic data draw.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DatasetArgs {
    pub fn source(&self) -> Result<DatasetSource> {
        let dir = || {
            self.data_dir.clone().ok_or_else(|| {
                Error::Config("--data-dir (or OAAE_DATA_DIR) is required for this dataset".into())
            })
        };
        Ok(match self.dataset {
            DatasetKind::Synthetic => DatasetSource::Synthetic {
                spec: SyntheticSpec {
                    classes: self.synthetic_classes,
                    per_class: self.synthetic_per_class,
                    side: self.synthetic_side,
                    noise_std: self.synthetic_noise,
                },
                seed: self.data_seed,
            },
            DatasetKind::Mnist => DatasetSource::Mnist { dir: dir()? },
            DatasetKind::Fmnist => DatasetSource::FashionMnist { dir: dir()? },
            DatasetKind::Cifar10 => DatasetSource::Cifar10 { dir: dir()? },
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Held-out class excluded from training; all classes are used if absent.
    #[arg(long)]
    pub novelty_class: Option<usize>,
    /// Checkpoint path.
    #[arg(long, default_value = "model.oaae")]
    pub out: PathBuf,
    /// Per-epoch loss log; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Also write the checkpoint after every epoch.
    #[arg(long)]
    pub checkpoint_every_epoch: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Only score these classes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub test_classes: Option<Vec<usize>>,
    /// Fills the `is_novel` column with `label == class`.
    #[arg(long)]
    pub novelty_class: Option<usize>,
    #[arg(long, default_value = "angle")]
    pub kind: ScoreKind,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(
        long,
        required_unless_present = "all_classes",
        conflicts_with = "all_classes"
    )]
    pub novelty_class: Option<usize>,
    /// Hold out each class in turn.
    #[arg(long)]
    pub all_classes: bool,
    /// Restrict the test split to these classes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub test_classes: Option<Vec<usize>>,
    /// Runs per cell, seeded `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// CSV written by `eval`.
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset label for the table header.
    #[arg(long, default_value = "")]
    pub dataset: String,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Check(a) => cmd_check(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn training_set(source: &DatasetSource, novelty: Option<usize>) -> Result<Dataset> {
    let full = source.load(Split::Train)?;
    Ok(match novelty {
        Some(n) if n >= full.num_classes => {
            return Err(Error::Config(format!(
                "novelty class {n} out of range for {} classes",
                full.num_classes
            )))
        }
        Some(n) => full.restrict(
            &(0..full.num_classes)
                .filter(|&c| c != n)
                .collect::<Vec<_>>(),
        ),
        None => full,
    })
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let dataset = training_set(&a.data.source()?, a.novelty_class)?;
    let (_, report) =
        training::train_with_checkpoints(&dataset, &cfg, Some(&a.out), a.checkpoint_every_epoch)?;
    let csv = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| a.out.with_extension("csv"));
    report.write_csv(&csv)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} epochs on {} examples: l_recon {:.5} l_ole {:.5}",
            report.epochs.len(),
            dataset.len(),
            last.l_recon,
            last.l_ole
        );
    }
    println!("checkpoint {}", a.out.display());
    println!("loss log {}", csv.display());
    Ok(0)
}

pub fn cmd_score(a: &ScoreArgs) -> Result<i32> {
    let model = checkpoint::load(&a.checkpoint)?;
    let mut data = a.data.source()?.load(split_of(a.split))?;
    if let Some(classes) = &a.test_classes {
        data = data.filter(classes);
    }
    if data.image_shape() != model.image_shape {
        return Err(Error::Shape(format!(
            "checkpoint {} expects images of shape {}, dataset has {}",
            a.checkpoint.display(),
            model.image_shape,
            data.image_shape()
        )));
    }
    let flags: Option<Vec<bool>> = a
        .novelty_class
        .map(|n| data.labels.iter().map(|&l| l == n).collect());
    let scores = scoring::score_batch(&model, &data.images, flags.as_deref(), a.kind)?;
    scoring::write_scores_csv(&scores, &a.out)?;
    println!(
        "scored {} images ({}) -> {}",
        scores.len(),
        a.kind,
        a.out.display()
    );
    Ok(0)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let source = a.data.source()?;
    let novelty_classes = if a.all_classes {
        (0..source.num_classes()).collect()
    } else {
        vec![a.novelty_class.expect("clap requires one of the two")]
    };
    let spec = SweepSpec {
        source,
        novelty_classes,
        test_classes: a.test_classes.clone(),
        seed: cfg.seed,
        repeats: a.repeats,
    };
    let report = eval::sweep(&spec, &cfg)?;
    report.write_csv(&a.out)?;
    print!("{}", report.to_table());
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| {
            c.error
                .as_ref()
                .map(|e| format!("class {}: {e}", c.novelty_class))
        })
        .collect();
    if failed.is_empty() {
        Ok(0)
    } else {
        for f in &failed {
            eprintln!("cell failed: {f}");
        }
        Ok(4)
    }
}

pub fn cmd_check(a: &CheckArgs) -> Result<i32> {
    let outcomes = check::run_checks(a.seed);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(4)
    }
}

pub fn cmd_report(a: &ReportArgs) -> Result<i32> {
    let text = read_text(&a.input)?;
    print!("{}", ReportTable::from_csv(&a.dataset, &text)?.render());
    Ok(0)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
