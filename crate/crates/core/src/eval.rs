//! One-class-held-out evaluation: train on every other class, score the test
//! split, and summarize with AUROC.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSource, Provenance, Split};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::checkpoint;
use crate::scoring::{self, ScoreKind};
use crate::training::{self, TrainConfig};

/// Area under the ROC curve for "higher score means more novel", computed
/// from mid-ranks (ties count one half).
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let novel = scores.iter().filter(|s| s.1).count();
    let normal = scores.len() - novel;
    if novel == 0 || normal == 0 {
        return Err(Error::UndefinedAuroc { novel, normal });
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Config("AUROC input contains NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));

    // Twice the rank sum of novel examples, kept integral so the result is exact.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]].0 == scores[order[start]].0 {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 share the mid-rank (start + end + 2) / 2.
        let doubled_mid = (start + end + 2) as u128;
        let novel_in_group = order[start..=end].iter().filter(|&&i| scores[i].1).count() as u128;
        doubled_rank_sum += doubled_mid * novel_in_group;
        start = end + 1;
    }
    let n1 = novel as u128;
    let doubled_u = doubled_rank_sum - n1 * (n1 + 1);
    Ok(doubled_u as f64 / (2 * n1 * normal as u128) as f64)
}

/// Mean within-class cosine similarity and mean absolute between-class cosine
/// similarity of latent columns, over all distinct pairs.
pub fn cosine_separation(latents: &Matrix, labels: &[usize]) -> (f64, f64) {
    let cols: Vec<Vec<f64>> = (0..latents.cols())
        .map(|j| {
            let c = latents.column(j);
            let n = c
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            c.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            let cos: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            if labels[a] == labels[b] {
                intra += cos;
                n_intra += 1;
            } else {
                inter += cos.abs();
                n_inter += 1;
            }
        }
    }
    (intra / n_intra.max(1) as f64, inter / n_inter.max(1) as f64)
}

/// One cell of a sweep: which class is held out and how training is seeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub source: DatasetSource,
    pub novelty_class: usize,
    pub normal_classes: Vec<usize>,
    /// Restrict the test split to these classes (all classes when `None`).
    pub test_classes: Option<Vec<usize>>,
    pub seed: u64,
}

impl ProtocolSpec {
    pub fn new(source: DatasetSource, novelty_class: usize, seed: u64) -> Result<Self> {
        let classes = source.num_classes();
        if novelty_class >= classes {
            return Err(Error::Config(format!(
                "novelty class {novelty_class} out of range for {classes} classes"
            )));
        }
        Ok(ProtocolSpec {
            normal_classes: (0..classes).filter(|&c| c != novelty_class).collect(),
            source,
            novelty_class,
            test_classes: None,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.normal_classes.is_empty() {
            return Err(Error::Config("no normal classes".into()));
        }
        if self.normal_classes.contains(&self.novelty_class) {
            return Err(Error::Config(format!(
                "novelty class {} is also listed as normal",
                self.novelty_class
            )));
        }
        Ok(())
    }
}

/// Result of training and scoring one held-out class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub novelty_class: usize,
    pub seed: u64,
    pub auroc: f64,
    pub auroc_mse: f64,
    /// Cosine statistics of normal-class test latents.
    pub intra_cos: f64,
    pub inter_abs_cos: f64,
    pub checkpoint_sha256: String,
    pub provenance: Vec<Provenance>,
}

/// Trains on the normal classes of the train split, then scores every test
/// example with `is_novel = (label == novelty_class)`.
pub fn run_protocol(spec: &ProtocolSpec, train_cfg: &TrainConfig) -> Result<CellResult> {
    spec.validate()?;
    let train_full = spec.source.load(Split::Train)?;
    let train = train_full.restrict(&spec.normal_classes);
    let cfg = TrainConfig {
        seed: spec.seed,
        ..train_cfg.clone()
    };
    let (model, _) = training::train(&train, &cfg)?;

    let mut test = spec.source.load(Split::Test)?;
    if let Some(classes) = &spec.test_classes {
        test = test.filter(classes);
    }
    let flags: Vec<bool> = test
        .labels
        .iter()
        .map(|&l| l == spec.novelty_class)
        .collect();
    let pair = |kind| -> Result<f64> {
        let scored = scoring::score_batch(&model, &test.images, Some(&flags), kind)?;
        auroc(
            &scored
                .iter()
                .map(|s| (s.score, flags[s.id]))
                .collect::<Vec<_>>(),
        )
    };
    let auroc_angle = pair(ScoreKind::Angle)?;
    let auroc_mse = pair(ScoreKind::Mse)?;

    let normal_test = test.filter(&spec.normal_classes);
    let (intra_cos, inter_abs_cos) = if normal_test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        cosine_separation(&model.encode(&normal_test.images)?, &normal_test.labels)
    };

    let digest = Sha256::digest(checkpoint::to_bytes(&model));
    let mut provenance = train_full.provenance.clone();
    provenance.extend(test.provenance.iter().cloned());
    Ok(CellResult {
        novelty_class: spec.novelty_class,
        seed: spec.seed,
        auroc: auroc_angle,
        auroc_mse,
        intra_cos,
        inter_abs_cos,
        checkpoint_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        provenance,
    })
}

/// A sweep cell: the mean over repeats, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub novelty_class: usize,
    pub runs: Vec<CellResult>,
    pub error: Option<String>,
}

impl Cell {
    fn mean(&self, f: impl Fn(&CellResult) -> f64) -> Option<f64> {
        if self.error.is_some() || self.runs.is_empty() {
            return None;
        }
        Some(self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64)
    }

    pub fn auroc(&self) -> Option<f64> {
        self.mean(|r| r.auroc)
    }

    pub fn auroc_mse(&self) -> Option<f64> {
        self.mean(|r| r.auroc_mse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub repeats: usize,
    pub config: TrainConfig,
    pub cells: Vec<Cell>,
}

/// Options for a sweep over held-out classes.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub source: DatasetSource,
    pub novelty_classes: Vec<usize>,
    pub test_classes: Option<Vec<usize>>,
    pub seed: u64,
    pub repeats: usize,
}

/// Runs every cell (in parallel), seeding repeat `r` with `seed + r`. Failed
/// cells are recorded rather than aborting the sweep.
pub fn sweep(spec: &SweepSpec, cfg: &TrainConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if spec.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let cells = spec
        .novelty_classes
        .par_iter()
        .map(|&novelty| {
            let mut runs = Vec::new();
            for r in 0..spec.repeats {
                let result = ProtocolSpec::new(spec.source.clone(), novelty, spec.seed + r as u64)
                    .and_then(|mut p| {
                        p.test_classes = spec.test_classes.clone();
                        run_protocol(&p, cfg)
                    });
                match result {
                    Ok(res) => runs.push(res),
                    Err(e) => {
                        return Cell {
                            novelty_class: novelty,
                            runs,
                            error: Some(e.to_string()),
                        }
                    }
                }
            }
            Cell {
                novelty_class: novelty,
                runs,
                error: None,
            }
        })
        .collect();
    Ok(EvalReport {
        dataset: spec.source.id().to_string(),
        seed: spec.seed,
        repeats: spec.repeats,
        config: cfg.clone(),
        cells,
    })
}

pub const REPORT_CSV_HEADER: [&str; 5] = [
    "novelty_class",
    "auroc",
    "auroc_mse",
    "status",
    "checkpoints",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Mean AUROC over cells that succeeded.
    pub fn mean_auroc(&self) -> Option<f64> {
        let ok: Vec<f64> = self.cells.iter().filter_map(Cell::auroc).collect();
        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }

    pub fn mean_auroc_mse(&self) -> Option<f64> {
        let ok: Vec<f64> = self.cells.iter().filter_map(Cell::auroc_mse).collect();
        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_CSV_HEADER).expect("in-memory write");
        for c in &self.cells {
            let status = c.error.clone().unwrap_or_else(|| "ok".into());
            let ckpts: Vec<&str> = c
                .runs
                .iter()
                .map(|r| r.checkpoint_sha256.as_str())
                .collect();
            w.write_record([
                c.novelty_class.to_string(),
                fmt_opt(c.auroc()),
                fmt_opt(c.auroc_mse()),
                status,
                ckpts.join(" "),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "mean".to_string(),
            fmt_opt(self.mean_auroc()),
            fmt_opt(self.mean_auroc_mse()),
            String::new(),
            String::new(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn table_rows(&self) -> ReportTable {
        ReportTable {
            dataset: self.dataset.clone(),
            columns: self
                .cells
                .iter()
                .map(|c| c.novelty_class.to_string())
                .collect(),
            rows: vec![
                (
                    "OAAE (angle)".into(),
                    self.cells.iter().map(Cell::auroc).collect(),
                    self.mean_auroc(),
                ),
                (
                    "AAE (mse)".into(),
                    self.cells.iter().map(Cell::auroc_mse).collect(),
                    self.mean_auroc_mse(),
                ),
            ],
        }
    }

    pub fn to_table(&self) -> String {
        self.table_rows().render()
    }
}

/// AUROC table: one row per method, one column per held-out class plus Mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub dataset: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>, Option<f64>)>,
}

impl ReportTable {
    /// Reads the CSV written by [`EvalReport::to_csv`].
    pub fn from_csv(dataset: &str, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|e| Error::Config(format!("bad AUROC {s:?}: {e}")))
            }
        };
        let mut columns = Vec::new();
        let (mut angle, mut mse) = (Vec::new(), Vec::new());
        let (mut mean_angle, mut mean_mse) = (None, None);
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Config(format!("report csv: {e}")))?;
            if rec.len() < 3 {
                return Err(Error::Config("report csv: too few columns".into()));
            }
            if &rec[0] == "mean" {
                mean_angle = parse(&rec[1])?;
                mean_mse = parse(&rec[2])?;
            } else {
                columns.push(rec[0].to_string());
                angle.push(parse(&rec[1])?);
                mse.push(parse(&rec[2])?);
            }
        }
        Ok(ReportTable {
            dataset: dataset.to_string(),
            columns,
            rows: vec![
                ("OAAE (angle)".into(), angle, mean_angle),
                ("AAE (mse)".into(), mse, mean_mse),
            ],
        })
    }

    pub fn render(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.0.len())
            .max()
            .unwrap_or(0)
            .max(self.dataset.len());
        let col_w = self
            .columns
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", self.dataset);
        for c in &self.columns {
            let _ = write!(out, "  {c:>col_w$}");
        }
        let _ = writeln!(out, "  {:>col_w$}", "Mean");
        let rule = label_w + (self.columns.len() + 1) * (col_w + 2);
        let _ = writeln!(out, "{}", "-".repeat(rule));
        let cell = |v: &Option<f64>| v.map_or_else(|| "FAIL".to_string(), |x| format!("{x:.3}"));
        for (name, values, mean) in &self.rows {
            let _ = write!(out, "{name:<label_w$}");
            for v in values {
                let _ = write!(out, "  {:>col_w$}", cell(v));
            }
            let _ = writeln!(out, "  {:>col_w$}", cell(mean));
        }
        out
    }
}
