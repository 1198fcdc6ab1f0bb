//! Novelty scores: the latent round-trip angle and the reconstruction-error
//! baseline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{matrix_to_latents, ModelBundle, Tensor4};

/// Latent norms below this are treated as a broken model.
pub const MIN_LATENT_NORM: f64 = 1e-12;

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Angle,
    Mse,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Angle => "angle",
            ScoreKind::Mse => "mse",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angle" => Ok(ScoreKind::Angle),
            "mse" => Ok(ScoreKind::Mse),
            other => Err(Error::Config(format!(
                "unknown score kind {other:?} (angle|mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub id: usize,
    pub score: f64,
    pub is_novel: Option<bool>,
    pub kind: ScoreKind,
}

/// What scoring needs from a model: an encoder and a decoder.
pub trait Autoencoder {
    /// Latent codes as a `latent_dim × batch` matrix.
    fn encode(&self, images: &Tensor4) -> Result<Matrix>;
    fn decode(&self, latents: &Matrix) -> Result<Tensor4>;
}

impl Autoencoder for ModelBundle {
    fn encode(&self, images: &Tensor4) -> Result<Matrix> {
        ModelBundle::encode(self, images)
    }

    fn decode(&self, latents: &Matrix) -> Result<Tensor4> {
        self.decoder.predict(&matrix_to_latents(latents))
    }
}

/// Angle in radians between two latent vectors, from the clamped cosine.
pub fn angle(z0: &[f64], z1: &[f64]) -> Result<f64> {
    if z0.len() != z1.len() {
        return Err(Error::Shape(format!(
            "latents of length {} and {}",
            z0.len(),
            z1.len()
        )));
    }
    let n0 = z0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n1 = z1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n0.is_nan() || n0 < MIN_LATENT_NORM {
        return Err(Error::DegenerateLatent {
            which: "z0",
            norm: n0,
        });
    }
    if n1.is_nan() || n1 < MIN_LATENT_NORM {
        return Err(Error::DegenerateLatent {
            which: "z1",
            norm: n1,
        });
    }
    let dot: f64 = z0.iter().zip(z1).map(|(a, b)| a * b).sum();
    Ok((dot / (n0 * n1)).clamp(-1.0, 1.0).acos())
}

fn angles<M: Autoencoder + ?Sized>(model: &M, images: &Tensor4) -> Result<Vec<Result<f64>>> {
    let z0 = model.encode(images)?;
    let z1 = model.encode(&model.decode(&z0)?)?;
    Ok((0..images.batch())
        .map(|j| angle(&z0.column(j), &z1.column(j)))
        .collect())
}

fn mse_scores<M: Autoencoder + ?Sized>(model: &M, images: &Tensor4) -> Result<Vec<f64>> {
    let recon = model.decode(&model.encode(images)?)?;
    let n = images.shape().len() as f64;
    Ok((0..images.batch())
        .map(|i| {
            images
                .example(i)
                .iter()
                .zip(recon.example(i))
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Angle between `Enc(x)` and `Enc(Dec(Enc(x)))` for a single image.
pub fn novelty_score<M: Autoencoder + ?Sized>(model: &M, x: &Tensor4) -> Result<f64> {
    if x.batch() != 1 {
        return Err(Error::Shape(format!(
            "expected one image, got {}",
            x.batch()
        )));
    }
    angles(model, x)?.pop().expect("one image")
}

/// Mean squared pixel error between `x` and `Dec(Enc(x))`.
pub fn recon_error_score<M: Autoencoder + ?Sized>(model: &M, x: &Tensor4) -> Result<f64> {
    if x.batch() != 1 {
        return Err(Error::Shape(format!(
            "expected one image, got {}",
            x.batch()
        )));
    }
    Ok(mse_scores(model, x)?[0])
}

/// Scores every image in order. Degenerate latents are collected and reported
/// together with their indices.
pub fn score_batch<M: Autoencoder + ?Sized>(
    model: &M,
    images: &Tensor4,
    is_novel: Option<&[bool]>,
    kind: ScoreKind,
) -> Result<Vec<ScoredExample>> {
    if let Some(flags) = is_novel {
        if flags.len() != images.batch() {
            return Err(Error::Shape(format!(
                "{} novelty flags for {} images",
                flags.len(),
                images.batch()
            )));
        }
    }
    let mut scores = Vec::with_capacity(images.batch());
    let mut degenerate = Vec::new();
    let all: Vec<usize> = (0..images.batch()).collect();
    for chunk in all.chunks(CHUNK) {
        let x = images.select(chunk);
        match kind {
            ScoreKind::Angle => {
                for (r, &i) in angles(model, &x)?.into_iter().zip(chunk) {
                    match r {
                        Ok(s) => scores.push(s),
                        Err(Error::DegenerateLatent { .. }) => {
                            degenerate.push(i);
                            scores.push(f64::NAN);
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            ScoreKind::Mse => scores.extend(mse_scores(model, &x)?),
        }
    }
    if !degenerate.is_empty() {
        return Err(Error::DegenerateBatch {
            indices: degenerate,
        });
    }
    Ok(scores
        .into_iter()
        .enumerate()
        .map(|(id, score)| ScoredExample {
            id,
            score,
            is_novel: is_novel.map(|f| f[id]),
            kind,
        })
        .collect())
}

pub const SCORE_CSV_HEADER: [&str; 4] = ["example_id", "score", "is_novel", "score_kind"];

pub fn write_scores_csv(scores: &[ScoredExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(SCORE_CSV_HEADER).map_err(io)?;
    for s in scores {
        let novel = match s.is_novel {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([
            s.id.to_string(),
            s.score.to_string(),
            novel.to_string(),
            s.kind.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
