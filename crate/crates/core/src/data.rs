//! Datasets: IDX (MNIST, Fashion-MNIST) and CIFAR-10 binary readers, Gaussian
//! input noise, and a seeded synthetic multi-class image set.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Shape3, Tensor4};
use crate::rng::{self, Rng, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Where a dataset's bytes came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    pub sha256: String,
}

impl Provenance {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        Provenance {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

/// Labeled images with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn new(
        images: Tensor4,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
            provenance: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> Shape3 {
        self.images.shape()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps only examples whose label is in `classes`, relabeled to the
    /// label's position in `classes`.
    pub fn restrict(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        let labels = keep
            .iter()
            .map(|&i| {
                classes
                    .iter()
                    .position(|&c| c == self.labels[i])
                    .expect("kept")
            })
            .collect();
        Dataset {
            images: self.images.select(&keep),
            labels,
            num_classes: classes.len(),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    /// Keeps examples whose label is in `classes`, labels unchanged.
    pub fn filter(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        Dataset {
            images: self.images.select(&keep),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| parse_err(path, offset, "truncated header"))
}

/// Parses an IDX image file (`0x00000803`) into `(count, rows, cols, pixels)`.
fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated payload: expected {expected} pixel bytes after offset 16"),
        ));
    }
    if payload.len() > expected {
        return Err(parse_err(
            path,
            16 + expected,
            "trailing bytes after payload",
        ));
    }
    Ok((count, rows, cols, payload.to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated payload: expected {count} label bytes after offset 8"),
        ));
    }
    if payload.len() > count {
        return Err(parse_err(path, 8 + count, "trailing bytes after payload"));
    }
    Ok(payload.to_vec())
}

fn pixels_to_unit(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Reads a pair of IDX files. Class count is one past the largest label,
/// and at least 10.
pub fn read_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let ibytes = read_file(ipath)?;
    let lbytes = read_file(lpath)?;
    let (count, rows, cols, pixels) = parse_idx_images(&ibytes, ipath)?;
    let raw_labels = parse_idx_labels(&lbytes, lpath)?;
    if raw_labels.len() != count {
        return Err(parse_err(
            lpath,
            4,
            format!(
                "{} labels but {} images in {}",
                raw_labels.len(),
                count,
                ipath.display()
            ),
        ));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let tensor = Tensor4::new(count, Shape3::new(1, rows, cols), pixels_to_unit(&pixels))?;
    let mut ds = Dataset::new(tensor, labels, num_classes, split)?;
    ds.provenance = vec![
        Provenance::of(ipath, &ibytes),
        Provenance::of(lpath, &lbytes),
    ];
    Ok(ds)
}

/// IDX encoding of a single-channel dataset: `(image file, label file)`.
/// Pixels are quantized with `round(p · 255)`.
pub fn idx_bytes(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = ds.image_shape();
    if shape.channels != 1 {
        return Err(Error::Config(format!(
            "IDX images must be single-channel, got {shape}"
        )));
    }
    let mut images = Vec::with_capacity(16 + ds.images.data().len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for dim in [ds.len(), shape.height, shape.width] {
        images.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    images.extend(
        ds.images
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let byte =
            u8::try_from(l).map_err(|_| Error::Config(format!("label {l} does not fit a byte")))?;
        labels.push(byte);
    }
    Ok((images, labels))
}

pub fn write_idx(ds: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (ib, lb) = idx_bytes(ds)?;
    fs::write(images.as_ref(), ib).map_err(|e| Error::io(images.as_ref(), e))?;
    fs::write(labels.as_ref(), lb).map_err(|e| Error::io(labels.as_ref(), e))
}

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte and
/// 3072 channel-planar RGB bytes.
pub fn read_cifar10<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let shape = Shape3::new(3, 32, 32);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let whole = bytes.len() - bytes.len() % CIFAR_RECORD;
        if whole != bytes.len() {
            return Err(parse_err(
                path,
                whole,
                format!(
                    "file length {} is not a multiple of {CIFAR_RECORD}",
                    bytes.len()
                ),
            ));
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if record[0] > 9 {
                return Err(parse_err(
                    path,
                    r * CIFAR_RECORD,
                    format!("label {} > 9", record[0]),
                ));
            }
            labels.push(record[0] as usize);
            pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
        }
        provenance.push(Provenance::of(path, &bytes));
    }
    let mut ds = Dataset::new(
        Tensor4::new(labels.len(), shape, pixels)?,
        labels,
        10,
        split,
    )?;
    ds.provenance = provenance;
    Ok(ds)
}

/// Adds i.i.d. `N(0, std²)` noise to every pixel, drawing from `rng`.
/// The result is not clamped.
pub fn add_gaussian_noise(images: &mut Tensor4, std: f64, rng: &mut Rng) {
    if std == 0.0 {
        return;
    }
    for p in images.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *p = (*p as f64 + std * z) as f32;
    }
}

/// Noisy copy of `images` from the seed's noise stream.
pub fn gaussian_noise(images: &Tensor4, std: f64, seed: u64) -> Result<Tensor4> {
    if std.is_nan() || std < 0.0 {
        return Err(Error::Config(format!("noise std must be >= 0, got {std}")));
    }
    let mut out = images.clone();
    add_gaussian_noise(&mut out, std, &mut rng::stream(seed, Stream::Noise, 0));
    Ok(out)
}

/// Parameters of the synthetic oriented-bar dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            per_class: 500,
            side: 16,
            noise_std: 0.1,
        }
    }
}

/// Class `class` of `classes`: a soft bar through the image center at angle
/// `class · π / classes`.
pub fn bar_template(class: usize, classes: usize, side: usize) -> Vec<f32> {
    let theta = class as f64 * std::f64::consts::PI / classes as f64;
    let (s, c) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let width = side as f64 / 12.0;
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 - center, y as f64 - center);
            // Distance to the line through the center with direction (c, s).
            let dist = (dx * s - dy * c).abs();
            out.push((-(dist * dist) / (2.0 * width * width)).exp() as f32);
        }
    }
    out
}

/// Seeded synthetic dataset: `per_class` noisy copies of each class's bar
/// template, classes interleaved, pixels clamped to `[0, 1]`. Train and test
/// splits use independent sample streams.
pub fn synthetic_multimodal(spec: &SyntheticSpec, split: Split, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs >= 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.side < 8 {
        return Err(Error::Config(format!(
            "synthetic image side must be >= 8, got {}",
            spec.side
        )));
    }
    if spec.noise_std.is_nan() || spec.noise_std < 0.0 {
        return Err(Error::Config(format!(
            "noise std must be >= 0, got {}",
            spec.noise_std
        )));
    }
    let templates: Vec<Vec<f32>> = (0..spec.classes)
        .map(|c| bar_template(c, spec.classes, spec.side))
        .collect();
    let index = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = rng::stream(seed, Stream::Data, index);
    let shape = Shape3::new(1, spec.side, spec.side);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * shape.len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        labels.push(class);
        for &t in &templates[class] {
            let noise = if spec.noise_std > 0.0 {
                spec.noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            data.push((t as f64 + noise).clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(Tensor4::new(n, shape, data)?, labels, spec.classes, split)
}

/// A dataset named by kind and location, loadable per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec, seed: u64 },
    Mnist { dir: PathBuf },
    FashionMnist { dir: PathBuf },
    Cifar10 { dir: PathBuf },
}

impl DatasetSource {
    pub fn id(&self) -> &'static str {
        match self {
            DatasetSource::Synthetic { .. } => "synthetic",
            DatasetSource::Mnist { .. } => "mnist",
            DatasetSource::FashionMnist { .. } => "fmnist",
            DatasetSource::Cifar10 { .. } => "cifar10",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec.classes,
            _ => 10,
        }
    }

    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { spec, seed } => synthetic_multimodal(spec, split, *seed),
            DatasetSource::Mnist { dir } | DatasetSource::FashionMnist { dir } => {
                let prefix = match split {
                    Split::Train => "train",
                    Split::Test => "t10k",
                };
                read_idx(
                    dir.join(format!("{prefix}-images-idx3-ubyte")),
                    dir.join(format!("{prefix}-labels-idx1-ubyte")),
                    split,
                )
            }
            DatasetSource::Cifar10 { dir } => {
                let files: Vec<PathBuf> = match split {
                    Split::Train => (1..=5)
                        .map(|i| dir.join(format!("data_batch_{i}.bin")))
                        .collect(),
                    Split::Test => vec![dir.join("test_batch.bin")],
                };
                read_cifar10(&files, split)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        let pixels: Vec<f32> = [0u8, 255, 128, 64, 1, 2, 3, 250]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        Dataset::new(
            Tensor4::new(2, Shape3::new(1, 2, 2), pixels).unwrap(),
            vec![3, 7],
            10,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&fixture(), &ip, &lp).unwrap();
        let ds = read_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(
            ds.images.data()[..4],
            [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]
        );
        assert_eq!(ds.labels, vec![3, 7]);
        let (ib, lb) = idx_bytes(&ds).unwrap();
        assert_eq!(ib, fs::read(&ip).unwrap());
        assert_eq!(lb, fs::read(&lp).unwrap());
        assert_eq!(ds.provenance.len(), 2);
        assert_eq!(ds.provenance[0].sha256.len(), 64);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let (mut ib, lb) = idx_bytes(&fixture()).unwrap();
        fs::write(&lp, &lb).unwrap();

        ib[3] = 0x01;
        fs::write(&ip, &ib).unwrap();
        match read_idx(&ip, &lp, Split::Train) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }

        ib[3] = 0x03;
        fs::write(&ip, &ib[..ib.len() - 1]).unwrap();
        assert!(matches!(
            read_idx(&ip, &lp, Split::Train),
            Err(Error::Parse { offset: 23, .. })
        ));

        fs::write(&ip, &ib).unwrap();
        let mut short_labels = lb.clone();
        short_labels[7] = 1;
        short_labels.pop();
        fs::write(&lp, &short_labels).unwrap();
        assert!(matches!(
            read_idx(&ip, &lp, Split::Train),
            Err(Error::Parse { offset: 4, .. })
        ));

        assert!(matches!(
            read_idx(dir.path().join("missing"), &lp, Split::Train),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rec = vec![255u8; CIFAR_RECORD];
        rec[0] = 7;
        fs::write(&p, &rec).unwrap();
        let ds = read_cifar10(&[&p], Split::Test).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.image_shape(), Shape3::new(3, 32, 32));
        assert!(ds.images.data().iter().all(|&v| v == 1.0));

        fs::write(&p, b"").unwrap();
        assert_eq!(read_cifar10(&[&p], Split::Test).unwrap().len(), 0);

        rec.push(0);
        fs::write(&p, &rec).unwrap();
        assert!(matches!(
            read_cifar10(&[&p], Split::Test),
            Err(Error::Parse { offset: 3073, .. })
        ));
    }

    #[test]
    fn noise_statistics() {
        let zeros = Tensor4::zeros(1000, Shape3::new(1, 10, 100));
        let noisy = gaussian_noise(&zeros, 0.02, 3).unwrap();
        let n = noisy.data().len() as f64;
        let mean = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = noisy
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 3.0 * 0.02 / n.sqrt());
        assert!((var.sqrt() - 0.02).abs() < 0.01 * 0.02);
        assert_eq!(noisy, gaussian_noise(&zeros, 0.02, 3).unwrap());
        assert_eq!(gaussian_noise(&zeros, 0.0, 3).unwrap(), zeros);
    }

    #[test]
    fn synthetic_noiseless_is_templates() {
        let spec = SyntheticSpec {
            classes: 2,
            per_class: 1,
            side: 12,
            noise_std: 0.0,
        };
        let ds = synthetic_multimodal(&spec, Split::Train, 0).unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.images.example(0), bar_template(0, 2, 12).as_slice());
        assert_eq!(ds.images.example(1), bar_template(1, 2, 12).as_slice());
    }

    #[test]
    fn synthetic_classes_are_separable() {
        let spec = SyntheticSpec {
            classes: 4,
            per_class: 50,
            side: 16,
            noise_std: 0.1,
        };
        let ds = synthetic_multimodal(&spec, Split::Test, 99).unwrap();
        assert_eq!(ds.class_counts(), vec![50; 4]);
        assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let templates: Vec<Vec<f32>> = (0..4).map(|c| bar_template(c, 4, 16)).collect();
        let dist = |a: &[f32], b: &[f32]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut pair_dists = Vec::new();
        for a in 0..4 {
            for b in (a + 1)..4 {
                pair_dists.push(dist(&templates[a], &templates[b]));
            }
        }
        let mean = pair_dists.iter().sum::<f64>() / pair_dists.len() as f64;
        assert!(mean >= 10.0 * spec.noise_std, "{mean}");
        let correct = (0..ds.len())
            .filter(|&i| {
                let x = ds.images.example(i);
                let best = (0..4)
                    .min_by(|&a, &b| dist(x, &templates[a]).total_cmp(&dist(x, &templates[b])))
                    .unwrap();
                best == ds.labels[i]
            })
            .count();
        assert!(correct as f64 >= 0.99 * ds.len() as f64);
        assert!(
            synthetic_multimodal(&SyntheticSpec { classes: 1, ..spec }, Split::Train, 0).is_err()
        );
    }

    #[test]
    fn restrict_relabels() {
        let spec = SyntheticSpec {
            classes: 4,
            per_class: 3,
            side: 8,
            noise_std: 0.0,
        };
        let ds = synthetic_multimodal(&spec, Split::Train, 0).unwrap();
        let r = ds.restrict(&[1, 3]);
        assert_eq!(r.num_classes, 2);
        assert_eq!(r.labels, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(r.images.example(1), ds.images.example(3));
        let f = ds.filter(&[2]);
        assert_eq!(f.labels, vec![2, 2, 2]);
    }
}
