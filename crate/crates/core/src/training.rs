//! Alternating adversarial training.
//!
//! Every iteration updates both discriminators; every `generator_period`-th
//! iteration of an epoch (counting from 0) additionally updates the encoder,
//! decoder and classifier on the weighted sum of reconstruction, adversarial,
//! OLE and classification losses.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, checkpoint, latents_to_matrix, losses, matrix_to_latents, AdamState, ArchConfig,
    ModelBundle, Role, Shape3, Tensor4,
};
use crate::ole::{self, LabeledLatentBatch, OleConfig};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon: f64,
    pub adv_enc: f64,
    pub adv_dec: f64,
    pub ole: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            adv_enc: 0.1,
            adv_dec: 0.1,
            ole: 0.1,
            cls: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_std: f64,
    pub generator_period: usize,
    pub weights: LossWeights,
    pub ole: OleConfig,
    pub arch: ArchConfig,
    /// Clamp noisy training inputs back into `[0, 1]`.
    pub clamp_noisy_inputs: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 4e-4,
            noise_std: 0.02,
            generator_period: 5,
            weights: LossWeights::default(),
            ole: OleConfig::default(),
            arch: ArchConfig::default(),
            clamp_noisy_inputs: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.generator_period == 0 {
            return Err(Error::Config(
                "epochs, batch_size and generator_period must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        let w = &self.weights;
        for (name, v) in [
            ("recon", w.recon),
            ("adv_enc", w.adv_enc),
            ("adv_dec", w.adv_dec),
            ("ole", w.ole),
            ("cls", w.cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be >= 0, got {v}"
                )));
            }
        }
        self.ole.validate()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscriminatorLosses {
    pub latent: f64,
    pub image: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorLosses {
    pub recon: f64,
    pub enc: f64,
    pub dec: f64,
    pub ole: f64,
    pub cls: f64,
    pub total: f64,
}

impl GeneratorLosses {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.recon * self.recon
            + w.adv_enc * self.enc
            + w.adv_dec * self.dec
            + w.ole * self.ole
            + w.cls * self.cls
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_latent: f64,
    pub l_image: f64,
    pub l_recon: f64,
    pub l_enc: f64,
    pub l_dec: f64,
    pub l_ole: f64,
    pub l_cls: f64,
    pub discriminator_steps: usize,
    pub generator_steps: usize,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

pub const LOSS_CSV_HEADER: [&str; 8] = [
    "epoch", "l_latent", "l_image", "l_recon", "l_enc", "l_dec", "l_ole", "l_cls",
];

impl TrainReport {
    pub fn discriminator_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.discriminator_steps).sum()
    }

    pub fn generator_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.generator_steps).sum()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(LOSS_CSV_HEADER).map_err(io)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.l_latent.to_string(),
                e.l_image.to_string(),
                e.l_recon.to_string(),
                e.l_enc.to_string(),
                e.l_dec.to_string(),
                e.l_ole.to_string(),
                e.l_cls.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Model, optimizer state and random streams for one training run.
pub struct Trainer {
    pub model: ModelBundle,
    pub cfg: TrainConfig,
    adam: Vec<AdamState>,
    shuffle_rng: Rng,
    noise_rng: Rng,
    sampling_rng: Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(image_shape: Shape3, num_classes: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ModelBundle::new(image_shape, num_classes, cfg.arch.clone(), cfg.seed)?;
        Ok(Trainer::from_model(model, cfg))
    }

    pub fn from_model(model: ModelBundle, cfg: TrainConfig) -> Self {
        let adam = Role::ALL
            .iter()
            .map(|&r| AdamState::new(model.network(r).param_count(), cfg.learning_rate))
            .collect();
        Trainer {
            adam,
            shuffle_rng: rng::stream(cfg.seed, Stream::Shuffle, 0),
            noise_rng: rng::stream(cfg.seed, Stream::Noise, 0),
            sampling_rng: rng::stream(cfg.seed, Stream::Sampling, 0),
            model,
            cfg,
            epoch: 0,
        }
    }

    fn update(&mut self, role: Role, grads: &[f32]) -> Result<()> {
        let idx = Role::ALL
            .iter()
            .position(|&r| r == role)
            .expect("known role");
        let net = self.model.network_mut(role);
        adam_step(net.params_mut(), grads, &mut self.adam[idx])
    }

    fn noisy(&mut self, x: &Tensor4) -> Tensor4 {
        let mut out = x.clone();
        data::add_gaussian_noise(&mut out, self.cfg.noise_std, &mut self.noise_rng);
        if self.cfg.clamp_noisy_inputs {
            out.data_mut()
                .iter_mut()
                .for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        out
    }

    fn prior_sample(&mut self, batch: usize) -> Tensor4 {
        let d = self.model.latent_dim();
        let data = (0..batch * d)
            .map(|_| self.sampling_rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        Tensor4::new(batch, Shape3::flat(d), data).expect("sizes agree")
    }

    /// Updates both discriminators against real/prior samples and the
    /// current encoder/decoder outputs. Generator-side parameters are untouched.
    pub fn discriminator_step(&mut self, x: &Tensor4) -> Result<DiscriminatorLosses> {
        let m = x.batch();
        let x_noisy = self.noisy(x);
        let z = self.prior_sample(m);
        let encoded = self.model.encoder.predict(&x_noisy)?;
        let generated = self.model.decoder.predict(&z)?;

        let dl = &self.model.latent_discriminator;
        let real = dl.forward(&z)?;
        let fake = dl.forward(&encoded)?;
        let (l_real, g_real) = losses::bce_logit(real.output(), 1.0)?;
        let (l_fake, g_fake) = losses::bce_logit(fake.output(), 0.0)?;
        let (mut grads, _) = dl.backward(&real, &g_real)?;
        add_into(&mut grads, &dl.backward(&fake, &g_fake)?.0);
        self.update(Role::LatentDiscriminator, &grads)?;

        let di = &self.model.image_discriminator;
        let real_img = di.forward(x)?;
        let fake_img = di.forward(&generated)?;
        let (li_real, gi_real) = losses::bce_logit(real_img.output(), 1.0)?;
        let (li_fake, gi_fake) = losses::bce_logit(fake_img.output(), 0.0)?;
        let (mut grads, _) = di.backward(&real_img, &gi_real)?;
        add_into(&mut grads, &di.backward(&fake_img, &gi_fake)?.0);
        self.update(Role::ImageDiscriminator, &grads)?;

        Ok(DiscriminatorLosses {
            latent: l_real + l_fake,
            image: li_real + li_fake,
        })
    }

    /// Updates encoder, decoder and classifier. The OLE descent direction is
    /// injected as a gradient on the encoder output alongside the other
    /// latent-space gradients. Discriminator parameters are untouched.
    pub fn generator_step(&mut self, x: &Tensor4, labels: &[usize]) -> Result<GeneratorLosses> {
        let m = x.batch();
        let w = self.cfg.weights;
        let x_noisy = self.noisy(x);
        let model = &self.model;

        let enc = model.encoder.forward(&x_noisy)?;
        let latents = enc.output();

        // Reconstruction through decoder and encoder.
        let dec = model.decoder.forward(latents)?;
        let (l_recon, mut g_recon) = losses::squared_error(dec.output(), x)?;
        g_recon.scale(w.recon as f32);
        let (mut dec_grads, mut g_latent) = model.decoder.backward(&dec, &g_recon)?;

        // Encoder fools the latent discriminator.
        let dl = model.latent_discriminator.forward(latents)?;
        let (l_enc, mut g_enc) = losses::bce_logit(dl.output(), 1.0)?;
        g_enc.scale(w.adv_enc as f32);
        g_latent.add_assign(&model.latent_discriminator.backward(&dl, &g_enc)?.1)?;

        // OLE on the labeled latent batch.
        let batch = LabeledLatentBatch::new(
            latents_to_matrix(latents),
            labels.to_vec(),
            model.num_classes,
        )?;
        let (l_ole, g_ole) = ole::ole_loss_and_grad(&batch, &self.cfg.ole)?;
        let mut g_ole = matrix_to_latents(&g_ole);
        g_ole.scale(w.ole as f32);
        g_latent.add_assign(&g_ole)?;

        // Classifier on the latents.
        let cls = model.classifier.forward(latents)?;
        let (l_cls, mut g_cls) = losses::cross_entropy(cls.output(), labels)?;
        g_cls.scale(w.cls as f32);
        let (cls_grads, g_cls_latent) = model.classifier.backward(&cls, &g_cls)?;
        g_latent.add_assign(&g_cls_latent)?;

        let (enc_grads, _) = model.encoder.backward(&enc, &g_latent)?;

        // Decoder fools the image discriminator on prior samples.
        let z = self.prior_sample(m);
        let model = &self.model;
        let gen = model.decoder.forward(&z)?;
        let di = model.image_discriminator.forward(gen.output())?;
        let (l_dec, mut g_dec) = losses::bce_logit(di.output(), 1.0)?;
        g_dec.scale(w.adv_dec as f32);
        let (_, g_img) = model.image_discriminator.backward(&di, &g_dec)?;
        add_into(&mut dec_grads, &model.decoder.backward(&gen, &g_img)?.0);

        self.update(Role::Encoder, &enc_grads)?;
        self.update(Role::Decoder, &dec_grads)?;
        self.update(Role::Classifier, &cls_grads)?;

        let mut out = GeneratorLosses {
            recon: l_recon,
            enc: l_enc,
            dec: l_dec,
            ole: l_ole,
            cls: l_cls,
            total: 0.0,
        };
        out.total = out.weighted_total(&w);
        Ok(out)
    }

    /// One pass over `dataset` in a freshly shuffled order.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochRecord> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("training set has no examples".into()));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let mut disc_sum = DiscriminatorLosses::default();
        let mut gen_sum = GeneratorLosses::default();
        let (mut n_disc, mut n_gen) = (0, 0);
        for (iteration, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let x = dataset.images.select(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();

            let d = self.discriminator_step(&x)?;
            self.ensure_finite(iteration, &[("l_latent", d.latent), ("l_image", d.image)])?;
            disc_sum.latent += d.latent;
            disc_sum.image += d.image;
            n_disc += 1;

            if iteration % self.cfg.generator_period == 0 {
                let g = self.generator_step(&x, &labels)?;
                self.ensure_finite(
                    iteration,
                    &[
                        ("l_recon", g.recon),
                        ("l_enc", g.enc),
                        ("l_dec", g.dec),
                        ("l_ole", g.ole),
                        ("l_cls", g.cls),
                    ],
                )?;
                gen_sum.recon += g.recon;
                gen_sum.enc += g.enc;
                gen_sum.dec += g.dec;
                gen_sum.ole += g.ole;
                gen_sum.cls += g.cls;
                n_gen += 1;
            }
        }
        let (nd, ng) = (n_disc as f64, n_gen as f64);
        let record = EpochRecord {
            epoch: self.epoch,
            l_latent: disc_sum.latent / nd,
            l_image: disc_sum.image / nd,
            l_recon: gen_sum.recon / ng,
            l_enc: gen_sum.enc / ng,
            l_dec: gen_sum.dec / ng,
            l_ole: gen_sum.ole / ng,
            l_cls: gen_sum.cls / ng,
            discriminator_steps: n_disc,
            generator_steps: n_gen,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(record)
    }

    fn ensure_finite(&self, iteration: usize, terms: &[(&'static str, f64)]) -> Result<()> {
        for &(term, value) in terms {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch,
                    iteration,
                    term,
                    value,
                });
            }
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f32], other: &[f32]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Trains a fresh model on `dataset` (normal classes only, labels `0..C`).
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(ModelBundle, TrainReport)> {
    train_with_checkpoints(dataset, cfg, None, false)
}

/// Like [`train`], writing the final model to `checkpoint` (and, when
/// `every_epoch` is set, after each epoch as well).
pub fn train_with_checkpoints(
    dataset: &Dataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    every_epoch: bool,
) -> Result<(ModelBundle, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("training set has no examples".into()));
    }
    let mut trainer = Trainer::new(dataset.image_shape(), dataset.num_classes, cfg.clone())?;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        report.epochs.push(trainer.run_epoch(dataset)?);
        if every_epoch {
            if let Some(path) = checkpoint {
                checkpoint::save(&trainer.model, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        checkpoint::save(&trainer.model, path)?;
        report.checkpoint = Some(path.to_path_buf());
    }
    Ok((trainer.model, report))
}
