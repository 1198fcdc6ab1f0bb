use oaae::data::{synthetic_multimodal, Dataset, Split, SyntheticSpec};
use oaae::eval::cosine_separation;
use oaae::nn::{ArchConfig, ModelBundle, Role};
use oaae::scoring::{self, ScoreKind};
use oaae::training::{TrainConfig, Trainer};

fn small_arch() -> ArchConfig {
    ArchConfig {
        latent_dim: 8,
        conv_channels: [4, 8, 8],
        hidden: 32,
        disc_hidden: 16,
        leaky_slope: 0.2,
    }
}

fn two_class(per_class: usize) -> Dataset {
    let spec = SyntheticSpec {
        classes: 2,
        per_class,
        side: 16,
        noise_std: 0.1,
    };
    synthetic_multimodal(&spec, Split::Train, 5).unwrap()
}

#[test]
fn first_latent_discriminator_loss_is_near_chance() {
    let data = two_class(32);
    let cfg = TrainConfig {
        arch: small_arch(),
        seed: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(data.image_shape(), 2, cfg).unwrap();
    let x = data.images.select(&(0..64).collect::<Vec<_>>());
    let losses = trainer.discriminator_step(&x).unwrap();
    assert!(
        (losses.latent - 2.0 * std::f64::consts::LN_2).abs() <= 0.5,
        "{losses:?}"
    );
}

#[test]
fn generator_total_is_the_weighted_sum() {
    let data = two_class(16);
    let cfg = TrainConfig {
        arch: small_arch(),
        ..TrainConfig::default()
    };
    let weights = cfg.weights;
    let mut trainer = Trainer::new(data.image_shape(), 2, cfg).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let g = trainer
        .generator_step(&data.images.select(&idx), &data.labels)
        .unwrap();
    let expected = weights.recon * g.recon
        + weights.adv_enc * g.enc
        + weights.adv_dec * g.dec
        + weights.ole * g.ole
        + weights.cls * g.cls;
    assert!((g.total - expected).abs() <= 1e-6, "{g:?}");
    assert!(g.ole > -1e-8);
}

#[test]
fn generator_steps_reduce_inter_class_cosine() {
    let data = two_class(64);
    let cfg = TrainConfig {
        arch: small_arch(),
        batch_size: 32,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(data.image_shape(), 2, cfg).unwrap();
    let (_, inter_before) =
        cosine_separation(&trainer.model.encode(&data.images).unwrap(), &data.labels);
    let n = data.len();
    for step in 0..200 {
        let idx: Vec<usize> = (0..32).map(|k| (step * 32 + k) % n).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        trainer
            .generator_step(&data.images.select(&idx), &labels)
            .unwrap();
    }
    let (_, inter_after) =
        cosine_separation(&trainer.model.encode(&data.images).unwrap(), &data.labels);
    assert!(
        inter_after < inter_before,
        "before {inter_before}, after {inter_after}"
    );
}

fn trained_model() -> (ModelBundle, Dataset) {
    let data = two_class(40);
    let cfg = TrainConfig {
        arch: small_arch(),
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (model, _) = oaae::training::train(&data, &cfg).unwrap();
    (model, data)
}

#[test]
fn batch_scoring_matches_one_by_one() {
    let (model, data) = trained_model();
    for kind in [ScoreKind::Angle, ScoreKind::Mse] {
        let batch = scoring::score_batch(&model, &data.images, None, kind).unwrap();
        assert_eq!(batch.len(), data.len());
        for (i, s) in batch.iter().enumerate() {
            assert_eq!(s.id, i);
            let x = data.images.select(&[i]);
            let single = match kind {
                ScoreKind::Angle => scoring::novelty_score(&model, &x).unwrap(),
                ScoreKind::Mse => scoring::recon_error_score(&model, &x).unwrap(),
            };
            assert!(
                (s.score - single).abs() <= 1e-6,
                "{kind} example {i}: {} vs {single}",
                s.score
            );
            if kind == ScoreKind::Angle {
                assert!((0.0..=std::f64::consts::PI).contains(&s.score));
            } else {
                assert!(s.score >= 0.0);
            }
        }
    }
}

#[test]
fn scoring_leaves_the_model_untouched() {
    let (model, data) = trained_model();
    let before: Vec<Vec<u32>> = Role::ALL
        .iter()
        .map(|&r| {
            model
                .network(r)
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    let first = scoring::score_batch(&model, &data.images, None, ScoreKind::Angle).unwrap();
    let again = scoring::score_batch(&model, &data.images, None, ScoreKind::Angle).unwrap();
    let after: Vec<Vec<u32>> = Role::ALL
        .iter()
        .map(|&r| {
            model
                .network(r)
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    assert_eq!(before, after);
    assert_eq!(first, again);
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let (a, _) = trained_model();
    let (b, _) = trained_model();
    assert_eq!(
        oaae::nn::checkpoint::to_bytes(&a),
        oaae::nn::checkpoint::to_bytes(&b)
    );
}
