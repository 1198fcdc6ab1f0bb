//! Desk-scale run: synthetic bars, one class held out, with and without the
//! OLE and classifier terms.
//!
//! `cargo run --release --example desk_scale [epochs] [novelty_class]`, with
//! optional overrides in LR, BATCH, W_OLE, W_CLS, DELTA and SEEDS.

use std::time::Instant;

use oaae::data::{DatasetSource, SyntheticSpec};
use oaae::eval::{run_protocol, ProtocolSpec};
use oaae::training::TrainConfig;

fn main() -> oaae::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(10, |s| s.parse().unwrap());
    let novelty: usize = args.get(2).map_or(3, |s| s.parse().unwrap());
    let source = DatasetSource::Synthetic {
        spec: SyntheticSpec {
            classes: 4,
            per_class: 500,
            side: 16,
            noise_std: 0.1,
        },
        seed: 0,
    };
    let env = |k: &str, d: f64| std::env::var(k).ok().map_or(d, |v| v.parse().unwrap());
    let mut base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    base.learning_rate = env("LR", base.learning_rate);
    base.weights.ole = env("W_OLE", base.weights.ole);
    base.weights.cls = env("W_CLS", base.weights.cls);
    base.ole.delta_margin = env("DELTA", base.ole.delta_margin);
    base.batch_size = env("BATCH", 32.0) as usize;
    let seeds = env("SEEDS", 3.0) as u64;
    let mut ablation = base.clone();
    ablation.weights.ole = 0.0;
    ablation.weights.cls = 0.0;
    for (name, cfg) in [("oaae", &base), ("ablation", &ablation)] {
        let mut sum = 0.0;
        for seed in 0..seeds {
            let t = Instant::now();
            let spec = ProtocolSpec::new(source.clone(), novelty, seed)?;
            let r = run_protocol(&spec, cfg)?;
            sum += r.auroc;
            println!(
                "{name} seed {seed}: auroc {:.4} mse {:.4} intra {:.4} inter {:.4} ({:.1}s)",
                r.auroc,
                r.auroc_mse,
                r.intra_cos,
                r.inter_abs_cos,
                t.elapsed().as_secs_f64()
            );
        }
        println!("{name} mean auroc {:.4}", sum / seeds as f64);
    }
    Ok(())
}
