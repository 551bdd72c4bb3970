//! Paired α=0 / α=0.1 runs on the synthetic conflict corpus.
//!
//! Usage: `mechanism [epochs] [seeds] [key=value ...]` where keys are
//! `SynthConfig` fields (numbers only) plus `folds`, `lr` and `first_seed`.

use std::time::Instant;

use emofuse::data::{generate, make_folds, SynthConfig};
use emofuse::train::{evaluate, train, ModelConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(8, |a| a.parse().expect("epochs"));
    let seeds: u64 = args.get(1).map_or(5, |a| a.parse().expect("seeds"));
    let mut synth = serde_json::to_value(SynthConfig::default()).unwrap();
    let mut folds = 5;
    let mut lr = 1e-3;
    let mut first_seed = 0u64;
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k {
            "folds" => folds = v.parse().unwrap(),
            "lr" => lr = v.parse().unwrap(),
            "first_seed" => first_seed = v.parse().unwrap(),
            _ => synth[k] = serde_json::from_str(v).unwrap(),
        }
    }
    let start = Instant::now();
    let mut sums = [[0.0f64; 3]; 2];
    for seed in first_seed..first_seed + seeds {
        synth["seed"] = seed.into();
        let cfg: SynthConfig = serde_json::from_value(synth.clone()).unwrap();
        let samples = generate(&cfg).unwrap();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let split = make_folds(&labels, folds, seed).unwrap().split(0).unwrap();
        let model = ModelConfig::for_shape(cfg.shape, cfg.classes).unwrap();
        for (i, alpha) in [0.0, 0.1].into_iter().enumerate() {
            let tc = TrainConfig { alpha, epochs, seed, learning_rate: lr, ..TrainConfig::default() };
            let out = train(&samples, &split.train, &split.validation, &model, &tc).unwrap();
            let rep = evaluate(&out.checkpoint.params, &model, &samples, &split.test).unwrap();
            let agree = rep.modality_agreement.unwrap();
            let curve: Vec<String> = out
                .curve
                .iter()
                .map(|r| format!("{:.3}/{:.2}", r.train_loss, r.val_ua.unwrap()))
                .collect();
            println!(
                "seed {seed} alpha {alpha}: test ua {:.4} wa {:.4} agree {:.4} best {} [{}] {:.0}s",
                rep.ua,
                rep.wa,
                agree,
                out.best_epoch,
                curve.join(" "),
                start.elapsed().as_secs_f64()
            );
            sums[i][0] += rep.ua;
            sums[i][1] += rep.wa;
            sums[i][2] += agree;
        }
    }
    let n = seeds as f64;
    for (i, alpha) in [0.0, 0.1].iter().enumerate() {
        println!(
            "alpha {alpha}: mean ua {:.4} wa {:.4} agree {:.4}",
            sums[i][0] / n,
            sums[i][1] / n,
            sums[i][2] / n
        );
    }
}
