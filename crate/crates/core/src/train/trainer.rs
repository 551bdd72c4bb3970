use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::eval::evaluate;
use super::model::{batch_loss, BatchInputs, ModelConfig};
use crate::data::EpochSampler;
use crate::dsp::LabeledSample;
use crate::error::{Error, Result};
use crate::tensor::{backward, ParamStore, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Build the discriminator and the contrastive branch. Off only for the
    /// plain baseline, which requires `alpha == 0`.
    pub use_discriminator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            batch_size: 64,
            alpha: 0.1,
            epochs: 30,
            seed: 0,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            use_discriminator: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Range(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.adam_eps > 0.0) {
            return Err(Error::Config("learning_rate and adam_eps must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !self.use_discriminator && self.alpha != 0.0 {
            return Err(Error::Config(format!("alpha {} requires the discriminator", self.alpha)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Per-epoch means over training batches plus validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub classification_loss: f64,
    /// Mean over batches that had at least one anchor.
    pub contrastive_loss: Option<f64>,
    pub val_ua: Option<f64>,
    pub val_wa: Option<f64>,
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("epoch,train_loss,classification_loss,contrastive_loss,val_ua,val_wa\n");
    for r in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.classification_loss,
            opt(r.contrastive_loss),
            opt(r.val_ua),
            opt(r.val_wa)
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation UA (the last
    /// epoch when there is no validation set).
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

const SHUFFLE_STREAM: u64 = 1;

pub fn train(
    samples: &[LabeledSample],
    train_idx: &[usize],
    validation: &[usize],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(samples, train_idx, validation, model, cfg, |_| {})
}

/// Same as [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    samples: &[LabeledSample],
    train_idx: &[usize],
    validation: &[usize],
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.classes) {
        return Err(Error::Range(format!("label {bad} outside [0, {})", model.classes)));
    }
    let sampler = EpochSampler::new(train_idx.to_vec(), &labels, cfg.batch_size)?;
    let shape = model.feature_shape();
    let mut params: ParamStore<f32> = model.init_params(cfg.seed, cfg.use_discriminator)?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let (mut total, mut l1_sum, mut l2_sum, mut l2_batches) = (0.0, 0.0, 0.0, 0usize);
        let batches = sampler.epoch(&labels, &mut rng);
        for (b, batch) in batches.iter().enumerate() {
            let inputs = BatchInputs::<f32>::gather(samples, &batch.indices, shape)?;
            let mut tape = Tape::new();
            let bind = params.bind(&mut tape);
            let loss = batch_loss(&mut tape, &bind, model, &inputs, batch, cfg.alpha, cfg.use_discriminator)?;
            let value = |v| f64::from(tape.value(v).item());
            let (lt, l1) = (value(loss.total), value(loss.classification));
            let l2 = loss.contrastive.map(value);
            if !lt.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {}: total {lt}, classification {l1}, contrastive {l2:?}",
                    b + 1
                )));
            }
            let grads = backward(&tape, loss.total, &bind)?;
            adam_step(&mut params, &grads, &mut adam, &adam_cfg)?;
            total += lt;
            l1_sum += l1;
            if let Some(l2) = l2 {
                l2_sum += l2;
                l2_batches += 1;
            }
        }
        let n = batches.len() as f64;
        let val = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&params, model, samples, validation)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / n,
            classification_loss: l1_sum / n,
            contrastive_loss: (l2_batches > 0).then(|| l2_sum / l2_batches as f64),
            val_ua: val.as_ref().map(|r| r.ua),
            val_wa: val.as_ref().map(|r| r.wa),
        };
        progress(&record);
        let score = record.val_ua.unwrap_or(f64::NEG_INFINITY);
        // Strictly better only, so the earliest epoch wins ties; without a
        // validation set every epoch ties and the last one is kept.
        let improves = match &best {
            None => true,
            Some((s, _, _)) => score > *s || validation.is_empty(),
        };
        if improves {
            best = Some((score, epoch, params.clone()));
        }
        curve.push(record);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let meta = CheckpointMeta {
        model: *model,
        train: *cfg,
        epoch: best_epoch,
        rng_digest: format!("chacha8/seed={}/stream={SHUFFLE_STREAM}/word={}", cfg.seed, rng.get_word_pos()),
        fold: None,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            meta,
            params: best_params,
        },
        curve,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            alpha: 1.5,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Range(_))));
        let baseline = TrainConfig {
            alpha: 0.1,
            use_discriminator: false,
            ..TrainConfig::default()
        };
        assert!(matches!(baseline.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"alpha": 0.2}"#).is_ok());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"alhpa": 0.2}"#).is_err());
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let r = EpochRecord {
            epoch: 1,
            train_loss: 1.5,
            classification_loss: 1.25,
            contrastive_loss: None,
            val_ua: Some(0.5),
            val_wa: Some(0.5),
        };
        let csv = curve_csv(&[r]);
        assert_eq!(csv.lines().nth(1), Some("1,1.5,1.25,,0.5,0.5"));
    }
}
