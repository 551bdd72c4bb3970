use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::dsp::{FeatureShape, LabeledSample};
use crate::encoders::{audio_encode, text_encode, AudioEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    classify, combined_loss, cross_entropy_loss, info_nce_loss, Discriminator, DiscriminatorVars, FusionClassifier,
    ScoreVector, CLASSIFIER_W,
};
use crate::tensor::{Bindings, ParamStore, Real, Tape, Tensor, Var};

/// Full architecture: both encoders, the fusion classifier and the pair
/// discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub audio: AudioEncoderConfig,
    pub text: TextEncoderConfig,
    pub classes: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            audio: AudioEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            classes: 4,
            disc_hidden: 128,
        }
    }
}

impl ModelConfig {
    /// Standard layer structure sized for the given features.
    pub fn for_shape(shape: FeatureShape, classes: usize) -> Result<Self> {
        if shape.spec_rows != shape.spec_cols {
            return Err(Error::Config(format!(
                "spectrograms must be square, got {}x{}",
                shape.spec_rows, shape.spec_cols
            )));
        }
        let mut cfg = Self {
            classes,
            ..Self::default()
        };
        cfg.audio.input_size = shape.spec_rows;
        cfg.text.seq_len = shape.seq_len;
        cfg.text.input_size = shape.embed_dim;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn feature_shape(&self) -> FeatureShape {
        FeatureShape {
            spec_rows: self.audio.input_size,
            spec_cols: self.audio.input_size,
            seq_len: self.text.seq_len,
            embed_dim: self.text.input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.text.validate()?;
        if self.classes < 2 || self.disc_hidden == 0 {
            return Err(Error::Config("need at least 2 classes and a non-empty discriminator".into()));
        }
        Ok(())
    }

    pub fn classifier(&self) -> FusionClassifier {
        FusionClassifier {
            classes: self.classes,
            audio_dim: self.audio.output_dim(),
            text_dim: self.text.output_dim(),
        }
    }

    pub fn discriminator(&self) -> Discriminator {
        Discriminator {
            audio_dim: self.audio.output_dim(),
            text_dim: self.text.output_dim(),
            hidden: self.disc_hidden,
        }
    }

    /// Fresh parameters. Every tensor is seeded from `(seed, name)`, so the
    /// shared parameters are identical with or without the discriminator.
    pub fn init_params<T: Real>(&self, seed: u64, with_discriminator: bool) -> Result<ParamStore<T>> {
        self.validate()?;
        let mut p = ParamStore::new();
        self.audio.init_params(seed, &mut p)?;
        self.text.init_params(seed, &mut p)?;
        self.classifier().init_params(seed, &mut p)?;
        if with_discriminator {
            self.discriminator().init_params(seed, &mut p)?;
        }
        Ok(p)
    }
}

/// Dense model inputs for one batch.
#[derive(Clone, Debug)]
pub struct BatchInputs<T> {
    /// `[B, 1, S, S]`
    pub x_a: Tensor<T>,
    /// `[B, seq_len, embed_dim]`
    pub x_t: Tensor<T>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
}

impl<T: Real> BatchInputs<T> {
    pub fn gather(samples: &[LabeledSample], indices: &[usize], shape: FeatureShape) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let b = indices.len();
        let mut xa = Vec::with_capacity(b * shape.spec_len());
        let mut xt = Vec::with_capacity(b * shape.text_len());
        let mut lengths = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(b);
        for &i in indices {
            let s = &samples[i];
            if s.shape() != shape {
                return Err(Error::dim(format!(
                    "sample `{}` has feature shape {:?}, model expects {shape:?}",
                    s.utterance_id,
                    s.shape()
                )));
            }
            xa.extend(s.x_a.values().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
            xt.extend(s.x_t.vectors().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
            lengths.push(s.x_t.true_length());
            labels.push(s.label);
        }
        Ok(Self {
            x_a: Tensor::new(vec![b, 1, shape.spec_rows, shape.spec_cols], xa)?,
            x_t: Tensor::new(vec![b, shape.seq_len, shape.embed_dim], xt)?,
            lengths,
            labels,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    pub e_a: Var,
    pub e_t: Var,
    pub scores: ScoreVector,
}

pub fn forward<T: Real>(tape: &mut Tape<T>, params: &Bindings, cfg: &ModelConfig, inputs: &BatchInputs<T>) -> Result<ForwardOut> {
    let x_a = tape.constant(inputs.x_a.clone());
    let x_t = tape.constant(inputs.x_t.clone());
    let e_a = audio_encode(tape, params, &cfg.audio, x_a)?;
    let e_t = text_encode(tape, params, &cfg.text, x_t, &inputs.lengths)?.embedding;
    let w = params.var(CLASSIFIER_W)?;
    let scores = classify(tape, w, e_a, e_t)?;
    Ok(ForwardOut { e_a, e_t, scores })
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub classification: Var,
    pub contrastive: Option<Var>,
}

/// Builds the training objective for one batch. With `use_discriminator`
/// false the contrastive branch is left out of the graph entirely (only
/// valid at `alpha == 0`).
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    params: &Bindings,
    cfg: &ModelConfig,
    inputs: &BatchInputs<T>,
    batch: &Batch,
    alpha: f64,
    use_discriminator: bool,
) -> Result<LossVars> {
    if !use_discriminator && alpha != 0.0 {
        return Err(Error::Config(format!("alpha {alpha} requires the discriminator")));
    }
    let out = forward(tape, params, cfg, inputs)?;
    let l1 = cross_entropy_loss(tape, out.scores.s, &inputs.labels)?;
    let l2 = if use_discriminator {
        let anchors = batch.contrastive_anchors();
        if anchors.is_empty() {
            None
        } else {
            let d = DiscriminatorVars::bind(params)?;
            Some(info_nce_loss(tape, &d, out.e_a, out.e_t, &anchors, &batch.negatives)?)
        }
    } else {
        None
    };
    let total = combined_loss(tape, l1, l2, alpha)?;
    Ok(LossVars {
        total,
        classification: l1,
        contrastive: l2,
    })
}
