//! Synthetic corpus generation, batch construction with different-emotion
//! negatives, and stratified fold planning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureShape, LabeledSample, Spectrogram, WordEmbeddingSequence};
use crate::error::{Error, Result};

/// Synthetic corpus parameters.
///
/// Each class owns one audio template and one text template. A sample is
/// its class templates plus Gaussian noise of scale `sigma`; with
/// probability `rho` the text side is built from a different class's
/// template instead (a cross-modal conflict; audio stays truthful).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Overrides `samples_per_class` when set (length must equal `classes`).
    pub class_counts: Option<Vec<usize>>,
    pub rho: f64,
    pub sigma: f64,
    pub seed: u64,
    pub shape: FeatureShape,
    /// Amplitude of the smooth audio templates.
    pub audio_scale: f64,
    /// Side length of the coarse grid the audio templates are drawn on
    /// before nearest-neighbour upsampling.
    pub audio_grid: usize,
    /// Amplitude of the per-position text template vectors.
    pub text_scale: f64,
    /// Shortest text length; when set, each sample's length is uniform in
    /// `[min_text_len, seq_len]`. Unset keeps every sequence full.
    pub min_text_len: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            samples_per_class: 400,
            class_counts: None,
            rho: 0.3,
            sigma: 0.5,
            seed: 0,
            shape: FeatureShape::STANDARD,
            audio_scale: 0.1,
            audio_grid: 8,
            text_scale: 0.3,
            min_text_len: None,
        }
    }
}

impl SynthConfig {
    pub fn counts(&self) -> Vec<usize> {
        self.class_counts
            .clone()
            .unwrap_or_else(|| vec![self.samples_per_class; self.classes])
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be finite and non-negative", self.sigma)));
        }
        if let Some(c) = &self.class_counts {
            if c.len() != self.classes {
                return Err(Error::Config(format!(
                    "{} class counts given for {} classes",
                    c.len(),
                    self.classes
                )));
            }
        }
        let s = self.shape;
        if s.spec_rows == 0 || s.spec_cols == 0 || s.seq_len == 0 || s.embed_dim == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if let Some(m) = self.min_text_len {
            if m == 0 || m > s.seq_len {
                return Err(Error::Config(format!("min_text_len {m} outside [1, {}]", s.seq_len)));
            }
        }
        if self.audio_grid == 0 || s.spec_rows % self.audio_grid != 0 || s.spec_cols % self.audio_grid != 0 {
            return Err(Error::Config(format!(
                "audio grid {} must divide the spectrogram size {}x{}",
                self.audio_grid, s.spec_rows, s.spec_cols
            )));
        }
        Ok(())
    }
}

/// Per-class noiseless templates.
#[derive(Clone, Debug)]
pub struct Templates {
    pub audio: Vec<Vec<f32>>,
    pub text: Vec<Vec<f32>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws the class templates; the first draws of the generator seeded by
/// `cfg.seed`.
pub fn templates(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Templates {
    let s = cfg.shape;
    let (gr, gc) = (cfg.audio_grid, cfg.audio_grid);
    let (br, bc) = (s.spec_rows / gr, s.spec_cols / gc);
    let mut audio = Vec::with_capacity(cfg.classes);
    let mut text = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let coarse: Vec<f64> = (0..gr * gc).map(|_| normal(rng) * cfg.audio_scale).collect();
        let a = (0..s.spec_len())
            .map(|i| {
                let (r, c) = (i / s.spec_cols, i % s.spec_cols);
                coarse[(r / br) * gc + c / bc] as f32
            })
            .collect();
        audio.push(a);
        text.push((0..s.text_len()).map(|_| (normal(rng) * cfg.text_scale) as f32).collect());
    }
    Templates { audio, text }
}

/// Generates the corpus, class by class, fully determined by `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let s = cfg.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tpl = templates(cfg, &mut rng);
    let mut out = Vec::with_capacity(cfg.counts().iter().sum());
    for (label, &count) in cfg.counts().iter().enumerate() {
        for k in 0..count {
            let conflict = cfg.rho > 0.0 && rng.random::<f64>() < cfg.rho;
            let text_class = if conflict {
                let other = rng.random_range(0..cfg.classes - 1);
                if other >= label {
                    other + 1
                } else {
                    other
                }
            } else {
                label
            };
            let true_length = match cfg.min_text_len {
                Some(m) => rng.random_range(m..=s.seq_len),
                None => s.seq_len,
            };
            let spec: Vec<f32> = tpl.audio[label]
                .iter()
                .map(|&v| v + (cfg.sigma * normal(&mut rng)) as f32)
                .collect();
            let mut emb = tpl.text[text_class].clone();
            for v in &mut emb[..true_length * s.embed_dim] {
                *v += (cfg.sigma * normal(&mut rng)) as f32;
            }
            out.push(LabeledSample {
                x_a: Spectrogram::new(s.spec_rows, s.spec_cols, spec, 0)?,
                x_t: WordEmbeddingSequence::new(s.seq_len, s.embed_dim, emb, true_length)?,
                label,
                utterance_id: format!("syn{:02}_{label}_{k:05}", cfg.seed % 100),
                conflict,
            });
        }
    }
    Ok(out)
}

/// Indices into a dataset plus, per anchor position, the in-batch
/// positions whose label differs from the anchor's.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl Batch {
    pub fn new(indices: Vec<usize>, dataset_labels: &[usize]) -> Self {
        let labels: Vec<usize> = indices.iter().map(|&i| dataset_labels[i]).collect();
        let negatives = labels
            .iter()
            .map(|&li| (0..labels.len()).filter(|&j| labels[j] != li).collect())
            .collect();
        Self {
            indices,
            labels,
            negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Positions that have at least one negative; only these enter the
    /// contrastive loss.
    pub fn contrastive_anchors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.negatives[i].is_empty()).collect()
    }
}

fn require_two_labels(labels: &[usize]) -> Result<()> {
    match labels.first() {
        Some(&first) if labels.iter().any(|&l| l != first) => Ok(()),
        _ => Err(Error::Config("dataset needs at least two distinct labels".into())),
    }
}

/// Draws `batch_size` distinct samples uniformly.
pub fn sample_batch(labels: &[usize], batch_size: usize, rng: &mut impl Rng) -> Result<Batch> {
    require_two_labels(labels)?;
    let n = batch_size.min(labels.len());
    let idx = rand::seq::index::sample(rng, labels.len(), n).into_vec();
    Ok(Batch::new(idx, labels))
}

/// Shuffled pass over a subset of the dataset in batches.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    pool: Vec<usize>,
    batch_size: usize,
}

impl EpochSampler {
    pub fn new(pool: Vec<usize>, dataset_labels: &[usize], batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let labels: Vec<usize> = pool.iter().map(|&i| dataset_labels[i]).collect();
        require_two_labels(&labels)?;
        Ok(Self { pool, batch_size })
    }

    /// One epoch: a fresh shuffle cut into consecutive batches (the last
    /// one may be short).
    pub fn epoch(&self, dataset_labels: &[usize], rng: &mut impl Rng) -> Vec<Batch> {
        let mut order = self.pool.clone();
        order.shuffle(rng);
        order
            .chunks(self.batch_size)
            .map(|c| Batch::new(c.to_vec(), dataset_labels))
            .collect()
    }
}

/// Stratified k-fold partition. Fold `f` is the test set of split `f`, fold
/// `f + 1 (mod k)` its validation set, and the rest its training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::Config(format!("need at least 3 folds for train/validation/test, got {k}")));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Config(format!(
                "class {c} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        // Continue the round-robin across classes so remainders spread out.
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, folds })
}

impl FoldPlan {
    pub fn split(&self, fold: usize) -> Result<Split> {
        if fold >= self.k {
            return Err(Error::Config(format!("fold {fold} out of range for {} folds", self.k)));
        }
        let val = (fold + 1) % self.k;
        let mut train: Vec<usize> = (0..self.k)
            .filter(|&f| f != fold && f != val)
            .flat_map(|f| self.folds[f].iter().copied())
            .collect();
        train.sort_unstable();
        Ok(Split {
            train,
            validation: self.folds[val].clone(),
            test: self.folds[fold].clone(),
        })
    }
}
