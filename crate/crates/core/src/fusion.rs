//! Linear fusion classifier, classification loss, pair discriminator and
//! the InfoNCE regularizer.
//!
//! The classifier has no bias, so the fused score splits exactly into
//! per-modality parts: `W·[e_a; e_t] = W1·e_a + W2·e_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bindings, ParamStore, Real, Tape, Tensor, Var};

pub const CLASSIFIER_W: &str = "classifier.W";
pub const DISC_HIDDEN_W: &str = "discriminator.hidden.W";
pub const DISC_HIDDEN_B: &str = "discriminator.hidden.b";
pub const DISC_OUT_W: &str = "discriminator.out.W";
pub const DISC_OUT_B: &str = "discriminator.out.b";

/// Shape of `W = [W1 | W2]`, `classes x (audio_dim + text_dim)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionClassifier {
    pub classes: usize,
    pub audio_dim: usize,
    pub text_dim: usize,
}

impl FusionClassifier {
    pub fn init_params<T: Real>(&self, seed: u64, params: &mut ParamStore<T>) -> Result<()> {
        let fan_in = self.audio_dim + self.text_dim;
        params.insert_uniform(seed, CLASSIFIER_W, vec![self.classes, fan_in], fan_in)
    }
}

/// Fused and per-modality scores, each `[B, C]`.
#[derive(Clone, Copy, Debug)]
pub struct ScoreVector {
    pub s: Var,
    pub s_a: Var,
    pub s_t: Var,
}

/// `s = W·[e_a; e_t]`, `s_a = W1·e_a`, `s_t = W2·e_t` for batched row
/// embeddings `e_a: [B, audio_dim]`, `e_t: [B, text_dim]`.
pub fn classify<T: Real>(tape: &mut Tape<T>, w: Var, e_a: Var, e_t: Var) -> Result<ScoreVector> {
    let (da, dt) = (tape.shape(e_a)[1], tape.shape(e_t)[1]);
    if tape.shape(w).get(1) != Some(&(da + dt)) {
        return Err(Error::dim(format!(
            "classifier {:?} does not take [e_a; e_t] of width {da} + {dt}",
            tape.shape(w)
        )));
    }
    let joint = tape.concat_cols(&[e_a, e_t])?;
    let s = tape.matmul_nt(joint, w)?;
    let w1 = tape.slice_cols(w, 0, da)?;
    let w2 = tape.slice_cols(w, da, dt)?;
    let s_a = tape.matmul_nt(e_a, w1)?;
    let s_t = tape.matmul_nt(e_t, w2)?;
    Ok(ScoreVector { s, s_a, s_t })
}

/// Batch-mean cross-entropy of `scores: [B, C]` against integer labels.
pub fn cross_entropy_loss<T: Real>(tape: &mut Tape<T>, scores: Var, labels: &[usize]) -> Result<Var> {
    let [b, c] = *tape.shape(scores) else {
        return Err(Error::dim(format!("scores must be [B, C], got {:?}", tape.shape(scores))));
    };
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} score rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Range(format!("label {bad} outside [0, {c})")));
    }
    let lse = tape.logsumexp_rows(scores, None)?;
    let picked = tape.gather(scores, labels.iter().enumerate().map(|(i, &l)| i * c + l).collect())?;
    let per_sample = tape.sub(lse, picked)?;
    Ok(tape.mean(per_sample))
}

/// Single-hidden-layer scorer of an `(e_a, e_t)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discriminator {
    pub audio_dim: usize,
    pub text_dim: usize,
    pub hidden: usize,
}

impl Discriminator {
    pub fn init_params<T: Real>(&self, seed: u64, params: &mut ParamStore<T>) -> Result<()> {
        let fan_in = self.audio_dim + self.text_dim;
        params.insert_uniform(seed, DISC_HIDDEN_W, vec![self.hidden, fan_in], fan_in)?;
        params.insert(DISC_HIDDEN_B, Tensor::zeros(vec![self.hidden]))?;
        params.insert_uniform(seed, DISC_OUT_W, vec![1, self.hidden], self.hidden)?;
        params.insert(DISC_OUT_B, Tensor::zeros(vec![1]))?;
        Ok(())
    }

    pub fn is_param(name: &str) -> bool {
        name.starts_with("discriminator.")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars {
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl DiscriminatorVars {
    pub fn bind(params: &Bindings) -> Result<Self> {
        Ok(Self {
            hidden_w: params.var(DISC_HIDDEN_W)?,
            hidden_b: params.var(DISC_HIDDEN_B)?,
            out_w: params.var(DISC_OUT_W)?,
            out_b: params.var(DISC_OUT_B)?,
        })
    }
}

/// `d(e_a, e_t) = w_o·relu(W_h·[e_a; e_t] + b_h) + b_o` for each row of
/// `e_a: [B, da]` paired with the same row of `e_t: [B, dt]`. Returns `[B, 1]`.
pub fn discriminator_score<T: Real>(tape: &mut Tape<T>, d: &DiscriminatorVars, e_a: Var, e_t: Var) -> Result<Var> {
    let joint = tape.concat_cols(&[e_a, e_t])?;
    let pre = tape.matmul_nt(joint, d.hidden_w)?;
    let pre = tape.add_row_bias(pre, d.hidden_b)?;
    let hid = tape.relu(pre);
    let out = tape.matmul_nt(hid, d.out_w)?;
    tape.add_row_bias(out, d.out_b)
}

/// Scores of every pair `(e_a[i], e_t[j])` as a `[B, B]` matrix. Uses the
/// split `W_h·[a; t] = W_ha·a + W_ht·t` so the hidden layer costs
/// `O(B·H·(da + dt) + B²·H)` instead of `O(B²·H·(da + dt))`.
pub fn pairwise_scores<T: Real>(tape: &mut Tape<T>, d: &DiscriminatorVars, e_a: Var, e_t: Var) -> Result<Var> {
    let (b, da) = (tape.shape(e_a)[0], tape.shape(e_a)[1]);
    let (bt, dt) = (tape.shape(e_t)[0], tape.shape(e_t)[1]);
    if tape.shape(d.hidden_w).get(1) != Some(&(da + dt)) {
        return Err(Error::dim(format!(
            "discriminator {:?} does not take pairs of width {da} + {dt}",
            tape.shape(d.hidden_w)
        )));
    }
    let w_a = tape.slice_cols(d.hidden_w, 0, da)?;
    let w_t = tape.slice_cols(d.hidden_w, da, dt)?;
    let pa = tape.matmul_nt(e_a, w_a)?;
    let pt = tape.matmul_nt(e_t, w_t)?;
    let pre = tape.pairwise_sum(pa, pt)?;
    let pre = tape.add_row_bias(pre, d.hidden_b)?;
    let hid = tape.relu(pre);
    let out = tape.matmul_nt(hid, d.out_w)?;
    let out = tape.add_row_bias(out, d.out_b)?;
    tape.reshape(out, vec![b, bt])
}

/// InfoNCE over a pair-score matrix `scores: [B, B]` (row = audio anchor,
/// column = text). For each anchor `i` in `anchors` the loss is
/// `-ln(exp(s_ii) / (exp(s_ii) + Σ_{n ∈ negatives[i]} exp(s_in)))`;
/// the result is the mean over `anchors`.
pub fn info_nce_from_scores<T: Real>(
    tape: &mut Tape<T>,
    scores: Var,
    anchors: &[usize],
    negatives: &[Vec<usize>],
) -> Result<Var> {
    let [b, b2] = *tape.shape(scores) else {
        return Err(Error::dim(format!("pair scores must be square, got {:?}", tape.shape(scores))));
    };
    if b != b2 || negatives.len() != b {
        return Err(Error::dim(format!(
            "pair scores {:?} with {} negative sets",
            tape.shape(scores),
            negatives.len()
        )));
    }
    if anchors.is_empty() {
        return Err(Error::Contract("InfoNCE needs at least one anchor".into()));
    }
    let rows = tape.select_rows(scores, anchors.to_vec())?;
    let mut mask = vec![false; anchors.len() * b];
    for (r, &i) in anchors.iter().enumerate() {
        if negatives[i].is_empty() {
            return Err(Error::Contract(format!("anchor {i} has an empty negative set")));
        }
        mask[r * b + i] = true;
        for &n in &negatives[i] {
            if n == i || n >= b {
                return Err(Error::Contract(format!("anchor {i} has invalid negative {n}")));
            }
            mask[r * b + n] = true;
        }
    }
    let lse = tape.logsumexp_rows(rows, Some(mask))?;
    let pos = tape.gather(rows, anchors.iter().enumerate().map(|(r, &i)| r * b + i).collect())?;
    let per_anchor = tape.sub(lse, pos)?;
    Ok(tape.mean(per_anchor))
}

/// InfoNCE with the discriminator scoring positives `(e_a[i], e_t[i])` and
/// negatives `(e_a[i], e_t[n])` for `n` in `negatives[i]`.
pub fn info_nce_loss<T: Real>(
    tape: &mut Tape<T>,
    d: &DiscriminatorVars,
    e_a: Var,
    e_t: Var,
    anchors: &[usize],
    negatives: &[Vec<usize>],
) -> Result<Var> {
    let scores = pairwise_scores(tape, d, e_a, e_t)?;
    info_nce_from_scores(tape, scores, anchors, negatives)
}

/// `(1 - alpha)·l1 + alpha·l2`; `l2 = None` (no anchor had negatives)
/// contributes nothing.
pub fn combined_loss<T: Real>(tape: &mut Tape<T>, l1: Var, l2: Option<Var>, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha {alpha} outside [0, 1]")));
    }
    let a = tape.scale(l1, T::from_f64_lossy(1.0 - alpha));
    match l2 {
        Some(l2) => {
            let b = tape.scale(l2, T::from_f64_lossy(alpha));
            tape.add(a, b)
        }
        None => Ok(a),
    }
}
