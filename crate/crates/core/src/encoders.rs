//! Modality encoders: a stacked conv/ReLU/maxpool CNN over spectrograms
//! and a stacked unidirectional LSTM with additive attention pooling over
//! word-embedding sequences.
//!
//! Parameter names: `audio_cnn.layer{i}.{kernel,bias}`,
//! `text_lstm.layer{i}.{W_ih,W_hh,b}`, `attention.{M,v}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bindings, ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    /// Spectrogram height and width.
    pub input_size: usize,
    pub layers: usize,
    pub channels: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            layers: 4,
            channels: 8,
        }
    }
}

impl AudioEncoderConfig {
    pub fn output_dim(&self) -> usize {
        let side = self.input_size >> self.layers;
        self.channels * side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.input_size % (1 << self.layers) != 0 {
            return Err(Error::Config(format!(
                "audio encoder input {} must be divisible by 2^{} pooling",
                self.input_size, self.layers
            )));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, seed: u64, params: &mut ParamStore<T>) -> Result<()> {
        for l in 0..self.layers {
            let c_in = if l == 0 { 1 } else { self.channels };
            params.insert_uniform(
                seed,
                &format!("audio_cnn.layer{l}.kernel"),
                vec![self.channels, c_in, 3, 3],
                c_in * 9,
            )?;
            params.insert(format!("audio_cnn.layer{l}.bias"), Tensor::zeros(vec![self.channels]))?;
        }
        Ok(())
    }
}

/// `x_a: [B, 1, S, S]` to `[B, output_dim]` through `layers` rounds of
/// conv3x3 (padding 1), ReLU and 2x2 max pooling.
pub fn audio_encode<T: Real>(tape: &mut Tape<T>, params: &Bindings, cfg: &AudioEncoderConfig, x_a: Var) -> Result<Var> {
    let expected = [cfg.input_size, cfg.input_size];
    match tape.shape(x_a) {
        [_, 1, h, w] if [*h, *w] == expected => {}
        s => {
            return Err(Error::dim(format!(
                "audio input {s:?} must be [B, 1, {}, {}]",
                cfg.input_size, cfg.input_size
            )))
        }
    }
    let batch = tape.shape(x_a)[0];
    let mut h = x_a;
    for l in 0..cfg.layers {
        let k = params.var(&format!("audio_cnn.layer{l}.kernel"))?;
        let b = params.var(&format!("audio_cnn.layer{l}.bias"))?;
        let c = tape.conv2d(h, k, Some(b))?;
        // ReLU is monotone, so pooling first gives the same values on a
        // quarter of the elements.
        let p = tape.maxpool2d(c)?;
        h = tape.relu(p);
    }
    tape.reshape(h, vec![batch, cfg.output_dim()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub seq_len: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub attention_size: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            seq_len: 30,
            input_size: 300,
            hidden_size: 200,
            layers: 2,
            attention_size: 64,
        }
    }
}

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

impl TextEncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.hidden_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.input_size == 0 || self.hidden_size == 0 || self.layers == 0 || self.attention_size == 0 {
            return Err(Error::Config("text encoder sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, seed: u64, params: &mut ParamStore<T>) -> Result<()> {
        let h = self.hidden_size;
        for l in 0..self.layers {
            let input = if l == 0 { self.input_size } else { h };
            let p = format!("text_lstm.layer{l}");
            params.insert_uniform(seed, &format!("{p}.W_ih"), vec![4 * h, input], input)?;
            params.insert_uniform(seed, &format!("{p}.W_hh"), vec![4 * h, h], h)?;
            let mut b = Tensor::zeros(vec![4 * h]);
            b.data_mut()[h..2 * h].fill(T::from_f64_lossy(FORGET_BIAS));
            params.insert(format!("{p}.b"), b)?;
        }
        params.insert_uniform(seed, "attention.M", vec![self.attention_size, h], h)?;
        params.insert_uniform(seed, "attention.v", vec![1, self.attention_size], self.attention_size)?;
        Ok(())
    }
}

/// LSTM gate weights for one layer as tape variables. Gate blocks in
/// `W_ih`/`W_hh`/`b` rows are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl LstmWeights {
    pub fn bind(params: &Bindings, layer: usize) -> Result<Self> {
        Ok(Self {
            w_ih: params.var(&format!("text_lstm.layer{layer}.W_ih"))?,
            w_hh: params.var(&format!("text_lstm.layer{layer}.W_hh"))?,
            b: params.var(&format!("text_lstm.layer{layer}.b"))?,
        })
    }
}

/// Cell update from precomputed input projections `x_proj = x·W_ihᵀ + b`:
///
/// ```text
/// [i, f, g, o] = x_proj + h·W_hhᵀ
/// c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)
/// h' = σ(o) ⊙ tanh(c')
/// ```
pub fn lstm_cell<T: Real>(tape: &mut Tape<T>, x_proj: Var, h: Var, c: Var, w_hh: Var) -> Result<(Var, Var)> {
    let hidden = tape.shape(c)[1];
    let rec = tape.matmul_nt(h, w_hh)?;
    let gates = tape.add(x_proj, rec)?;
    let parts = tape.split_cols(gates, &[hidden; 4])?;
    let i = tape.sigmoid(parts[0]);
    let f = tape.sigmoid(parts[1]);
    let g = tape.tanh(parts[2]);
    let o = tape.sigmoid(parts[3]);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// One LSTM step on raw inputs `x: [B, in]`.
pub fn lstm_step<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let (in_dim, hidden) = (tape.shape(x)[1], tape.shape(h)[1]);
    if tape.shape(w.w_ih) != [4 * hidden, in_dim] || tape.shape(w.w_hh) != [4 * hidden, hidden] || tape.shape(h) != tape.shape(c) {
        return Err(Error::dim(format!(
            "lstm_step: x {:?}, h {:?}, c {:?}, W_ih {:?}, W_hh {:?} are inconsistent",
            tape.shape(x),
            tape.shape(h),
            tape.shape(c),
            tape.shape(w.w_ih),
            tape.shape(w.w_hh)
        )));
    }
    let xp = tape.matmul_nt(x, w.w_ih)?;
    let xp = tape.add_row_bias(xp, w.b)?;
    lstm_cell(tape, xp, h, c, w.w_hh)
}

/// Output of [`text_encode`].
#[derive(Clone, Copy, Debug)]
pub struct TextEncoding {
    /// `[B, hidden]`
    pub embedding: Var,
    /// `[B, seq_len]`, zero at padded positions.
    pub attention: Var,
}

/// `x_t: [B, seq_len, input]` to `[B, hidden]`: stacked LSTM layers, then
/// additive attention `score_t = v·tanh(M·h_t)` over the top layer's states,
/// softmax-normalized over positions `< true_length`.
pub fn text_encode<T: Real>(
    tape: &mut Tape<T>,
    params: &Bindings,
    cfg: &TextEncoderConfig,
    x_t: Var,
    true_lengths: &[usize],
) -> Result<TextEncoding> {
    let batch = match *tape.shape(x_t) {
        [b, s, d] if s == cfg.seq_len && d == cfg.input_size => b,
        _ => {
            return Err(Error::dim(format!(
                "text input {:?} must be [B, {}, {}]",
                tape.shape(x_t),
                cfg.seq_len,
                cfg.input_size
            )))
        }
    };
    if true_lengths.len() != batch {
        return Err(Error::dim(format!("{} true lengths for a batch of {batch}", true_lengths.len())));
    }
    if let Some(&bad) = true_lengths.iter().find(|&&l| l == 0 || l > cfg.seq_len) {
        return Err(Error::Input(format!("true length {bad} outside [1, {}]", cfg.seq_len)));
    }
    let steps = cfg.seq_len;
    let hidden = cfg.hidden_size;

    // Layer input as [B * T, in], row b * T + t.
    let mut layer_in = tape.reshape(x_t, vec![batch * steps, cfg.input_size])?;
    let mut top = Vec::new();
    for l in 0..cfg.layers {
        let w = LstmWeights::bind(params, l)?;
        let proj = tape.matmul_nt(layer_in, w.w_ih)?;
        let proj = tape.add_row_bias(proj, w.b)?;
        let mut h = tape.constant(Tensor::zeros(vec![batch, hidden]));
        let mut c = tape.constant(Tensor::zeros(vec![batch, hidden]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xp = tape.select_rows(proj, (0..batch).map(|b| b * steps + t).collect())?;
            (h, c) = lstm_cell(tape, xp, h, c, w.w_hh)?;
            states.push(h);
        }
        layer_in = tape.interleave_rows(&states)?;
        top = states;
    }
    debug_assert_eq!(top.len(), steps);

    let m = params.var("attention.M")?;
    let v = params.var("attention.v")?;
    let u = tape.matmul_nt(layer_in, m)?;
    let u = tape.tanh(u);
    let scores = tape.matmul_nt(u, v)?;
    let scores = tape.reshape(scores, vec![batch, steps])?;
    let mask: Vec<bool> = true_lengths
        .iter()
        .flat_map(|&len| (0..steps).map(move |t| t < len))
        .collect();
    let attention = tape.softmax_rows(scores, Some(&mask))?;
    let embedding = tape.attend_steps(attention, layer_in)?;
    Ok(TextEncoding { embedding, attention })
}
