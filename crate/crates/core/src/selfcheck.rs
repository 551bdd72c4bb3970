//! Gradient checks over every tape op and over the full training objective
//! on a toy-sized model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::dsp::{FeatureShape, LabeledSample, Spectrogram, WordEmbeddingSequence};
use crate::encoders::{AudioEncoderConfig, TextEncoderConfig};
use crate::error::Result;
use crate::tensor::{grad_check, Bindings, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::train::{batch_loss, BatchInputs, ModelConfig};

/// One named check and its outcome.
#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

type OpGraph = Box<dyn Fn(&mut Tape<f64>, &Bindings) -> Result<Var>>;

/// Weighted sum `Σ y ⊙ r` with fixed random `r`, turning any op output into
/// a scalar whose gradient exercises every output element.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, tape.shape(y).to_vec(), -1.0, 1.0);
    let r = tape.constant(r);
    let z = tape.mul(y, r)?;
    Ok(tape.sum(z))
}

fn op_case(
    name: &str,
    inputs: Vec<(&str, Tensor<f64>)>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> (String, ParamStore<f64>, OpGraph) {
    let mut p = ParamStore::new();
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.to_string()).collect();
    for (n, t) in inputs {
        p.insert(n, t).expect("distinct input names");
    }
    let g: OpGraph = Box::new(move |tape, bind| {
        let vars = names.iter().map(|n| bind.var(n)).collect::<Result<Vec<_>>>()?;
        let y = f(tape, &vars)?;
        project(tape, y, 99)
    });
    (name.to_string(), p, g)
}

/// Checks each differentiable op on small random inputs, probing every
/// coordinate.
pub fn op_checks(cfg: &GradCheckConfig) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = &mut rng;
    let m = |r: &mut ChaCha8Rng, a, b| uniform(r, vec![a, b], -1.0, 1.0);
    let cases = vec![
        op_case("matmul", vec![("a", m(r, 3, 4)), ("b", m(r, 4, 2))], |t, v| t.matmul(v[0], v[1])),
        op_case("matmul_nt", vec![("a", m(r, 3, 4)), ("b", m(r, 2, 4))], |t, v| t.matmul_nt(v[0], v[1])),
        op_case("add", vec![("a", m(r, 2, 3)), ("b", m(r, 2, 3))], |t, v| t.add(v[0], v[1])),
        op_case("sub", vec![("a", m(r, 2, 3)), ("b", m(r, 2, 3))], |t, v| t.sub(v[0], v[1])),
        op_case("mul", vec![("a", m(r, 2, 3)), ("b", m(r, 2, 3))], |t, v| t.mul(v[0], v[1])),
        op_case("scale", vec![("a", m(r, 2, 3))], |t, v| Ok(t.scale(v[0], -1.7))),
        op_case(
            "add_row_bias",
            vec![("x", m(r, 3, 4)), ("b", uniform(r, vec![4], -1.0, 1.0))],
            |t, v| t.add_row_bias(v[0], v[1]),
        ),
        op_case("relu", vec![("a", off_zero(r, vec![3, 4]))], |t, v| Ok(t.relu(v[0]))),
        op_case("sigmoid", vec![("a", uniform(r, vec![3, 4], -3.0, 3.0))], |t, v| Ok(t.sigmoid(v[0]))),
        op_case("tanh", vec![("a", uniform(r, vec![3, 4], -3.0, 3.0))], |t, v| Ok(t.tanh(v[0]))),
        op_case("concat_cols", vec![("a", m(r, 2, 3)), ("b", m(r, 2, 1))], |t, v| {
            t.concat_cols(&[v[0], v[1]])
        }),
        op_case("slice_cols", vec![("a", m(r, 2, 5))], |t, v| t.slice_cols(v[0], 1, 3)),
        op_case("split_cols", vec![("a", m(r, 2, 5))], |t, v| {
            let parts = t.split_cols(v[0], &[2, 3])?;
            let s0 = project(t, parts[0], 5)?;
            let s1 = project(t, parts[1], 6)?;
            t.add(s0, s1)
        }),
        op_case("select_rows", vec![("a", m(r, 4, 3))], |t, v| t.select_rows(v[0], vec![2, 0, 2])),
        op_case("interleave_rows", vec![("a", m(r, 2, 3)), ("b", m(r, 2, 3)), ("c", m(r, 2, 3))], |t, v| {
            t.interleave_rows(&[v[0], v[1], v[2]])
        }),
        op_case("gather", vec![("a", m(r, 3, 3))], |t, v| t.gather(v[0], vec![8, 0, 4, 4])),
        op_case("reshape", vec![("a", m(r, 2, 6))], |t, v| t.reshape(v[0], vec![3, 4])),
        op_case(
            "conv2d",
            vec![
                ("x", uniform(r, vec![2, 2, 4, 5], -1.0, 1.0)),
                ("k", uniform(r, vec![3, 2, 3, 3], -1.0, 1.0)),
                ("b", uniform(r, vec![3], -1.0, 1.0)),
            ],
            |t, v| t.conv2d(v[0], v[1], Some(v[2])),
        ),
        op_case("maxpool2d", vec![("x", uniform(r, vec![2, 2, 4, 6], -1.0, 1.0))], |t, v| t.maxpool2d(v[0])),
        op_case("logsumexp_rows", vec![("a", uniform(r, vec![3, 4], -3.0, 3.0))], |t, v| {
            let mask = vec![true, false, true, true, true, true, false, false, false, true, true, true];
            t.logsumexp_rows(v[0], Some(mask))
        }),
        op_case("logsumexp", vec![("a", uniform(r, vec![5], -3.0, 3.0))], |t, v| t.logsumexp(v[0])),
        op_case("softmax_rows", vec![("a", uniform(r, vec![2, 4], -3.0, 3.0))], |t, v| {
            t.softmax_rows(v[0], Some(&[true, true, false, true, true, false, false, true]))
        }),
        op_case(
            "attend_steps",
            vec![("w", uniform(r, vec![2, 3], 0.0, 1.0)), ("s", m(r, 6, 4))],
            |t, v| t.attend_steps(v[0], v[1]),
        ),
        op_case("pairwise_sum", vec![("a", m(r, 2, 3)), ("b", m(r, 3, 3))], |t, v| t.pairwise_sum(v[0], v[1])),
        op_case("sum", vec![("a", m(r, 2, 3))], |t, v| Ok(t.sum(v[0]))),
        op_case("mean", vec![("a", m(r, 2, 3))], |t, v| Ok(t.mean(v[0]))),
    ];
    cases
        .into_iter()
        .map(|(name, params, g)| {
            Ok(NamedCheck {
                name,
                report: grad_check(&params, cfg, |t, b| g(t, b))?,
            })
        })
        .collect()
}

/// A model small enough to probe every parameter coordinate.
pub fn toy_model() -> ModelConfig {
    ModelConfig {
        audio: AudioEncoderConfig {
            input_size: 8,
            layers: 2,
            channels: 2,
        },
        text: TextEncoderConfig {
            seq_len: 4,
            input_size: 3,
            hidden_size: 3,
            layers: 2,
            attention_size: 2,
        },
        classes: 3,
        disc_hidden: 4,
    }
}

/// `n` random samples shaped for `model`, labels cycling through classes.
pub fn toy_samples(model: &ModelConfig, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    let shape: FeatureShape = model.feature_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spec: Vec<f32> = (0..shape.spec_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = rng.random_range(1..=shape.seq_len);
            let emb: Vec<f32> = (0..shape.text_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Ok(LabeledSample {
                x_a: Spectrogram::new(shape.spec_rows, shape.spec_cols, spec, 0)?,
                x_t: WordEmbeddingSequence::new(shape.seq_len, shape.embed_dim, emb, len)?,
                label: i % model.classes,
                utterance_id: format!("toy{i}"),
                conflict: false,
            })
        })
        .collect()
}

/// Gradient check of the combined objective `(1 - α)·L1 + α·L2` on a
/// two-sample batch with different labels, in double precision.
pub fn composite_check(cfg: &GradCheckConfig, alpha: f64) -> Result<GradCheckReport> {
    let model = toy_model();
    let mut params: ParamStore<f64> = model.init_params(cfg.seed, true)?;
    // Move biases off zero so ReLU inputs are generic.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb1a5);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let samples = toy_samples(&model, 2, cfg.seed)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let batch = Batch::new(vec![0, 1], &labels);
    let inputs = BatchInputs::<f64>::gather(&samples, &batch.indices, model.feature_shape())?;
    grad_check(&params, cfg, |tape, bind| {
        Ok(batch_loss(tape, bind, &model, &inputs, &batch, alpha, true)?.total)
    })
}
