//! Independent reference implementations checked against the library.

use emofuse::data::{generate, make_folds, sample_batch, SynthConfig};
use emofuse::dsp::{fft, FeatureShape, N_FFT};
use emofuse::encoders::{lstm_step, text_encode, LstmWeights, TextEncoderConfig};
use emofuse::fusion::{
    classify, discriminator_score, pairwise_scores, Discriminator, DiscriminatorVars,
};
use emofuse::tensor::{grad_check, GradCheckConfig, ParamStore, Tape, Tensor};
use emofuse::train::{alpha_grid, Checkpoint, CheckpointMeta, EvalReport, ModelConfig, TrainConfig};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (m, k, n) = (r.random_range(1..20), r.random_range(1..20), r.random_range(1..20));
        let a = random(&mut r, vec![m, k]);
        let b = random(&mut r, vec![k, n]);
        let bt = Tensor::new(vec![n, k], transpose(b.data(), k, n)).unwrap();
        let mut tape = Tape::new();
        let (av, bv, btv) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(bt));
        let c = tape.matmul(av, bv).unwrap();
        let c_nt = tape.matmul_nt(av, btv).unwrap();
        let want = naive_matmul(a.data(), b.data(), m, k, n);
        assert!(max_diff(tape.value(c).data(), &want) < 1e-12);
        assert!(max_diff(tape.value(c_nt).data(), &want) < 1e-12);
    }
}

fn naive_conv(x: &[f64], k: &[f64], bias: &[f64], b: usize, ci: usize, co: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * co * h * w];
    for n in 0..b {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for c in 0..ci {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((n * ci + c) * h + iy as usize) * w + ix as usize;
                                acc += k[((o * ci + c) * 3 + ky) * 3 + kx] * x[xi];
                            }
                        }
                    }
                    out[((n * co + o) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_six_loop_oracle() {
    let mut r = rng(2);
    for _ in 0..10 {
        let (b, ci, co) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let x = random(&mut r, vec![b, ci, h, w]);
        let k = random(&mut r, vec![co, ci, 3, 3]);
        let bias = random(&mut r, vec![co]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(bias.clone()));
        let y = tape.conv2d(xv, kv, Some(bv)).unwrap();
        let want = naive_conv(x.data(), k.data(), bias.data(), b, ci, co, h, w);
        assert!(max_diff(tape.value(y).data(), &want) < 1e-12);
    }
}

#[test]
fn conv_and_pool_gradients_match_finite_differences() {
    let mut r = rng(3);
    let mut p = ParamStore::new();
    p.insert("x", random(&mut r, vec![2, 2, 6, 6])).unwrap();
    p.insert("k", random(&mut r, vec![3, 2, 3, 3])).unwrap();
    p.insert("b", random(&mut r, vec![3])).unwrap();
    let weights = random(&mut r, vec![2, 3, 3, 3]);
    let report = grad_check(&p, &GradCheckConfig::default(), |tape, bind| {
        let y = tape.conv2d(bind.var("x")?, bind.var("k")?, Some(bind.var("b")?))?;
        let y = tape.maxpool2d(y)?;
        let w = tape.constant(weights.clone());
        let z = tape.mul(y, w)?;
        Ok(tape.sum(z))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn maxpool_matches_window_scan() {
    let mut r = rng(4);
    let (b, c, h, w) = (2, 3, 6, 8);
    let x = random(&mut r, vec![b, c, h, w]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.maxpool2d(xv).unwrap();
    let got = tape.value(y).data();
    let mut i = 0;
    for p in 0..b * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data()[p * h * w + (2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                assert_eq!(got[i], best);
                i += 1;
            }
        }
    }
}

#[test]
fn logsumexp_matches_shifted_naive_sum() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.random_range(1..30);
        let offset: f64 = r.random_range(-500.0..500.0);
        let x = Tensor::from_fn(vec![n], |_| offset + r.random_range(-5.0..5.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let l = tape.logsumexp(xv).unwrap();
        // exact for the offset, naive for the remainder
        let naive = offset + x.data().iter().map(|v| (v - offset).exp()).sum::<f64>().ln();
        let got: f64 = tape.value(l).item();
        assert!((got - naive).abs() < 1e-9 * naive.abs().max(1.0), "{got} vs {naive}");
    }
}

fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64))
                .sum()
        })
        .collect()
}

#[test]
fn fft_matches_naive_dft_and_parseval() {
    let mut r = rng(6);
    for trial in 0..1000 {
        let x: Vec<Complex64> = (0..N_FFT)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let got = fft(&x).unwrap();
        if trial < 20 {
            let want = naive_dft(&x);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "trial {trial}: {err}");
        }
        let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let freq: f64 = got.iter().map(|v| v.norm_sqr()).sum::<f64>() / N_FFT as f64;
        assert!(((time - freq) / time).abs() < 1e-9);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_step_matches_gate_by_gate_oracle() {
    let mut r = rng(7);
    let (b, inp, hid) = (3, 5, 4);
    let x = random(&mut r, vec![b, inp]);
    let h = random(&mut r, vec![b, hid]);
    let c = random(&mut r, vec![b, hid]);
    let w_ih = random(&mut r, vec![4 * hid, inp]);
    let w_hh = random(&mut r, vec![4 * hid, hid]);
    let bias = random(&mut r, vec![4 * hid]);
    let mut tape = Tape::new();
    let xs = [&x, &h, &c].map(|t| tape.constant(t.clone()));
    let w = LstmWeights {
        w_ih: tape.constant(w_ih.clone()),
        w_hh: tape.constant(w_hh.clone()),
        b: tape.constant(bias.clone()),
    };
    let (h2, c2) = lstm_step(&mut tape, xs[0], xs[1], xs[2], &w).unwrap();
    for n in 0..b {
        for j in 0..hid {
            let gate = |g: usize| {
                let row = g * hid + j;
                let mut z = bias.data()[row];
                for p in 0..inp {
                    z += w_ih.data()[row * inp + p] * x.data()[n * inp + p];
                }
                for p in 0..hid {
                    z += w_hh.data()[row * hid + p] * h.data()[n * hid + p];
                }
                z
            };
            let (i, f, g, o) = (sigmoid(gate(0)), sigmoid(gate(1)), gate(2).tanh(), sigmoid(gate(3)));
            let c_new = f * c.data()[n * hid + j] + i * g;
            let h_new = o * c_new.tanh();
            assert!((tape.value(c2).data()[n * hid + j] - c_new).abs() < 1e-12);
            assert!((tape.value(h2).data()[n * hid + j] - h_new).abs() < 1e-12);
        }
    }
}

#[test]
fn text_embedding_ignores_padded_positions() {
    let cfg = TextEncoderConfig {
        seq_len: 6,
        input_size: 5,
        hidden_size: 4,
        layers: 2,
        attention_size: 3,
    };
    let mut p = ParamStore::<f64>::new();
    cfg.init_params(11, &mut p).unwrap();
    let mut r = rng(8);
    let x = random(&mut r, vec![2, 6, 5]);
    let mut garbage = x.clone();
    // positions >= 3 of sample 0 and >= 5 of sample 1 are padding
    for (n, len) in [(0usize, 3usize), (1, 5)] {
        for t in len..6 {
            for d in 0..5 {
                garbage.data_mut()[(n * 6 + t) * 5 + d] = 100.0 * r.random_range(-1.0..1.0);
            }
        }
    }
    let run = |input: &Tensor<f64>| {
        let mut tape = Tape::new();
        let bind = p.bind(&mut tape);
        let xv = tape.constant(input.clone());
        let e = text_encode(&mut tape, &bind, &cfg, xv, &[3, 5]).unwrap();
        (tape.value(e.embedding).clone(), tape.value(e.attention).clone())
    };
    let (e1, a1) = run(&x);
    let (e2, a2) = run(&garbage);
    assert_eq!(e1, e2);
    assert_eq!(a1, a2);
    for t in 3..6 {
        assert_eq!(a1.data()[t], 0.0);
    }
}

#[test]
fn pairwise_discriminator_matches_two_matmul_oracle() {
    let mut r = rng(9);
    let d = Discriminator {
        audio_dim: 4,
        text_dim: 3,
        hidden: 5,
    };
    let mut p = ParamStore::<f64>::new();
    d.init_params(3, &mut p).unwrap();
    let (b, da, dt, hdim) = (4, 4, 3, 5);
    let ea = random(&mut r, vec![b, da]);
    let et = random(&mut r, vec![b, dt]);
    let mut tape = Tape::new();
    let bind = p.bind(&mut tape);
    let dv = DiscriminatorVars::bind(&bind).unwrap();
    let (eav, etv) = (tape.constant(ea.clone()), tape.constant(et.clone()));
    let s = pairwise_scores(&mut tape, &dv, eav, etv).unwrap();
    let got = tape.value(s).data().to_vec();

    let wh = p.get("discriminator.hidden.W").unwrap().data();
    let bh = p.get("discriminator.hidden.b").unwrap().data();
    let wo = p.get("discriminator.out.W").unwrap().data();
    let bo = p.get("discriminator.out.b").unwrap().data()[0];
    // W_ha·a_i and W_ht·t_j as two separate products.
    let wa: Vec<f64> = (0..hdim).flat_map(|k| wh[k * (da + dt)..k * (da + dt) + da].to_vec()).collect();
    let wt: Vec<f64> = (0..hdim).flat_map(|k| wh[k * (da + dt) + da..(k + 1) * (da + dt)].to_vec()).collect();
    let pa = naive_matmul(ea.data(), &transpose(&wa, hdim, da), b, da, hdim);
    let pt = naive_matmul(et.data(), &transpose(&wt, hdim, dt), b, dt, hdim);
    for i in 0..b {
        for j in 0..b {
            let mut score = bo;
            for k in 0..hdim {
                score += wo[k] * (pa[i * hdim + k] + pt[j * hdim + k] + bh[k]).max(0.0);
            }
            assert!((got[i * b + j] - score).abs() < 1e-12);
        }
    }
    // The concat route agrees on the diagonal.
    let diag = discriminator_score(&mut tape, &dv, eav, etv).unwrap();
    for i in 0..b {
        assert!((tape.value(diag).data()[i] - got[i * b + i]).abs() < 1e-12);
    }
}

#[test]
fn fused_scores_split_by_modality() {
    let mut r = rng(10);
    for _ in 0..1000 {
        let (c, da, dt) = (r.random_range(2..6), r.random_range(1..8), r.random_range(1..8));
        let w = random(&mut r, vec![c, da + dt]);
        let ea = random(&mut r, vec![1, da]);
        let et = random(&mut r, vec![1, dt]);
        let mut tape = Tape::new();
        let (wv, av, tv) = (tape.constant(w), tape.constant(ea), tape.constant(et));
        let sv = classify(&mut tape, wv, av, tv).unwrap();
        let (s, sa, st) = (tape.value(sv.s).data(), tape.value(sv.s_a).data(), tape.value(sv.s_t).data());
        for k in 0..c {
            assert!((s[k] - (sa[k] + st[k])).abs() < 1e-12);
        }
    }
}

fn small_synth(seed: u64, rho: f64) -> SynthConfig {
    SynthConfig {
        classes: 3,
        samples_per_class: 12,
        rho,
        seed,
        shape: FeatureShape {
            spec_rows: 8,
            spec_cols: 8,
            seq_len: 4,
            embed_dim: 3,
        },
        ..SynthConfig::default()
    }
}

#[test]
fn conflict_rate_tracks_rho() {
    let cfg = SynthConfig {
        samples_per_class: 1000,
        ..small_synth(1, 0.3)
    };
    let samples = generate(&cfg).unwrap();
    let conflicts = samples.iter().filter(|s| s.conflict).count() as f64;
    let n = samples.len() as f64;
    // 5 standard deviations of Binomial(3000, 0.3)
    let sd = (n * 0.3 * 0.7).sqrt();
    assert!((conflicts - 0.3 * n).abs() < 5.0 * sd, "{conflicts}");
    let none = generate(&small_synth(1, 0.0)).unwrap();
    assert!(none.iter().all(|s| !s.conflict));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::from_fn(vec![rows, cols], |_| r.random_range(-50.0..50.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let s = tape.softmax_rows(xv, None).unwrap();
        for row in tape.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn confusion_invariants(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let (labels, preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = EvalReport::from_predictions(&labels, &preds, 4).unwrap();
        let total: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, labels.len());
        let trace: u64 = (0..4).map(|c| r.confusion[c][c]).sum();
        prop_assert_eq!(r.wa, trace as f64 / labels.len() as f64);
        for (row, rates) in r.confusion.iter().zip(&r.confusion_rates) {
            if row.iter().sum::<u64>() > 0 {
                prop_assert!((rates.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let recalls: Vec<f64> = r.per_class_recall.iter().flatten().copied().collect();
        prop_assert!((r.ua - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn sampled_negatives_never_share_the_anchor_label(seed in any::<u64>(), bs in 2usize..40) {
        let samples = generate(&small_synth(seed % 1000, 0.3)).unwrap();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let mut r = rng(seed);
        let batch = sample_batch(&labels, bs, &mut r).unwrap();
        for (i, negs) in batch.negatives.iter().enumerate() {
            for &n in negs {
                prop_assert_ne!(batch.labels[n], batch.labels[i]);
            }
            let expected = batch.labels.iter().filter(|&&l| l != batch.labels[i]).count();
            prop_assert_eq!(negs.len(), expected);
        }
    }

    #[test]
    fn folds_partition_and_stratify(seed in any::<u64>(), k in 3usize..6) {
        let samples = generate(&small_synth(seed % 1000, 0.3)).unwrap();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let plan = make_folds(&labels, k, seed).unwrap();
        let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..3 {
            let counts: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
        for f in 0..k {
            let s = plan.split(f).unwrap();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), labels.len());
            prop_assert!(s.test.iter().all(|i| !s.train.contains(i) && !s.validation.contains(i)));
        }
    }

    #[test]
    fn alpha_grid_spans_unit_interval(n in 1usize..40) {
        let g = alpha_grid(1.0 / n as f64).unwrap();
        prop_assert_eq!(g.len(), n + 1);
        prop_assert_eq!(g[0], 0.0);
        prop_assert_eq!(*g.last().unwrap(), 1.0);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in prop::collection::vec(any::<f32>(), 1..50), epoch in 0usize..100) {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(vec![values.len()], values.clone()).unwrap()).unwrap();
        let ck = Checkpoint {
            meta: CheckpointMeta {
                model: ModelConfig::default(),
                train: TrainConfig::default(),
                epoch,
                rng_digest: "d".into(),
                fold: None,
            },
            params,
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        let got: Vec<u32> = back.params.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(back.meta.epoch, epoch);
    }
}
