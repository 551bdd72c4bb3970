use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::model::{forward, BatchInputs, ModelConfig};
use crate::dsp::LabeledSample;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tape};

/// Classification metrics over one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    /// Overall accuracy.
    pub wa: f64,
    /// Mean of per-class recalls over classes present in the set.
    pub ua: f64,
    /// `None` for classes with no support.
    pub per_class_recall: Vec<Option<f64>>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    /// Row-normalized `confusion`; all-zero rows stay zero.
    pub confusion_rates: Vec<Vec<f64>>,
    /// Fraction of items whose audio-only and text-only scores pick the
    /// same class. `None` when computed from bare predictions.
    pub modality_agreement: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Input("cannot evaluate an empty sample set".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::dim(format!("{} labels vs {} predictions", labels.len(), predictions.len())));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= classes || p >= classes {
                return Err(Error::Range(format!("class {} outside [0, {classes})", l.max(p))));
            }
            confusion[l][p] += 1;
        }
        let total = labels.len() as f64;
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let mut per_class_recall = Vec::with_capacity(classes);
        let mut confusion_rates = Vec::with_capacity(classes);
        for (c, row) in confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            if support == 0 {
                per_class_recall.push(None);
                confusion_rates.push(vec![0.0; classes]);
            } else {
                let s = support as f64;
                confusion_rates.push(row.iter().map(|&n| n as f64 / s).collect());
                per_class_recall.push(Some(row[c] as f64 / s));
            }
        }
        let supported: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        Ok(Self {
            count: labels.len(),
            wa: correct as f64 / total,
            ua: supported.iter().sum::<f64>() / supported.len() as f64,
            per_class_recall,
            confusion,
            confusion_rates,
            modality_agreement: None,
        })
    }

    /// Raw counts then row rates, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let c = self.confusion.len();
        let mut out = String::from("true_class");
        for p in 0..c {
            out.push_str(&format!(",count_pred{p}"));
        }
        for p in 0..c {
            out.push_str(&format!(",rate_pred{p}"));
        }
        out.push('\n');
        for (t, (counts, rates)) in self.confusion.iter().zip(&self.confusion_rates).enumerate() {
            out.push_str(&t.to_string());
            for n in counts {
                out.push_str(&format!(",{n}"));
            }
            for r in rates {
                out.push_str(&format!(",{r}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-item score rows `[C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRows {
    pub s: Vec<f64>,
    pub s_a: Vec<f64>,
    pub s_t: Vec<f64>,
}

pub fn argmax(v: &[f64]) -> usize {
    // First index wins ties.
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fused and per-modality scores for `indices`, in order, computed in
/// batches of `batch_size`.
pub fn predict_scores<T: Real>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    samples: &[LabeledSample],
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<ScoreRows>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let inputs = BatchInputs::<T>::gather(samples, chunk, cfg.feature_shape())?;
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape);
        let f = forward(&mut tape, &bind, cfg, &inputs)?;
        let c = cfg.classes;
        let rows = |v| -> Vec<Vec<f64>> {
            tape.value(v)
                .data()
                .chunks(c)
                .map(|r| r.iter().map(|x: &T| x.to_f64_lossy()).collect())
                .collect()
        };
        let (s, sa, st) = (rows(f.scores.s), rows(f.scores.s_a), rows(f.scores.s_t));
        for ((s, s_a), s_t) in s.into_iter().zip(sa).zip(st) {
            out.push(ScoreRows { s, s_a, s_t });
        }
    }
    Ok(out)
}

/// Scores averaged per utterance (segments grouped by utterance id, in
/// first-appearance order), with the utterance label.
pub fn aggregate_by_utterance(samples: &[LabeledSample], indices: &[usize], scores: &[ScoreRows]) -> Result<Vec<(usize, ScoreRows)>> {
    let mut groups: IndexMap<&str, (usize, Vec<&ScoreRows>)> = IndexMap::new();
    for (&i, sc) in indices.iter().zip(scores) {
        let s = &samples[i];
        let entry = groups.entry(s.utterance_id.as_str()).or_insert((s.label, Vec::new()));
        if entry.0 != s.label {
            return Err(Error::Input(format!(
                "utterance `{}` has segments with different labels",
                s.utterance_id
            )));
        }
        entry.1.push(sc);
    }
    let mean = |rows: &[&ScoreRows], pick: fn(&ScoreRows) -> &Vec<f64>| -> Vec<f64> {
        let n = rows.len() as f64;
        let c = pick(rows[0]).len();
        (0..c).map(|k| rows.iter().map(|r| pick(r)[k]).sum::<f64>() / n).collect()
    };
    Ok(groups
        .into_values()
        .map(|(label, rows)| {
            let agg = ScoreRows {
                s: mean(&rows, |r| &r.s),
                s_a: mean(&rows, |r| &r.s_a),
                s_t: mean(&rows, |r| &r.s_t),
            };
            (label, agg)
        })
        .collect())
}

/// Utterance-level metrics for the samples at `indices`.
pub fn evaluate<T: Real>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    samples: &[LabeledSample],
    indices: &[usize],
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Input("cannot evaluate an empty sample set".into()));
    }
    let scores = predict_scores(params, cfg, samples, indices, 64)?;
    let utts = aggregate_by_utterance(samples, indices, &scores)?;
    let labels: Vec<usize> = utts.iter().map(|(l, _)| *l).collect();
    let preds: Vec<usize> = utts.iter().map(|(_, s)| argmax(&s.s)).collect();
    let agree = utts.iter().filter(|(_, s)| argmax(&s.s_a) == argmax(&s.s_t)).count();
    let mut report = EvalReport::from_predictions(&labels, &preds, cfg.classes)?;
    report.modality_agreement = Some(agree as f64 / utts.len() as f64);
    Ok(report)
}
