use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use super::trainer::{train, TrainConfig};
use crate::data::make_folds;
use crate::dsp::LabeledSample;
use crate::error::{Error, Result};
use crate::par;

/// `{0, step, 2·step, …, 1}`. `1 / step` must be a whole number.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide [0, 1]")));
    }
    let n = n as usize;
    // i / n rather than i·step keeps 0.3 and 0.7 exact decimals.
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub step: f64,
    pub folds: usize,
    pub fold_seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            folds: 3,
            fold_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    /// Best validation UA per fold, in fold order.
    pub fold_ua: Vec<f64>,
    pub fold_wa: Vec<f64>,
    pub mean_ua: Option<f64>,
    pub mean_wa: Option<f64>,
    /// First training failure for this grid point.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Index into `rows`; `None` when every point failed.
    pub selected: Option<usize>,
}

impl GridReport {
    pub fn selected_row(&self) -> Option<&GridRow> {
        self.selected.map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("alpha,mean_val_ua,mean_val_wa,fold_val_ua,selected,status\n");
        for (i, r) in self.rows.iter().enumerate() {
            let folds: Vec<String> = r.fold_ua.iter().map(|u| u.to_string()).collect();
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("failed: {}", e.replace([',', '\n'], " ")),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{status}\n",
                r.alpha,
                opt(r.mean_ua),
                opt(r.mean_wa),
                folds.join(";"),
                self.selected == Some(i),
            ));
        }
        out
    }
}

/// One run per (α, fold); each run trains on the fold's training part and
/// reports its best validation UA. Runs execute in parallel. The selected α
/// has the highest mean UA, the smaller α winning exact ties.
pub fn grid_search_alpha(
    samples: &[LabeledSample],
    model: &ModelConfig,
    base: &TrainConfig,
    grid: &GridConfig,
) -> Result<GridReport> {
    let alphas = alpha_grid(grid.step)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let plan = make_folds(&labels, grid.folds, grid.fold_seed)?;
    let splits = (0..grid.folds).map(|f| plan.split(f)).collect::<Result<Vec<_>>>()?;
    let k = grid.folds;
    let runs = par::map_range(alphas.len() * k, |j| {
        let (a, f) = (j / k, j % k);
        let cfg = TrainConfig {
            alpha: alphas[a],
            use_discriminator: true,
            ..*base
        };
        let split = &splits[f];
        let out = train(samples, &split.train, &split.validation, model, &cfg)?;
        let best = &out.curve[out.best_epoch - 1];
        match (best.val_ua, best.val_wa) {
            (Some(ua), Some(wa)) => Ok((ua, wa)),
            _ => Err(Error::Contract("fold has no validation samples".into())),
        }
    });
    let mut rows = Vec::with_capacity(alphas.len());
    for (a, &alpha) in alphas.iter().enumerate() {
        let mut row = GridRow {
            alpha,
            fold_ua: Vec::with_capacity(k),
            fold_wa: Vec::with_capacity(k),
            mean_ua: None,
            mean_wa: None,
            error: None,
        };
        for r in &runs[a * k..(a + 1) * k] {
            match r {
                Ok((ua, wa)) => {
                    row.fold_ua.push(*ua);
                    row.fold_wa.push(*wa);
                }
                Err(e) if row.error.is_none() => row.error = Some(e.to_string()),
                Err(_) => {}
            }
        }
        if row.error.is_none() {
            row.mean_ua = Some(row.fold_ua.iter().sum::<f64>() / k as f64);
            row.mean_wa = Some(row.fold_wa.iter().sum::<f64>() / k as f64);
        }
        rows.push(row);
    }
    let selected = select(&rows);
    Ok(GridReport { rows, selected })
}

fn select(rows: &[GridRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(ua) = r.mean_ua {
            if best.is_none_or(|(_, b)| ua > b) {
                best = Some((i, ua));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_eleven_points() {
        let g = alpha_grid(0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[7], 0.7);
    }

    #[test]
    fn bad_steps() {
        assert!(alpha_grid(0.0).is_err());
        assert!(alpha_grid(0.3).is_err());
        assert!(alpha_grid(f64::NAN).is_err());
        assert_eq!(alpha_grid(0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    fn row(alpha: f64, ua: Option<f64>) -> GridRow {
        GridRow {
            alpha,
            fold_ua: vec![],
            fold_wa: vec![],
            mean_ua: ua,
            mean_wa: ua,
            error: ua.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn ties_go_to_smaller_alpha_and_failures_are_skipped() {
        let rows = vec![row(0.0, Some(0.5)), row(0.1, None), row(0.2, Some(0.7)), row(0.3, Some(0.7))];
        assert_eq!(select(&rows), Some(2));
        assert_eq!(select(&[row(0.0, None)]), None);
    }
}
