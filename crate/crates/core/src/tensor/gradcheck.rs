//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, Bindings, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Probe at most this many coordinates per parameter (chosen at
    /// random); `None` probes every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares reverse-mode gradients of the scalar program `f` against
/// central differences at `params`.
pub fn grad_check<F>(params: &ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &Bindings) -> Result<Var>,
{
    let eval = |p: &ParamStore<f64>, name: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let loss = f(&mut tape, &b)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Probe {
                param: name.to_string(),
                msg: format!("loss evaluated to {v}"),
            });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let loss = f(&mut tape, &bindings)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::Numerical("non-finite loss at the probe point".into()));
    }
    let analytic = backward(&tape, loss, &bindings)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (name, value) in params.iter() {
        let n = value.len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let grad = analytic.require(name)?.data();
        let mut check = ParamCheck {
            name: name.to_string(),
            probed: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for &i in &coords {
            let orig = value.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + cfg.step;
            let up = eval(&probe, name)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - cfg.step;
            let down = eval(&probe, name)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * cfg.step);
            let err = relative_error(grad[i], fd);
            if err > check.max_rel_error || check.max_rel_error.is_nan() {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tol: cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap()).unwrap();
        let r = grad_check(&p, &GradCheckConfig::default(), |t, b| {
            let w = b.var("w")?;
            let sq = t.mul(w, w)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-10, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn relu_away_from_kink() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![4], vec![-0.5, 0.1, 0.7, -0.1]).unwrap()).unwrap();
        let r = grad_check(&p, &GradCheckConfig::default(), |t, b| {
            let x = b.var("x")?;
            let r = t.relu(x);
            let sq = t.mul(r, r)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_probe_names_parameter() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        let err = grad_check(&p, &GradCheckConfig::default(), |t, b| {
            let w = b.var("w")?;
            // finite at 1.0 exactly, infinite once perturbed
            let v = t.value(w).item();
            let c = t.constant(Tensor::scalar(if v == 1.0 { 0.0 } else { f64::INFINITY }));
            let s = t.sum(w);
            t.add(s, c)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Probe { ref param, .. } if param == "w"));
    }
}
