use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GradMap, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            let mut z = ParamStore::new();
            for (name, t) in params.iter() {
                z.insert(name, Tensor::zeros(t.shape().to_vec())).expect("unique names");
            }
            z
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, grads: &GradMap<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c = |x: f64| T::from_f64_lossy(x);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let (one_b1, one_b2) = (c(1.0 - cfg.beta1), c(1.0 - cfg.beta2));
    let corr1 = c(1.0 - cfg.beta1.powi(t));
    let corr2 = c(1.0 - cfg.beta2.powi(t));
    let lr = c(cfg.learning_rate);
    let eps = c(cfg.eps);
    for (name, p) in params.iter_mut() {
        let g = grads.require(name)?;
        let m = state.m.get_mut(name).ok_or_else(|| Error::Contract(format!("no moment for `{name}`")))?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::dim(format!(
                "adam: `{name}` has shape {:?}, gradient {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
        let v = state.v.get_mut(name).expect("moments share names");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi / corr1;
            let v_hat = *vi / corr2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
