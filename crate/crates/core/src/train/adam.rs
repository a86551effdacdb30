use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to the i-th parameter;
/// `None` means the parameter received no gradient and counts as zero.
pub fn adam_step(params: &mut ParamStore, grads: &[Option<&[f64]>], state: &mut OptimizerState, hp: AdamHyper) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if m.shape() != p.value.shape() || g.is_some_and(|g| g.len() != p.value.numel()) {
            return Err(Error::shape("adam_step", format!("gradient or moment mismatch for {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = p.value.data_mut();
        for j in 0..w.len() {
            let gj = grads[i].map_or(0.0, |g| g[j]);
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
            w[j] -= hp.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}
