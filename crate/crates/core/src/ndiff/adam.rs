use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// updated as if their gradient were zero.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            ));
        }
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("{}: grad {:?} vs param {:?}", params.name(id), g.shape(), params.get(id).shape()),
                    ));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in params.ids() {
            let i = id.index();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.get_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        if *m == 0.0 && *v == 0.0 {
                            continue;
                        }
                        *m *= self.beta1;
                        *v *= self.beta2;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Convenience wrapper over [`AdamState::step`].
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamStore,
    grads: &Gradients,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}
