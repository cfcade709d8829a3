use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.lr > 0.0 && self.lr.is_finite(), "learning rate must be > 0, got {}", self.lr);
        contract!((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)");
        contract!((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)");
        contract!(self.eps > 0.0, "eps must be > 0");
        Ok(())
    }
}

/// Bias-corrected Adam with moments stored by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0, m: ParamStore::new(), v: ParamStore::new() }
    }

    /// Advances the step counter and updates `params`; use [`Adam::tick`] and
    /// [`Adam::apply`] to update several stores in one step.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        self.tick();
        self.apply(params, grads)
    }

    pub fn tick(&mut self) {
        self.t += 1;
    }

    /// Updates `params` using the current step count.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        contract!(self.t >= 1, "apply before the first tick");
        contract!(params.len() == grads.len(), "{} parameters but {} gradients", params.len(), grads.len());
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((name, p), g) in params.iter_mut().zip(grads) {
            contract!(p.shape() == g.shape(), "gradient shape mismatch for {name}");
            if self.m.get(name).is_none() {
                self.m.insert(name, Tensor::zeros(p.shape()))?;
                self.v.insert(name, Tensor::zeros(p.shape()))?;
            }
            let m = self.m.get_mut(name).expect("inserted above");
            let v = self.v.get_mut(name).expect("inserted above");
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
