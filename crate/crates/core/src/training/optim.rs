//! Adam with L2 weight decay folded into the gradient.

use std::collections::BTreeMap;

use crate::model::params::{Grads, ParamSet, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step counter; everything needed to resume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    /// Paths exempt from weight decay.
    pub no_decay: ParamSet,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, no_decay: ParamSet) -> Self {
        Self {
            config,
            no_decay,
            state: AdamState::default(),
        }
    }

    /// One update of every path in `trainable`. Paths without a gradient
    /// still take a step (their gradient is zero apart from weight decay).
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, trainable: &ParamSet, lr: f64) {
        self.state.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for path in trainable {
            let theta = params.get_mut(path);
            let wd = if self.no_decay.contains(path) { 0.0 } else { weight_decay };
            let m = self
                .state
                .m
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(theta.raw_dim()));
            let v = self
                .state
                .v
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(theta.raw_dim()));
            let g = grads.get(path);
            let th = theta.as_slice_mut().expect("standard layout");
            let ms = m.as_slice_mut().expect("standard layout");
            let vs = v.as_slice_mut().expect("standard layout");
            for i in 0..th.len() {
                let gi = g.map_or(0.0, |g| g.as_slice().expect("standard layout")[i]) + wd * th[i];
                ms[i] = beta1 * ms[i] + (1.0 - beta1) * gi;
                vs[i] = beta2 * vs[i] + (1.0 - beta2) * gi * gi;
                let mh = ms[i] / c1;
                let vh = vs[i] / c2;
                th[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
