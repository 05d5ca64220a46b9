use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; off by default.
    pub weight_decay: f64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

/// First/second moment buffers and step counter for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| vec![0.0f32; t.len()];
        Self {
            m: params.ids().map(|id| zeros(params.get(id))).collect(),
            v: params.ids().map(|id| zeros(params.get(id))).collect(),
            t: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update using the grad buffers in `params` and
    /// the given learning rate. Parameters without a grad buffer or with
    /// `requires_grad == false` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer state for {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            let t = params.get(id);
            if let Some(g) = t.grad() {
                if g.len() != self.m[id.index()].len() {
                    return Err(Error::Dimension(format!(
                        "gradient for {} has {} elements, optimizer state has {}",
                        params.name(id),
                        g.len(),
                        self.m[id.index()].len()
                    )));
                }
            }
        }
        self.t += 1;
        let c = &self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = params
                    .ids()
                    .filter_map(|id| params.get(id).grad())
                    .flat_map(|g| g.iter())
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for id in params.ids() {
            let i = id.index();
            let tensor = params.get_mut(id);
            if !tensor.requires_grad() {
                continue;
            }
            let Some(g) = tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in tensor.data_mut().iter_mut().enumerate() {
                let gk = g[k] as f64 * clip;
                let mk = c.beta1 * m[k] as f64 + (1.0 - c.beta1) * gk;
                let vk = c.beta2 * v[k] as f64 + (1.0 - c.beta2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = (mk / bc1) / ((vk / bc2).sqrt() + c.eps);
                let mut x = *p as f64 - lr * update;
                if c.weight_decay > 0.0 {
                    x -= lr * c.weight_decay * *p as f64;
                }
                *p = x as f32;
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over `warmup` steps, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup: usize,
}

impl WarmupSchedule {
    /// Learning rate for the zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup == 0 || step >= self.warmup {
            self.base_lr
        } else {
            self.base_lr * (step + 1) as f64 / self.warmup as f64
        }
    }
}
