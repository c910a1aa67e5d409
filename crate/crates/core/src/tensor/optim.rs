use super::checkpoint::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and must keep matching the parameter layout afterwards.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place; `grads[i]` belongs to the i-th parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {name} {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((x, gv), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mk = beta1 * *mk + (1.0 - beta1) * gv;
                *vk = beta2 * *vk + (1.0 - beta2) * gv * gv;
                *x -= lr * (*mk / bc1) / ((*vk / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.7);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = single(1.0);
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() });
        opt.step(&mut p, &[Tensor::scalar(3.0)]).unwrap();
        let want = 1.0 - 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((p.get("x").unwrap().item() - want).abs() < 1e-15);
    }

    #[test]
    fn minimises_parabola() {
        let mut p = single(1.0);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..100 {
            let x = p.get("x").unwrap().item();
            opt.step(&mut p, &[Tensor::scalar(2.0 * x)]).unwrap();
        }
        let x = p.get("x").unwrap().item();
        // Reference recurrence written out independently.
        let (mut r, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * r;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            r -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((x - r).abs() < 1e-12, "{x} vs {r}");
        assert!(x.abs() < 0.05, "x = {x}");
    }
}
