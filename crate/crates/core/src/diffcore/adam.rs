use serde::{Deserialize, Serialize};

use super::module::Module;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Per-step multiplicative learning-rate factor.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 5e-4,
            decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Exponential schedule reaching `lr_final` after `iters` steps.
    pub fn with_schedule(lr0: f64, lr_final: f64, iters: u64) -> Self {
        let decay = if iters == 0 {
            1.0
        } else {
            (lr_final / lr0).powf(1.0 / iters as f64)
        };
        Self {
            lr0,
            decay,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with an exponentially decayed learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_module<M: Module>(config: AdamConfig, module: &M) -> Self {
        let mut sizes = Vec::new();
        module.visit("", &mut |_, t| sizes.push(t.numel()));
        Self::new(config, &sizes)
    }

    /// Learning rate used by the next update: `lr0 · decay^step`.
    pub fn lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.config.lr0 * self.config.decay.powf(step as f64)
    }

    /// One update over every parameter slice, then advances the step.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[Vec<f32>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "{} moment slots, {} params, {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for i in 0..params.len() {
            self.check(i, params[i].len(), grads[i].len())?;
        }
        for (i, p) in params.iter_mut().enumerate() {
            self.update_slot(i, p, &grads[i]);
        }
        self.step += 1;
        Ok(())
    }

    /// Same as [`AdamState::step`] over a module's parameters in visit order.
    pub fn step_module<M: Module>(&mut self, module: &mut M, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} moment slots, {} grads", self.m.len(), grads.len()),
            ));
        }
        let mut sizes = Vec::new();
        module.visit("", &mut |_, t| sizes.push(t.numel()));
        if sizes.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("{} moment slots, {} params", self.m.len(), sizes.len()),
            ));
        }
        for (i, &n) in sizes.iter().enumerate() {
            self.check(i, n, grads[i].len())?;
        }
        let mut i = 0;
        module.visit_mut("", &mut |_, t| {
            t.update(|p| self.update_slot(i, p, &grads[i]));
            i += 1;
        });
        self.step += 1;
        Ok(())
    }

    fn check(&self, i: usize, np: usize, ng: usize) -> Result<()> {
        if np != ng || np != self.m[i].len() {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "slot {i}: param {np}, grad {ng}, moments {}",
                    self.m[i].len()
                ),
            ));
        }
        Ok(())
    }

    fn update_slot(&mut self, i: usize, p: &mut [f32], g: &[f32]) {
        let c = self.config;
        let t = (self.step + 1) as i32;
        let lr = self.lr() as f32;
        let bc1 = (1.0 - c.beta1.powi(t)) as f32;
        let bc2 = (1.0 - c.beta2.powi(t)) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lr: f64) -> AdamState {
        AdamState::new(
            AdamConfig {
                lr0: lr,
                ..AdamConfig::default()
            },
            &[1],
        )
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = single(0.1);
        let mut p = [0.0f32];
        adam.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = single(0.1);
        let mut p = [1.25f32];
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[vec![0.0]]).unwrap();
        }
        assert_eq!(p[0], 1.25);
    }

    /// Scalar Adam in f64 on (p-5)^2 as an independent reference.
    fn oracle(steps: usize, lr: f64) -> f64 {
        let (mut p, mut m, mut v) = (0.0f64, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (p - 5.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            p -= lr * mh / (vh.sqrt() + 1e-8);
        }
        p
    }

    #[test]
    fn quadratic_descent_converges() {
        let mut adam = single(0.3);
        let mut p = [0.0f32];
        for _ in 0..100 {
            let g = 2.0 * (p[0] - 5.0);
            adam.step(&mut [&mut p], &[vec![g]]).unwrap();
        }
        let reference = oracle(100, 0.3);
        assert!((reference - 5.0).abs() < 0.1, "oracle ended at {reference}");
        assert!((p[0] as f64 - 5.0).abs() < 0.1, "ended at {}", p[0]);
        assert!((p[0] as f64 - reference).abs() < 1e-3);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = single(0.1);
        let mut p = [0.0f32, 1.0];
        assert!(adam.step(&mut [&mut p], &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let adam = AdamState::new(AdamConfig::with_schedule(5e-4, 5e-5, 1000), &[]);
        assert!((adam.lr_at(0) - 5e-4).abs() < 1e-12);
        assert!((adam.lr_at(1000) - 5e-5).abs() < 1e-9);
        for s in 0..1000 {
            assert!(adam.lr_at(s + 1) < adam.lr_at(s));
            let want = 5e-4 * (0.1f64).powf(s as f64 / 1000.0);
            assert!((adam.lr_at(s) - want).abs() < 1e-9);
        }
    }
}
