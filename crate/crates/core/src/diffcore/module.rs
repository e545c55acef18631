use rand::Rng;

use super::graph::{Gradients, Graph};
use super::tensor::Tensor;
use crate::error::Result;

/// A container of named learnable tensors, visited in a fixed order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Copy of `module` whose parameters are leaves of `graph`.
pub fn attach<M: Module + Clone>(module: &M, graph: &Graph) -> M {
    let mut out = module.clone();
    out.visit_mut("", &mut |_, t| *t = graph.leaf(t.detach()));
    out
}

/// Gradients for every parameter of an attached module, in visit order.
pub fn collect_grads<M: Module>(attached: &M, grads: &Gradients) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    attached.visit("", &mut |_, t| out.push(grads.get_or_zero(t)));
    out
}

pub fn param_count<M: Module>(module: &M) -> usize {
    let mut n = 0;
    module.visit("", &mut |_, t| n += t.numel());
    n
}

/// Affine map `y = x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap(),
            bias: Tensor::new(vec![fan_out], b).unwrap(),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Tensor {
    /// In-place update of a parameter's values. Copies the buffer first if
    /// it is still shared.
    pub fn update(&mut self, f: impl FnOnce(&mut [f32])) {
        *self = self.detach();
        let mut data = self.to_vec();
        f(&mut data);
        *self = Tensor::new(self.shape().to_vec(), data).expect("update preserves shape");
    }
}
