//! Positional encoding and the radiance-field MLP.
//!
//! The field maps an encoded position and view direction to a colour, a
//! density and the trunk feature `g` used by the in-voxel transformer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::module::join;
use crate::diffcore::{Linear, Module, Tensor};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub num_freqs: usize,
    #[serde(default = "yes")]
    pub include_input: bool,
}

fn yes() -> bool {
    true
}

impl EncodingSpec {
    pub const fn new(num_freqs: usize, include_input: bool) -> Self {
        Self {
            num_freqs,
            include_input,
        }
    }

    pub const POSITION: Self = Self::new(10, true);
    pub const DIRECTION: Self = Self::new(4, true);

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (self.include_input as usize + 2 * self.num_freqs)
    }
}

/// `[x, sin(x), cos(x), sin(2x), cos(2x), …]`, each block the full vector.
pub fn positional_encode(x: &[f32], spec: &EncodingSpec) -> Vec<f32> {
    let mut out = Vec::with_capacity(spec.output_dim(x.len()));
    encode_into(x, spec, &mut out);
    out
}

fn encode_into(x: &[f32], spec: &EncodingSpec, out: &mut Vec<f32>) {
    if spec.include_input {
        out.extend_from_slice(x);
    }
    for k in 0..spec.num_freqs {
        let f = (1u64 << k) as f32;
        out.extend(x.iter().map(|&v| (f * v).sin()));
        out.extend(x.iter().map(|&v| (f * v).cos()));
    }
}

/// Encodes each point into one row of a constant `[n, dim]` tensor.
pub fn encode_points(points: &[Vec3], spec: &EncodingSpec) -> Tensor {
    let dim = spec.output_dim(3);
    let mut data = Vec::with_capacity(points.len() * dim);
    for p in points {
        encode_into(&p.to_array(), spec, &mut data);
    }
    Tensor::new(vec![points.len(), dim], data).expect("encoding length matches")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub depth: usize,
    pub width: usize,
    /// Trunk layer whose output is concatenated with `γ(x)`.
    pub skip: Option<usize>,
    pub color_width: usize,
    pub position_encoding: EncodingSpec,
    pub direction_encoding: EncodingSpec,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            width: 256,
            skip: Some(4),
            color_width: 128,
            position_encoding: EncodingSpec::POSITION,
            direction_encoding: EncodingSpec::DIRECTION,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.color_width == 0 {
            return Err(Error::Config(format!(
                "field depth, width and color_width must be positive (got {}, {}, {})",
                self.depth, self.width, self.color_width
            )));
        }
        if let Some(s) = self.skip {
            if s + 1 >= self.depth {
                return Err(Error::Config(format!(
                    "field skip layer {s} must precede the last trunk layer (depth {})",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    pub fn position_dim(&self) -> usize {
        self.position_encoding.output_dim(3)
    }

    pub fn direction_dim(&self) -> usize {
        self.direction_encoding.output_dim(3)
    }

    fn trunk_input(&self, layer: usize) -> usize {
        match layer {
            0 => self.position_dim(),
            l if Some(l - 1) == self.skip => self.width + self.position_dim(),
            _ => self.width,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FieldParams {
    config: FieldConfig,
    pub trunk: Vec<Linear>,
    pub density: Linear,
    pub color_hidden: Linear,
    pub color_out: Linear,
}

/// Batched field outputs for `n` points.
#[derive(Clone, Debug)]
pub struct FieldTensors {
    /// `[n, 3]`, in `(0, 1)`.
    pub color: Tensor,
    /// `[n]`, non-negative.
    pub sigma: Tensor,
    /// `[n, width]`.
    pub feature: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput {
    pub color: [f32; 3],
    pub sigma: f32,
    pub feature: Vec<f32>,
}

impl FieldParams {
    pub fn new(config: FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::build(config, |i, o| Linear::new(i, o, rng))
    }

    /// All weights and biases zero.
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        Self::build(config, Linear::zeros)
    }

    fn build(config: FieldConfig, mut make: impl FnMut(usize, usize) -> Linear) -> Result<Self> {
        config.validate()?;
        let trunk = (0..config.depth)
            .map(|l| make(config.trunk_input(l), config.width))
            .collect();
        Ok(Self {
            trunk,
            density: make(config.width, 1),
            color_hidden: make(config.width + config.direction_dim(), config.color_width),
            color_out: make(config.color_width, 3),
            config,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    /// Trunk feature `g` for encoded positions `[n, pos_dim]`.
    pub fn trunk(&self, pos_enc: &Tensor) -> Result<Tensor> {
        let mut h = pos_enc.clone();
        for (l, layer) in self.trunk.iter().enumerate() {
            h = layer.forward(&h)?.relu()?;
            if Some(l) == self.config.skip {
                h = Tensor::concat(&[&h, pos_enc], 1)?;
            }
        }
        Ok(h)
    }

    pub fn density_from(&self, feature: &Tensor) -> Result<Tensor> {
        let n = feature.shape()[0];
        self.density.forward(feature)?.softplus()?.reshape(vec![n])
    }

    pub fn forward(&self, pos_enc: &Tensor, dir_enc: &Tensor) -> Result<FieldTensors> {
        let feature = self.trunk(pos_enc)?;
        let sigma = self.density_from(&feature)?;
        let joined = Tensor::concat(&[&feature, dir_enc], 1)?;
        let color = self
            .color_out
            .forward(&self.color_hidden.forward(&joined)?.relu()?)?
            .sigmoid()?;
        Ok(FieldTensors {
            color,
            sigma,
            feature,
        })
    }

    /// Evaluates points with per-point directions.
    pub fn forward_points(&self, points: &[Vec3], dirs: &[Vec3]) -> Result<FieldTensors> {
        if points.len() != dirs.len() {
            return Err(Error::invalid(
                "field_forward",
                format!("{} points but {} directions", points.len(), dirs.len()),
            ));
        }
        let pe = encode_points(points, &self.config.position_encoding);
        let de = encode_points(dirs, &self.config.direction_encoding);
        self.forward(&pe, &de)
    }

    /// Trunk features only; `g` does not depend on the view direction.
    pub fn features_at(&self, points: &[Vec3]) -> Result<Tensor> {
        self.trunk(&encode_points(points, &self.config.position_encoding))
    }
}

/// Single-point evaluation with input checks.
pub fn field_forward(params: &FieldParams, x: Vec3, d: Vec3) -> Result<FieldOutput> {
    if !x.is_finite() || !d.is_finite() {
        return Err(Error::Domain {
            op: "field_forward",
            reason: format!("non-finite input x={x:?} d={d:?}"),
        });
    }
    if (d.length() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(
            "field_forward",
            format!("direction must be unit length, |d| = {}", d.length()),
        ));
    }
    let out = params.forward_points(&[x], &[d])?;
    let c = out.color.data();
    Ok(FieldOutput {
        color: [c[0], c[1], c[2]],
        sigma: out.sigma.data()[0],
        feature: out.feature.to_vec(),
    })
}

impl Module for FieldParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.trunk.iter().enumerate() {
            l.visit(&join(prefix, &format!("trunk.{i}")), f);
        }
        self.density.visit(&join(prefix, "density"), f);
        self.color_hidden.visit(&join(prefix, "color_hidden"), f);
        self.color_out.visit(&join(prefix, "color_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.trunk.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("trunk.{i}")), f);
        }
        self.density.visit_mut(&join(prefix, "density"), f);
        self.color_hidden
            .visit_mut(&join(prefix, "color_hidden"), f);
        self.color_out.visit_mut(&join(prefix, "color_out"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn encode_zero() {
        assert_eq!(
            positional_encode(&[0.0], &EncodingSpec::new(2, true)),
            vec![0.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn encode_one() {
        let e = positional_encode(&[1.0], &EncodingSpec::new(1, true));
        let want = [1.0f64, 1f64.sin(), 1f64.cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_dim() {
        assert_eq!(
            positional_encode(&[0.1, 0.2, 0.3], &EncodingSpec::POSITION).len(),
            63
        );
        assert_eq!(EncodingSpec::new(3, false).output_dim(3), 18);
    }

    #[test]
    fn zero_weights_closed_form() {
        let p = FieldParams::zeros(FieldConfig::default()).unwrap();
        let out = field_forward(&p, Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((out.sigma - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(out.color, [0.5; 3]);
        assert_eq!(out.feature.len(), 256);
    }

    #[test]
    fn feature_ignores_direction() {
        let cfg = FieldConfig {
            depth: 3,
            width: 16,
            skip: Some(1),
            color_width: 8,
            ..FieldConfig::default()
        };
        let p = FieldParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Vec3::new(0.4, 0.1, -0.7);
        let a = field_forward(&p, x, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let b = field_forward(&p, x, Vec3::new(0.0, 0.6, 0.8)).unwrap();
        assert_eq!(a.feature, b.feature);
        assert_eq!(a.sigma, b.sigma);
        assert_ne!(a.color, b.color);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = FieldParams::zeros(FieldConfig::default()).unwrap();
        assert!(
            field_forward(&p, Vec3::new(f32::NAN, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)).is_err()
        );
        assert!(field_forward(&p, Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)).is_err());
        let bad = FieldConfig {
            depth: 4,
            skip: Some(3),
            ..FieldConfig::default()
        };
        assert!(FieldParams::zeros(bad).is_err());
    }
}
