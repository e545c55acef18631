//! The in-voxel transformer: an encoder over surrounding-point features, a
//! max-pooled region feature, and a decoder that predicts radiance for ray
//! points from the encoded context.
//!
//! Every entry point works on a leading batch axis so that all rays of a
//! training batch run through one set of batched matrix products.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::module::join;
use crate::diffcore::{Linear, Module, Tensor};
use crate::error::{Error, Result};
use crate::field::{encode_points, EncodingSpec};
use crate::geometry::SegmentSamples;
use crate::voxelgrid::VoxelId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub surround_points: usize,
    pub ray_points: usize,
    /// Sphere radius is the voxel size divided by this.
    pub radius_divisor: f32,
    pub ffn_mult: usize,
    pub point_encoding: EncodingSpec,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            model_dim: 256,
            num_heads: 4,
            surround_points: 9,
            ray_points: 9,
            radius_divisor: 4.0,
            ffn_mult: 2,
            point_encoding: EncodingSpec::POSITION,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0
            || self.model_dim == 0
            || !self.model_dim.is_multiple_of(self.num_heads)
        {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.surround_points == 0 {
            return Err(Error::Config("surround_points must be >= 1".into()));
        }
        if !(self.radius_divisor > 0.0) {
            return Err(Error::Config(format!(
                "radius_divisor must be > 0, got {}",
                self.radius_divisor
            )));
        }
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be >= 1".into()));
        }
        Ok(())
    }
}

fn as_batched(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.rank() {
        2 => Ok((x.reshape(vec![1, x.shape()[0], x.shape()[1]])?, true)),
        3 => Ok((x.clone(), false)),
        _ => Err(Error::invalid(
            "attention",
            format!("expected rank 2 or 3, got {:?}", x.shape()),
        )),
    }
}

/// Multi-head scaled dot-product attention without projections.
///
/// `q` is `[B, Nq, d]` (or `[Nq, d]`), `k` and `v` are `[B, Nk, d]`. Heads
/// split the last axis into `num_heads` equal slices. Returns the
/// concatenated head outputs and each head's `[B, Nq, Nk]` weights.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    num_heads: usize,
) -> Result<(Tensor, Vec<Tensor>)> {
    let (q3, squeeze) = as_batched(q)?;
    let (k3, _) = as_batched(k)?;
    let (v3, _) = as_batched(v)?;
    let (b, nq, d) = (q3.shape()[0], q3.shape()[1], q3.shape()[2]);
    if k3.shape() != v3.shape() || k3.shape()[0] != b || k3.shape()[2] != d {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::invalid(
            "attention",
            format!("width {d} not divisible into {num_heads} heads"),
        ));
    }
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut outs = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = if num_heads == 1 {
            q3.clone()
        } else {
            q3.slice(2, lo, hi)?
        };
        let kh = if num_heads == 1 {
            k3.clone()
        } else {
            k3.slice(2, lo, hi)?
        };
        let vh = if num_heads == 1 {
            v3.clone()
        } else {
            v3.slice(2, lo, hi)?
        };
        let w = qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax(2)?;
        outs.push(w.matmul(&vh)?);
        weights.push(w);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let mut out = if num_heads == 1 {
        outs[0].clone()
    } else {
        Tensor::concat(&refs, 2)?
    };
    if squeeze {
        out = out.reshape(vec![nq, d])?;
    }
    Ok((out, weights))
}

/// Layer normalization over the last axis with a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![dim], 1.0),
            beta: Tensor::zeros(vec![dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm()?.mul(&self.gamma)?.add(&self.beta)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            heads,
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let (mixed, _) = attention(
            &self.query.forward(x)?,
            &self.key.forward(memory)?,
            &self.value.forward(memory)?,
            self.heads,
        )?;
        self.out.forward(&mixed)
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn new(dim: usize, mult: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(dim, dim * mult, rng),
            out: Linear::new(dim * mult, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.relu()?)
    }
}

impl Module for FeedForward {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    fn new(cfg: &TransformerConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        Self {
            norm_attn: LayerNorm::new(d),
            attn: MultiHeadAttention::new(d, cfg.num_heads, rng),
            norm_ffn: LayerNorm::new(d),
            ffn: FeedForward::new(d, cfg.ffn_mult, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.norm_attn.forward(x)?;
        let x = x.add(&self.attn.forward(&n, &n)?)?;
        x.add(&self.ffn.forward(&self.norm_ffn.forward(&x)?)?)
    }
}

impl Module for EncoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// Self-attention over ray tokens, cross-attention into the encoder output,
/// then a feed-forward layer, each pre-normed with a residual.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    fn new(cfg: &TransformerConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        Self {
            norm_self: LayerNorm::new(d),
            self_attn: MultiHeadAttention::new(d, cfg.num_heads, rng),
            norm_cross: LayerNorm::new(d),
            cross_attn: MultiHeadAttention::new(d, cfg.num_heads, rng),
            norm_ffn: LayerNorm::new(d),
            ffn: FeedForward::new(d, cfg.ffn_mult, rng),
        }
    }

    pub fn forward(&self, y: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let n = self.norm_self.forward(y)?;
        let y = y.add(&self.self_attn.forward(&n, &n)?)?;
        let y = y.add(
            &self
                .cross_attn
                .forward(&self.norm_cross.forward(&y)?, memory)?,
        )?;
        y.add(&self.ffn.forward(&self.norm_ffn.forward(&y)?)?)
    }
}

impl Module for DecoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm_self.visit(&join(prefix, "norm_self"), f);
        self.self_attn.visit(&join(prefix, "self_attn"), f);
        self.norm_cross.visit(&join(prefix, "norm_cross"), f);
        self.cross_attn.visit(&join(prefix, "cross_attn"), f);
        self.norm_ffn.visit(&join(prefix, "norm_ffn"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm_self.visit_mut(&join(prefix, "norm_self"), f);
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.norm_cross.visit_mut(&join(prefix, "norm_cross"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.norm_ffn.visit_mut(&join(prefix, "norm_ffn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// Region feature of one (voxel, ray) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeature {
    pub f: Vec<f32>,
    pub voxel_id: VoxelId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedRadiance {
    pub sigma_hat: Vec<f32>,
    pub color_hat: Vec<[f32; 3]>,
    pub t_values: Vec<f32>,
}

/// Batched decoder outputs.
#[derive(Clone, Debug)]
pub struct DecodedTensors {
    /// `[B, P]`.
    pub sigma: Tensor,
    /// `[B, P, 3]`.
    pub color: Tensor,
}

#[derive(Clone, Debug)]
pub struct InVoxelTransformer {
    config: TransformerConfig,
    pub encoder: Vec<EncoderBlock>,
    pub embed: Linear,
    pub decoder: Vec<DecoderBlock>,
    pub density_head: Linear,
    pub color_head: Linear,
}

impl InVoxelTransformer {
    pub fn new(config: TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let encoder = (0..config.num_blocks)
            .map(|_| EncoderBlock::new(&config, rng))
            .collect();
        let embed = Linear::new(config.point_encoding.output_dim(3), d, rng);
        let decoder = (0..config.num_blocks)
            .map(|_| DecoderBlock::new(&config, rng))
            .collect();
        Ok(Self {
            density_head: Linear::new(d, 1, rng),
            color_head: Linear::new(d, 3, rng),
            encoder,
            embed,
            decoder,
            config,
        })
    }

    /// Sets both output heads to zero.
    pub fn zero_heads(&mut self) {
        let d = self.config.model_dim;
        self.density_head = Linear::zeros(d, 1);
        self.color_head = Linear::zeros(d, 3);
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    fn check_width(&self, op: &'static str, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.shape()[2] != self.config.model_dim {
            return Err(Error::invalid(
                op,
                format!(
                    "expected [B, n, {}], got {:?}",
                    self.config.model_dim,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// `[B, S, D]` surrounding features to updated features of the same shape.
    pub fn encode(&self, surround_g: &Tensor) -> Result<Tensor> {
        self.check_width("encode", surround_g)?;
        let mut h = surround_g.clone();
        for block in &self.encoder {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    /// `[B, P, pe]` encoded ray points and `[B, S, D]` memory to radiance.
    pub fn decode(&self, points_enc: &Tensor, h: &Tensor) -> Result<DecodedTensors> {
        self.check_width("decode", h)?;
        let (b, p) = (points_enc.shape()[0], points_enc.shape()[1]);
        let mut y = self.embed.forward(points_enc)?.relu()?;
        for block in &self.decoder {
            y = block.forward(&y, h)?;
        }
        let sigma = self
            .density_head
            .forward(&y)?
            .softplus()?
            .reshape(vec![b, p])?;
        let color = self.color_head.forward(&y.relu()?)?.sigmoid()?;
        Ok(DecodedTensors { sigma, color })
    }

    /// Unbatched decode of one ray's points with `h` as `[S, D]`.
    pub fn decode_ray(&self, ray_points: &SegmentSamples, h: &Tensor) -> Result<DecodedRadiance> {
        let p = ray_points.points.len();
        if p == 0 {
            return Ok(DecodedRadiance {
                sigma_hat: Vec::new(),
                color_hat: Vec::new(),
                t_values: Vec::new(),
            });
        }
        let (h3, _) = as_batched(h)?;
        let enc = encode_points(&ray_points.points, &self.config.point_encoding);
        let enc = enc.reshape(vec![1, p, enc.shape()[1]])?;
        let out = self.decode(&enc, &h3)?;
        Ok(DecodedRadiance {
            sigma_hat: out.sigma.to_vec(),
            color_hat: out
                .color
                .data()
                .chunks(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
            t_values: ray_points.t_values.clone(),
        })
    }
}

/// Componentwise max over the point axis: `[B, S, D] -> [B, D]` (or `[S, D] -> [D]`).
pub fn pool(h: &Tensor) -> Result<Tensor> {
    if h.rank() < 2 || h.shape()[h.rank() - 2] == 0 {
        return Err(Error::invalid(
            "pool",
            format!("needs at least one row, got {:?}", h.shape()),
        ));
    }
    h.max(h.rank() - 2)
}

impl Module for InVoxelTransformer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.embed.visit(&join(prefix, "embed"), f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.density_head.visit(&join(prefix, "density_head"), f);
        self.color_head.visit(&join(prefix, "color_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.embed.visit_mut(&join(prefix, "embed"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.density_head
            .visit_mut(&join(prefix, "density_head"), f);
        self.color_head.visit_mut(&join(prefix, "color_head"), f);
    }
}
