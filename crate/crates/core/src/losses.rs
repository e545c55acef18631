//! Photometric and voxel-contrastive objectives.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::voxelgrid::VoxelId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain sum over rays (and anchors).
    Sum,
    /// Sum divided by the number of rays (anchors).
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f32,
    pub tau: f32,
    pub contrastive_enabled: bool,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.1,
            contrastive_enabled: true,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Squared colour error summed over channels and rays. `pred` and `gt`
/// share a shape whose last axis holds the channels.
pub fn mse_loss(pred: &Tensor, gt: &Tensor, reduction: Reduction) -> Result<Tensor> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    let diff = pred.sub(gt)?;
    let total = diff.mul(&diff)?.sum_all()?;
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => {
            let channels = pred.shape().last().copied().unwrap_or(1).max(1);
            let rays = (pred.numel() / channels).max(1);
            total.scale(1.0 / rays as f32)
        }
    }
}

/// `V·R` region features stored voxel-major, `R` per voxel.
#[derive(Clone, Debug)]
pub struct BatchFeatures {
    /// `[V·R, D]`.
    pub f: Tensor,
    pub voxels: Vec<VoxelId>,
    pub rays_per_voxel: usize,
}

impl BatchFeatures {
    pub fn new(f: Tensor, voxels: Vec<VoxelId>, rays_per_voxel: usize) -> Result<Self> {
        let (v, r) = (voxels.len(), rays_per_voxel);
        if v < 2 {
            return Err(Error::invalid(
                "contrastive_loss",
                format!("needs V >= 2 voxels, got {v}"),
            ));
        }
        if r < 2 {
            return Err(Error::invalid(
                "contrastive_loss",
                format!("needs R >= 2 rays per voxel for a distinct positive, got {r}"),
            ));
        }
        if f.rank() != 2 || f.shape()[0] != v * r {
            return Err(Error::invalid(
                "contrastive_loss",
                format!(
                    "features must be [V·R, D] = [{}, D], got {:?}",
                    v * r,
                    f.shape()
                ),
            ));
        }
        if voxels.iter().collect::<HashSet<_>>().len() != v {
            return Err(Error::invalid(
                "contrastive_loss",
                "voxel ids must be distinct",
            ));
        }
        Ok(Self {
            f,
            voxels,
            rays_per_voxel,
        })
    }

    /// For every anchor, a uniformly drawn other feature of its voxel.
    pub fn draw_positives(&self, rng: &mut impl Rng) -> Vec<usize> {
        let r = self.rays_per_voxel;
        (0..self.voxels.len() * r)
            .map(|a| {
                let (voxel, j) = (a / r, a % r);
                let k = rng.gen_range(0..r - 1);
                voxel * r + if k >= j { k + 1 } else { k }
            })
            .collect()
    }
}

/// InfoNCE over region features: the positive for each anchor is another
/// feature of the same voxel, the negatives are every feature of the other
/// voxels, and similarity is cosine over temperature `tau`.
pub fn contrastive_loss(
    features: &BatchFeatures,
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let positives = features.draw_positives(rng);
    contrastive_loss_with(features, &positives, cfg)
}

/// [`contrastive_loss`] with the positive index of every anchor given.
pub fn contrastive_loss_with(
    features: &BatchFeatures,
    positives: &[usize],
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let r = features.rays_per_voxel;
    let n = features.voxels.len() * r;
    if positives.len() != n
        || positives
            .iter()
            .enumerate()
            .any(|(a, &p)| p == a || p / r != a / r)
    {
        return Err(Error::invalid(
            "contrastive_loss",
            "each positive must be another feature of the anchor's voxel",
        ));
    }
    let inv_tau = 1.0 / cfg.tau;
    let unit = features.f.l2_normalize(1)?;
    let sim = unit.matmul(&unit.transpose()?)?;
    // Positives are read from the same matrix so equal pairs compare exactly.
    let s_pos = sim.take_along(1, positives, 1)?;
    let logits = sim.sub(&s_pos)?.scale(inv_tau)?;

    let negative = |a: usize, b: usize| a / r != b / r;
    let mask: Vec<f32> = (0..n * n)
        .map(|k| negative(k / n, k % n) as u8 as f32)
        .collect();
    // Per-anchor max over negatives; any constant shift is exact for the
    // value and its gradient.
    let shift: Vec<f32> = (0..n)
        .map(|a| {
            let row = &logits.data()[a * n..(a + 1) * n];
            (0..n)
                .filter(|&b| negative(a, b))
                .map(|b| row[b])
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    let shift_col = Tensor::new(vec![n, 1], shift.clone())?;
    let shift = Tensor::new(vec![n], shift)?;

    // -log(e^p / (e^p + Σ e^s)) = softplus(log Σ e^(s − p))
    let total = logits
        .sub(&shift_col)?
        .exp()?
        .mul(&Tensor::new(vec![n, n], mask)?)?
        .sum(1)?
        .log()?
        .add(&shift)?
        .softplus()?
        .sum_all()?;
    match cfg.reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => total.scale(1.0 / n as f32),
    }
}

/// `mse + λ·contrast`; the contrastive term is dropped when disabled.
pub fn total_loss(mse: &Tensor, contrast: Option<&Tensor>, cfg: &LossConfig) -> Result<Tensor> {
    match contrast {
        Some(c) if cfg.contrastive_enabled => mse.add(&c.scale(cfg.lambda)?),
        _ => Ok(mse.clone()),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn feats(rows: Vec<Vec<f32>>, v: usize) -> BatchFeatures {
        let d = rows[0].len();
        let n = rows.len();
        let f = Tensor::new(vec![n, d], rows.concat()).unwrap();
        BatchFeatures::new(f, (0..v as u32).map(VoxelId).collect(), n / v).unwrap()
    }

    fn sum_cfg(tau: f32) -> LossConfig {
        LossConfig {
            tau,
            reduction: Reduction::Sum,
            ..LossConfig::default()
        }
    }

    #[test]
    fn identical_features() {
        let b = feats(vec![vec![0.3, -1.2, 0.5]; 4], 2);
        for tau in [0.05, 0.1, 1.0, 7.0] {
            let l = contrastive_loss(&b, &sum_cfg(tau), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert!(
                (l.item() as f64 - 4.0 * 3f64.ln()).abs() < 1e-6,
                "{}",
                l.item()
            );
        }
    }

    #[test]
    fn orthogonal_negatives() {
        let b = feats(
            vec![
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ],
            2,
        );
        let l = contrastive_loss(&b, &sum_cfg(0.1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let per = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((l.item() as f64 / 4.0 - per).abs() < 1e-7, "{}", l.item());
    }

    #[test]
    fn mean_divides_by_anchor_count() {
        let b = feats(vec![vec![0.3, -1.2, 0.5]; 4], 2);
        let l = contrastive_loss(
            &b,
            &LossConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!((l.item() - 3f32.ln()).abs() < 1e-5);
    }

    #[test]
    fn batch_constraints_named() {
        let f = Tensor::zeros(vec![2, 3]);
        let e = BatchFeatures::new(f.clone(), vec![VoxelId(0), VoxelId(1)], 1).unwrap_err();
        assert!(e.to_string().contains("R >= 2"));
        let e = BatchFeatures::new(f, vec![VoxelId(0)], 2).unwrap_err();
        assert!(e.to_string().contains("V >= 2"));
    }

    #[test]
    fn mse_values() {
        let p = Tensor::new(vec![1, 3], vec![0.6, 0.2, 0.3]).unwrap();
        let g = Tensor::new(vec![1, 3], vec![0.5, 0.2, 0.3]).unwrap();
        assert!((mse_loss(&p, &g, Reduction::Sum).unwrap().item() - 0.01).abs() < 1e-7);
        assert_eq!(mse_loss(&p, &p, Reduction::Mean).unwrap().item(), 0.0);
        assert!(mse_loss(&p, &Tensor::zeros(vec![3]), Reduction::Sum).is_err());
    }

    #[test]
    fn total_combines() {
        let cfg = LossConfig::default();
        let t = total_loss(&Tensor::scalar(1.0), Some(&Tensor::scalar(2.0)), &cfg).unwrap();
        assert!((t.item() - 1.2).abs() < 1e-6);
        let off = LossConfig { lambda: 0.0, ..cfg };
        assert_eq!(
            total_loss(&Tensor::scalar(1.0), Some(&Tensor::scalar(2.0)), &off)
                .unwrap()
                .item(),
            1.0
        );
    }
}
