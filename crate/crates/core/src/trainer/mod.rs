//! The optimization loop: voxel-grouped ray batches through the coarse
//! field, the fine field with in-voxel transformer insertion, the
//! photometric and contrastive losses, and one Adam step per batch.

mod checkpoint;
mod render;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{attach, collect_grads, AdamConfig, AdamState, Graph, Module, Tensor};
use crate::error::{Error, Result};
use crate::field::{encode_points, EncodingSpec, FieldConfig, FieldParams};
use crate::geometry::{line_sample, sphere_sample, stratified_sample, Ray, Segment, Vec3};
use crate::ivt::{pool, InVoxelTransformer, TransformerConfig};
use crate::losses::{contrastive_loss, mse_loss, total_loss, BatchFeatures, LossConfig};
use crate::rendering::{composite_batch, importance_sample, insert_and_composite_batch};
use crate::voxelgrid::{sample_batch, sample_random_rays, GridSpec, VoxelRayIndex};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use render::{export_field_pointcloud, render_image, render_rays, RenderedRays};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iters: u64,
    /// V: voxels per batch.
    pub voxels_per_batch: usize,
    /// R: rays drawn inside each batch voxel.
    pub rays_per_voxel: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub lr0: f64,
    /// Learning rate reached after `iters` steps.
    pub lr_final: f64,
    pub seed: u64,
    /// Decoded ray points are inserted into the fine pass.
    pub cvt_enabled: bool,
    /// Batches are grouped by voxel; otherwise rays are drawn uniformly.
    pub voxel_sampling_enabled: bool,
    /// Voxels drawn proportionally to their ray count instead of uniformly.
    pub weighted_voxel_sampling: bool,
    pub white_background: bool,
    pub field: FieldConfig,
    pub transformer: TransformerConfig,
    pub loss: LossConfig,
    pub grid: GridSpec,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    /// Rays per chunk when rendering full images.
    pub render_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 50_000,
            voxels_per_batch: 64,
            rays_per_voxel: 16,
            n_coarse: 64,
            n_fine: 128,
            lr0: 5e-4,
            lr_final: 5e-5,
            seed: 0,
            cvt_enabled: true,
            voxel_sampling_enabled: true,
            weighted_voxel_sampling: false,
            white_background: false,
            field: FieldConfig::default(),
            transformer: TransformerConfig::default(),
            loss: LossConfig::default(),
            grid: GridSpec::default(),
            checkpoint_every: 0,
            render_chunk: 4096,
        }
    }
}

impl TrainConfig {
    /// Miniature settings sized for the 64×64 toy scene on one CPU core.
    pub fn toy() -> Self {
        Self {
            iters: 5_000,
            voxels_per_batch: 8,
            rays_per_voxel: 4,
            n_coarse: 32,
            n_fine: 32,
            lr0: 2e-3,
            lr_final: 2e-4,
            field: FieldConfig {
                depth: 4,
                width: 64,
                skip: Some(1),
                color_width: 32,
                position_encoding: EncodingSpec::new(6, true),
                direction_encoding: EncodingSpec::new(2, true),
            },
            transformer: TransformerConfig {
                model_dim: 64,
                point_encoding: EncodingSpec::new(6, true),
                ..TransformerConfig::default()
            },
            grid: GridSpec {
                resolution: 16,
                scene_range: 3.0,
                origin: [-1.5; 3],
            },
            render_chunk: 2048,
            ..Self::default()
        }
    }

    /// Rays per step, `V·R`.
    pub fn batch_size(&self) -> usize {
        self.voxels_per_batch * self.rays_per_voxel
    }

    /// Switches off every component beyond plain coarse/fine NeRF.
    pub fn baseline(mut self) -> Self {
        self.cvt_enabled = false;
        self.loss.contrastive_enabled = false;
        self.voxel_sampling_enabled = false;
        self
    }

    /// Needs region features from the transformer encoder.
    pub fn uses_regions(&self) -> bool {
        self.cvt_enabled || self.loss.contrastive_enabled
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.transformer.validate()?;
        self.loss.validate()?;
        self.grid.validate()?;
        if self.batch_size() == 0 || self.n_coarse == 0 {
            return Err(Error::Config(
                "batch size and n_coarse must be positive".into(),
            ));
        }
        if !(self.lr0 > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got {} / {}",
                self.lr0, self.lr_final
            )));
        }
        if self.uses_regions() && !self.voxel_sampling_enabled {
            return Err(Error::Config(
                "cvt_enabled and loss.contrastive_enabled need voxel_sampling_enabled".into(),
            ));
        }
        if self.uses_regions() && self.transformer.model_dim != self.field.width {
            return Err(Error::Config(format!(
                "transformer.model_dim {} must equal field.width {}",
                self.transformer.model_dim, self.field.width
            )));
        }
        if self.loss.contrastive_enabled && (self.voxels_per_batch < 2 || self.rays_per_voxel < 2) {
            return Err(Error::Config(format!(
                "the contrastive loss needs V >= 2 and R >= 2, got V={} R={}",
                self.voxels_per_batch, self.rays_per_voxel
            )));
        }
        if self.render_chunk == 0 {
            return Err(Error::Config("render_chunk must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_schedule(self.lr0, self.lr_final, self.iters)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub coarse: FieldParams,
    pub fine: FieldParams,
    pub cvt: InVoxelTransformer,
    pub opt_coarse: AdamState,
    pub opt_fine: AdamState,
    pub opt_cvt: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let coarse = FieldParams::new(config.field, &mut rng)?;
        let fine = FieldParams::new(config.field, &mut rng)?;
        let transformer = TransformerConfig {
            model_dim: config.field.width,
            ..config.transformer
        };
        let cvt = InVoxelTransformer::new(transformer, &mut rng)?;
        let adam = config.adam();
        Ok(Self {
            opt_coarse: AdamState::for_module(adam, &coarse),
            opt_fine: AdamState::for_module(adam, &fine),
            opt_cvt: AdamState::for_module(adam, &cvt),
            coarse,
            fine,
            cvt,
            iteration: 0,
            rng,
            config,
        })
    }

    /// Learning rate of the next step.
    pub fn lr(&self) -> f64 {
        self.opt_fine.lr()
    }

    fn check_finite(&self) -> Result<()> {
        let bad = first_non_finite(&self.coarse, "coarse")
            .or_else(|| first_non_finite(&self.fine, "fine"))
            .or_else(|| first_non_finite(&self.cvt, "cvt"));
        match bad {
            Some(name) => Err(Error::Diverged {
                iteration: self.iteration,
                reason: format!("parameter {name} became non-finite"),
            }),
            None => Ok(()),
        }
    }
}

fn first_non_finite<M: Module>(module: &M, prefix: &str) -> Option<String> {
    let mut bad = None;
    module.visit(prefix, &mut |name, t| {
        if bad.is_none() && t.data().iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    bad
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Iteration index of the step (0-based).
    pub iteration: u64,
    pub mse_coarse: f32,
    pub mse_fine: f32,
    pub contrast: f32,
    pub total: f32,
    pub lr: f64,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "iter,mse_coarse,mse_fine,contrast,total,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.mse_coarse, self.mse_fine, self.contrast, self.total, self.lr
        )
    }
}

/// Sample depths and points for every ray of a batch, row-major.
pub(crate) struct RaySamples {
    t: Vec<f32>,
    points: Vec<Vec3>,
    dirs: Vec<Vec3>,
}

impl RaySamples {
    pub(crate) fn build<'a>(
        rays: impl Iterator<Item = &'a Ray>,
        t: Vec<f32>,
        per_ray: usize,
    ) -> Self {
        let mut points = Vec::with_capacity(t.len());
        let mut dirs = Vec::with_capacity(t.len());
        for (ray, ts) in rays.zip(t.chunks(per_ray)) {
            for &ti in ts {
                points.push(ray.at(ti));
                dirs.push(ray.direction);
            }
        }
        Self { t, points, dirs }
    }
}

pub(crate) fn field_pass(
    field: &FieldParams,
    s: &RaySamples,
    rays: usize,
    per_ray: usize,
) -> Result<(Tensor, Tensor)> {
    let out = field.forward_points(&s.points, &s.dirs)?;
    Ok((
        out.sigma.reshape(vec![rays, per_ray])?,
        out.color.reshape(vec![rays, per_ray, 3])?,
    ))
}

/// Fine depths: importance draws from the coarse weights merged with the
/// coarse depths, per ray.
pub(crate) fn fine_depths(
    coarse_t: &[f32],
    coarse_w: &[f32],
    nc: usize,
    nf: usize,
    bounds: impl Iterator<Item = (f32, f32)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(coarse_t.len() / nc.max(1) * (nc + nf));
    for ((t, w), (near, far)) in coarse_t.chunks(nc).zip(coarse_w.chunks(nc)).zip(bounds) {
        let mut merged = importance_sample(w, t, near, far, nf, rng)?;
        merged.extend_from_slice(t);
        merged.sort_by(f32::total_cmp);
        out.extend(merged);
    }
    Ok(out)
}

/// One optimization step on a freshly drawn batch.
pub fn train_step(state: &mut TrainState, index: &VoxelRayIndex) -> Result<StepReport> {
    let cfg = state.config.clone();
    let iteration = state.iteration;
    let lr = state.lr();
    let rng = &mut state.rng;
    let batch = if cfg.voxel_sampling_enabled {
        sample_batch(
            index,
            cfg.voxels_per_batch,
            cfg.rays_per_voxel,
            cfg.weighted_voxel_sampling,
            rng,
        )?
    } else {
        sample_random_rays(index, cfg.batch_size(), rng)?
    };
    let nr = batch.len();

    let graph = Graph::new();
    let coarse = attach(&state.coarse, &graph);
    let fine = attach(&state.fine, &graph);
    // Without insertion the transformer stays a constant and is never updated.
    let cvt = if cfg.cvt_enabled {
        attach(&state.cvt, &graph)
    } else {
        state.cvt.clone()
    };
    let far = vec![f32::INFINITY; nr];
    let gt = Tensor::new(
        vec![nr, 3],
        batch.rays.iter().flat_map(|r| r.color).collect(),
    )?;

    // Coarse pass.
    let nc = cfg.n_coarse;
    let mut t_c = Vec::with_capacity(nr * nc);
    for r in &batch.rays {
        t_c.extend(stratified_sample(r.ray.near, r.ray.far, nc, rng));
    }
    let s_c = RaySamples::build(batch.rays.iter().map(|r| &r.ray), t_c, nc);
    let (sigma_c, color_c) = field_pass(&coarse, &s_c, nr, nc)?;
    let rc = composite_batch(&sigma_c, &color_c, &s_c.t, &far, cfg.white_background)?;
    let mse_c = mse_loss(&rc.color, &gt, cfg.loss.reduction)?;

    // Fine pass.
    let nf_total = nc + cfg.n_fine;
    let t_f = fine_depths(
        &s_c.t,
        rc.weights.data(),
        nc,
        cfg.n_fine,
        batch.rays.iter().map(|r| (r.ray.near, r.ray.far)),
        rng,
    )?;
    let s_f = RaySamples::build(batch.rays.iter().map(|r| &r.ray), t_f, nf_total);
    let (sigma_f, color_f) = field_pass(&fine, &s_f, nr, nf_total)?;

    let mut region = None;
    let rf = if cfg.uses_regions() {
        let tc = cvt.config();
        let (s, p) = (tc.surround_points, tc.ray_points);
        let radius = cfg.grid.voxel_size() / tc.radius_divisor;
        let mut surround = Vec::with_capacity(nr * s);
        for r in &batch.rays {
            surround.extend(sphere_sample((r.x_in() + r.x_out()) * 0.5, radius, s, rng)?);
        }
        let d = cfg.field.width;
        let g = fine.features_at(&surround)?.reshape(vec![nr, s, d])?;
        let h = cvt.encode(&g)?;
        region = Some(pool(&h)?);
        if cfg.cvt_enabled && p > 0 {
            let mut t_d = Vec::with_capacity(nr * p);
            let mut pts = Vec::with_capacity(nr * p);
            for r in &batch.rays {
                let smp = line_sample(&Segment::on_ray(&r.ray, r.t_in, r.t_out), p, rng);
                t_d.extend(smp.t_values);
                pts.extend(smp.points);
            }
            let enc = encode_points(&pts, &tc.point_encoding);
            let pe = enc.shape()[1];
            let dec = cvt.decode(&enc.reshape(vec![nr, p, pe])?, &h)?;
            insert_and_composite_batch(
                &sigma_f,
                &color_f,
                &s_f.t,
                &dec.sigma,
                &dec.color,
                &t_d,
                &far,
                cfg.white_background,
            )?
        } else {
            composite_batch(&sigma_f, &color_f, &s_f.t, &far, cfg.white_background)?
        }
    } else {
        composite_batch(&sigma_f, &color_f, &s_f.t, &far, cfg.white_background)?
    };
    let mse_f = mse_loss(&rf.color, &gt, cfg.loss.reduction)?;

    let contrast = match region {
        Some(f) if cfg.loss.contrastive_enabled => {
            let feats = BatchFeatures::new(f, batch.voxels.clone(), batch.rays_per_voxel)?;
            Some(contrastive_loss(&feats, &cfg.loss, rng)?)
        }
        _ => None,
    };
    let total = total_loss(&mse_c.add(&mse_f)?, contrast.as_ref(), &cfg.loss)?;
    let report = StepReport {
        iteration,
        mse_coarse: mse_c.item(),
        mse_fine: mse_f.item(),
        contrast: contrast.as_ref().map_or(0.0, Tensor::item),
        total: total.item(),
        lr,
    };
    if !report.total.is_finite() {
        return Err(Error::Diverged {
            iteration,
            reason: format!("non-finite loss {report:?}"),
        });
    }
    let grads = graph.backward(&total).map_err(|e| Error::Diverged {
        iteration,
        reason: e.to_string(),
    })?;
    let g_coarse = collect_grads(&coarse, &grads);
    let g_fine = collect_grads(&fine, &grads);
    let g_cvt = cfg.cvt_enabled.then(|| collect_grads(&cvt, &grads));
    drop((coarse, fine, cvt, grads));

    state.opt_coarse.step_module(&mut state.coarse, &g_coarse)?;
    state.opt_fine.step_module(&mut state.fine, &g_fine)?;
    if let Some(g) = g_cvt {
        state.opt_cvt.step_module(&mut state.cvt, &g)?;
    }
    state.iteration += 1;
    state.check_finite()?;
    Ok(report)
}

/// Runs steps until `state.iteration == until`, writing one CSV row per
/// step to `log` when given.
pub fn train_until(
    state: &mut TrainState,
    index: &VoxelRayIndex,
    until: u64,
    mut log: Option<&mut dyn Write>,
    mut on_step: impl FnMut(&TrainState, &StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    let mut reports = Vec::with_capacity(until.saturating_sub(state.iteration) as usize);
    while state.iteration < until {
        let report = train_step(state, index)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", report.csv_row())?;
        }
        on_step(state, &report)?;
        reports.push(report);
    }
    Ok(reports)
}
