use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{field_pass, fine_depths, RaySamples, TrainState};
use crate::error::{Error, Result};
use crate::geometry::{stratified_midpoints, Ray};
use crate::rendering::composite_batch;
use crate::scenedata::{write_ply, Camera, Image, PlyVertex};

/// Stream offset separating evaluation draws from training draws.
const EVAL_STREAM: u64 = 0x0e7a1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderedRays {
    pub colors: Vec<[f32; 3]>,
    /// Expected depth normalized by opacity.
    pub depth: Vec<f32>,
    pub acc: Vec<f32>,
}

/// Coarse and fine passes without insertion, in chunks. Coarse depths are
/// bin midpoints and the importance draws come from a fixed stream, so
/// repeated calls agree exactly.
pub fn render_rays(state: &TrainState, rays: &[Ray]) -> Result<RenderedRays> {
    let mut out = RenderedRays::default();
    render_with(state, rays, |_, _, _| {}, &mut out)?;
    Ok(out)
}

fn render_with(
    state: &TrainState,
    rays: &[Ray],
    mut on_sample: impl FnMut(&Ray, f32, (f32, [f32; 3], f32)),
    out: &mut RenderedRays,
) -> Result<()> {
    let cfg = &state.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(EVAL_STREAM);
    let nc = cfg.n_coarse;
    let n = nc + cfg.n_fine;
    for chunk in rays.chunks(cfg.render_chunk) {
        let nr = chunk.len();
        let far = vec![f32::INFINITY; nr];
        let t_c: Vec<f32> = chunk
            .iter()
            .flat_map(|r| stratified_midpoints(r.near, r.far, nc))
            .collect();
        let s_c = RaySamples::build(chunk.iter(), t_c, nc);
        let (sigma_c, color_c) = field_pass(&state.coarse, &s_c, nr, nc)?;
        let rc = composite_batch(&sigma_c, &color_c, &s_c.t, &far, cfg.white_background)?;
        let t_f = fine_depths(
            &s_c.t,
            rc.weights.data(),
            nc,
            cfg.n_fine,
            chunk.iter().map(|r| (r.near, r.far)),
            &mut rng,
        )?;
        let s_f = RaySamples::build(chunk.iter(), t_f, n);
        let (sigma_f, color_f) = field_pass(&state.fine, &s_f, nr, n)?;
        let rf = composite_batch(&sigma_f, &color_f, &s_f.t, &far, cfg.white_background)?;
        for (i, ray) in chunk.iter().enumerate() {
            for j in 0..n {
                let k = i * n + j;
                let c = &color_f.data()[k * 3..k * 3 + 3];
                on_sample(
                    ray,
                    s_f.t[k],
                    (sigma_f.data()[k], [c[0], c[1], c[2]], rf.weights.data()[k]),
                );
            }
        }
        out.colors
            .extend(rf.color.data().chunks(3).map(|c| [c[0], c[1], c[2]]));
        out.depth.extend_from_slice(&rf.depth);
        out.acc.extend_from_slice(rf.acc.data());
    }
    Ok(())
}

pub fn render_image(state: &TrainState, camera: &Camera, near: f32, far: f32) -> Result<Image> {
    let rays = camera.rays(near, far)?;
    let out = render_rays(state, &rays)?;
    Image::new(
        camera.width,
        camera.height,
        out.colors.into_iter().flatten().collect(),
    )
}

/// Writes every fine-pass sample whose compositing weight is at least
/// `threshold` to an ASCII PLY. Returns the number of vertices written.
pub fn export_field_pointcloud(
    state: &TrainState,
    rays: &[Ray],
    threshold: f32,
    path: &Path,
) -> Result<usize> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(
            "export_field_pointcloud",
            format!("threshold must be >= 0, got {threshold}"),
        ));
    }
    let mut vertices = Vec::new();
    render_with(
        state,
        rays,
        |ray, t, (sigma, color, weight)| {
            if weight >= threshold && weight > 0.0 {
                vertices.push(PlyVertex {
                    position: ray.at(t).to_array(),
                    color,
                    sigma,
                });
            }
        },
        &mut RenderedRays::default(),
    )?;
    write_ply(path, &vertices)?;
    Ok(vertices.len())
}
