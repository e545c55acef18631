//! One ray's in-voxel pass: sample surrounding points, encode their field
//! features, pool a region feature, decode radiance on the segment and
//! insert it into the fine samples.

use cvtrf::field::{FieldConfig, FieldParams};
use cvtrf::geometry::{line_sample, sphere_sample, stratified_sample, Ray, Segment, Vec3};
use cvtrf::ivt::{pool, InVoxelTransformer, TransformerConfig};
use cvtrf::rendering::{composite, insert_and_composite, RaySampleList, SampleSource};
use cvtrf::voxelgrid::GridSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let field_cfg = FieldConfig {
        width: 64,
        ..FieldConfig::default()
    };
    let field = FieldParams::new(field_cfg, &mut rng)?;
    let cfg = TransformerConfig {
        model_dim: 64,
        ..TransformerConfig::default()
    };
    let cvt = InVoxelTransformer::new(cfg, &mut rng)?;

    let grid = GridSpec::centered(8, 2.0);
    let ray = Ray::new(
        Vec3::new(0.1, 0.05, -3.0),
        Vec3::new(0.0, 0.0, 1.0),
        2.0,
        4.0,
    )?;
    let voxel = grid
        .locate(Vec3::new(0.1, 0.05, 0.1))
        .expect("inside the grid");
    let (t_in, t_out) = cvtrf::geometry::ray_aabb_intersect(&ray, &grid.voxel_aabb(voxel))
        .expect("ray crosses voxel");
    let (x_in, x_out) = (ray.at(t_in), ray.at(t_out));

    let mid = (x_in + x_out) * 0.5;
    let around = sphere_sample(
        mid,
        grid.voxel_size() / cfg.radius_divisor,
        cfg.surround_points,
        &mut rng,
    )?;
    let g = field.features_at(&around)?;
    let h = cvt.encode(&g.reshape(vec![1, cfg.surround_points, 64])?)?;
    let region = pool(&h)?;
    println!(
        "region feature: {} values, first {:.4?}",
        region.numel(),
        &region.data()[..4]
    );

    let points = line_sample(
        &Segment::on_ray(&ray, t_in, t_out),
        cfg.ray_points,
        &mut rng,
    );
    let decoded = cvt.decode_ray(&points, &h.reshape(vec![cfg.surround_points, 64])?)?;
    println!(
        "decoded σ̂ on [{t_in:.3}, {t_out:.3}]: {:.4?}",
        decoded.sigma_hat
    );

    let t = stratified_sample(ray.near, ray.far, 32, &mut rng);
    let pts: Vec<Vec3> = t.iter().map(|&s| ray.at(s)).collect();
    let out = field.forward_points(&pts, &vec![ray.direction; pts.len()])?;
    let fine = RaySampleList {
        t,
        sigma: out.sigma.to_vec(),
        color: out
            .color
            .data()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        source: vec![SampleSource::Uniform; pts.len()],
    };
    println!("field only : {:.4?}", composite(&fine, ray.far)?.color);
    println!(
        "with insert: {:.4?}",
        insert_and_composite(&fine, &decoded, ray.far)?.color
    );
    Ok(())
}
