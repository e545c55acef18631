//! Walks a ray through a voxel grid, then indexes the toy scene's training
//! rays by voxel and draws a V×R batch.

use cvtrf::geometry::{Ray, Vec3};
use cvtrf::scenedata::{generate_toy_scene, ToyScene};
use cvtrf::voxelgrid::{build_ray_index, dda_traverse, sample_batch, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let grid = GridSpec::centered(4, 2.0);
    let ray = Ray::new(
        Vec3::new(-2.0, -0.8, -0.3),
        Vec3::new(1.0, 0.6, 0.2),
        0.0,
        10.0,
    )?;
    for span in dda_traverse(&ray, &grid) {
        println!(
            "voxel {:?} t ∈ [{:.3}, {:.3}]",
            grid.coords(span.voxel),
            span.t_enter,
            span.t_exit
        );
    }

    let (dataset, _) = generate_toy_scene(&ToyScene::default(), 3, 32, 32)?;
    let grid = GridSpec::centered(16, 3.0);
    let index = build_ray_index(dataset.training_rays()?, &grid)?;
    println!(
        "{} rays, {} occupied voxels, {} (voxel, ray) pairs",
        index.rays().len(),
        index.voxels().len(),
        index.pair_count()
    );

    let batch = sample_batch(&index, 4, 3, false, &mut ChaCha8Rng::seed_from_u64(1))?;
    for (v, voxel) in batch.voxels.iter().enumerate() {
        let group = batch.group(v);
        println!(
            "voxel {:?}: rays {:?}",
            grid.coords(*voxel),
            group.iter().map(|b| b.ray_id).collect::<Vec<_>>()
        );
    }
    Ok(())
}
