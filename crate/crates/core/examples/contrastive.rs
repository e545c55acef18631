//! Voxel contrastive loss for features that cluster by voxel versus
//! features that do not.

use cvtrf::diffcore::Tensor;
use cvtrf::losses::{contrastive_loss, BatchFeatures, LossConfig, Reduction};
use cvtrf::voxelgrid::VoxelId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let (v, r, d) = (8, 4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let centers: Vec<Vec<f32>> = (0..v)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let cfg = LossConfig {
        tau: 0.1,
        reduction: Reduction::Mean,
        ..LossConfig::default()
    };
    let voxels: Vec<VoxelId> = (0..v as u32).map(VoxelId).collect();

    for noise in [0.05f32, 0.5, 5.0] {
        let rows: Vec<f32> = (0..v * r)
            .flat_map(|i| {
                centers[i / r]
                    .iter()
                    .map(|c| c + noise * rng.gen_range(-1.0..1.0))
                    .collect::<Vec<_>>()
            })
            .collect();
        let feats = BatchFeatures::new(Tensor::new([v * r, d], rows)?, voxels.clone(), r)?;
        let loss = contrastive_loss(&feats, &cfg, &mut rng)?;
        println!("noise {noise:>4}: loss per anchor {:.4}", loss.item());
    }
    Ok(())
}
