//! Trains on the toy scene and reports held-out PSNR.
//!
//! `cargo run --release --example train_toy -- [iters]`

use cvtrf::metrics::psnr;
use cvtrf::scenedata::{generate_toy_scene, ToyScene};
use cvtrf::trainer::{render_image, train_until, TrainConfig, TrainState};
use cvtrf::voxelgrid::build_ray_index;

fn main() -> cvtrf::Result<()> {
    let iters: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let scene = ToyScene {
        test_views: 2,
        ..ToyScene::default()
    };
    let (dataset, _) = generate_toy_scene(&scene, 3, 32, 32)?;
    let config = TrainConfig {
        iters,
        ..TrainConfig::toy()
    };
    let index = build_ray_index(dataset.training_rays()?, &config.grid)?;
    let mut state = TrainState::new(config)?;
    train_until(&mut state, &index, iters, None, |_, r| {
        if (r.iteration + 1) % 100 == 0 {
            println!(
                "iter {:>5}  fine {:.5}  contrast {:.4}  lr {:.2e}",
                r.iteration + 1,
                r.mse_fine,
                r.contrast,
                r.lr
            );
        }
        Ok(())
    })?;
    for (i, view) in dataset.test.iter().enumerate() {
        let img = render_image(&state, &view.camera, dataset.near, dataset.far)?;
        println!("test view {i}: {:.2} dB", psnr(&img, &view.image)?);
    }
    Ok(())
}
