//! Scores renders with PSNR/SSIM, writes a metrics report, and exports the
//! fine field's visible samples as a PLY point cloud.
//!
//! `cargo run --release --example evaluate_and_export -- [out_dir]`

use std::path::PathBuf;

use cvtrf::metrics::MetricsReport;
use cvtrf::scenedata::{generate_toy_scene, read_ply, Image, ToyScene};
use cvtrf::trainer::{export_field_pointcloud, render_image, train_until, TrainConfig, TrainState};
use cvtrf::voxelgrid::build_ray_index;

fn main() -> cvtrf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "eval_out".into()));
    std::fs::create_dir_all(&out)?;
    let scene = ToyScene {
        test_views: 4,
        ..ToyScene::default()
    };
    let (dataset, _) = generate_toy_scene(&scene, 3, 24, 24)?;
    let config = TrainConfig {
        iters: 200,
        ..TrainConfig::toy()
    };
    let index = build_ray_index(dataset.training_rays()?, &config.grid)?;
    let mut state = TrainState::new(config)?;
    train_until(&mut state, &index, 200, None, |_, _| Ok(()))?;

    let preds = dataset
        .test
        .iter()
        .map(|v| render_image(&state, &v.camera, dataset.near, dataset.far))
        .collect::<cvtrf::Result<Vec<_>>>()?;
    let gt: Vec<Image> = dataset.test.iter().map(|v| v.image.clone()).collect();
    let report = MetricsReport::evaluate(&preds, &gt, state.config.digest(), state.iteration, 0.0)?;
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "mean PSNR {:.2} dB, mean SSIM {:.4}",
        report.mean_psnr, report.mean_ssim
    );

    let rays = dataset.test[0].camera.rays(dataset.near, dataset.far)?;
    let ply = out.join("cloud.ply");
    let n = export_field_pointcloud(&state, &rays, 1e-2, &ply)?;
    println!("{n} points written, {} read back", read_ply(&ply)?.len());
    Ok(())
}
