//! Renders the procedural toy scene and writes it as a transforms dataset.
//!
//! `cargo run --release --example toy_scene -- [out_dir]`

use std::path::PathBuf;

use cvtrf::scenedata::{generate_toy_scene, write_dataset, ToyScene};

fn main() -> cvtrf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy".into()));
    let scene = ToyScene::default();
    let (dataset, oracle) = generate_toy_scene(&scene, 3, 64, 64)?;
    write_dataset(&out, &dataset)?;
    println!(
        "{} train + {} test views, near {} far {}, written to {}",
        dataset.train.len(),
        dataset.test.len(),
        dataset.near,
        dataset.far,
        out.display()
    );
    let (sigma, color) = oracle.sample([0.3, 0.2, 0.0]);
    println!("oracle at the red sphere's centre: σ = {sigma}, c = {color:?}");
    Ok(())
}
