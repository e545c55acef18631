//! Composites a homogeneous slab against its closed form and resamples it
//! hierarchically.

use cvtrf::geometry::stratified_midpoints;
use cvtrf::rendering::{composite, importance_sample, RaySampleList, SampleSource};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let (sigma, color) = (2.0f32, [0.8, 0.4, 0.1]);
    let n = 256;
    let t = stratified_midpoints(0.0, 1.0, n);
    let slab = RaySampleList {
        t: t.clone(),
        sigma: vec![sigma; n],
        color: vec![color; n],
        source: vec![SampleSource::Uniform; n],
    };
    let out = composite(&slab, 1.0)?;
    let closed = 1.0 - (-sigma).exp();
    println!(
        "rendered {:.6?}, closed form {:.6?}",
        out.color,
        color.map(|c| c * closed)
    );

    // A thin shell at t ≈ 0.6 draws the fine samples towards it.
    let mut shell = vec![0.0f32; n];
    for (w, &ti) in shell.iter_mut().zip(&t) {
        *w = (-((ti - 0.6) / 0.03).powi(2)).exp();
    }
    let fine = importance_sample(&shell, &t, 0.0, 1.0, 16, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("importance samples: {fine:.3?}");
    Ok(())
}
