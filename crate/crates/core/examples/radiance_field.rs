//! Evaluates a randomly initialized radiance field: positional encoding,
//! density, colour and the density feature `g`.

use cvtrf::field::{field_forward, positional_encode, EncodingSpec, FieldConfig, FieldParams};
use cvtrf::geometry::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let enc = positional_encode(&[1.0], &EncodingSpec::new(2, true));
    println!("γ(1) with L=2: {enc:?}");

    let config = FieldConfig::default();
    let params = FieldParams::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!(
        "field: depth {}, width {}, skip {:?}",
        config.depth, config.width, config.skip
    );

    let x = Vec3::new(0.1, -0.2, 0.3);
    for d in [Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0)] {
        let out = field_forward(&params, x, d)?;
        println!(
            "d = {:?}: σ = {:.4}, c = {:.4?}, |g| = {:.4}",
            d.to_array(),
            out.sigma,
            out.color,
            out.feature.iter().map(|v| v * v).sum::<f32>().sqrt()
        );
    }
    Ok(())
}
