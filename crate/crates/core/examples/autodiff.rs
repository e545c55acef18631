//! Fits `y = 2x − 1` with one linear layer on the autodiff tape and Adam.

use cvtrf::diffcore::{attach, collect_grads, AdamConfig, AdamState, Graph, Linear, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cvtrf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f32> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
    let x = Tensor::new([64, 1], xs)?;
    let y = Tensor::new([64, 1], ys)?;

    let mut layer = Linear::new(1, 1, &mut rng);
    let mut adam = AdamState::for_module(AdamConfig::with_schedule(0.1, 0.01, 300), &layer);
    for step in 0..300 {
        let graph = Graph::new();
        let live = attach(&layer, &graph);
        let err = live.forward(&x)?.sub(&y)?;
        let loss = err.mul(&err)?.mean_all()?;
        let grads = collect_grads(&live, &graph.backward(&loss)?);
        adam.step_module(&mut layer, &grads)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {:.6}", loss.item());
        }
    }
    println!(
        "w = {:.4}, b = {:.4}",
        layer.weight.data()[0],
        layer.bias.data()[0]
    );
    Ok(())
}
