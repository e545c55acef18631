mod common;

use common::{central_diff, rel_err, rng, tensor, uniform, wide};
use cvtrf::diffcore::{Graph, Tensor};
use cvtrf::losses::{
    contrastive_loss_with, mse_loss, total_loss, BatchFeatures, LossConfig, Reduction,
};
use cvtrf::voxelgrid::VoxelId;
use proptest::prelude::*;

fn features(f: Vec<f32>, v: usize, r: usize) -> BatchFeatures {
    let d = f.len() / (v * r);
    BatchFeatures::new(
        tensor(&[v * r, d], f),
        (0..v as u32).map(VoxelId).collect(),
        r,
    )
    .unwrap()
}

fn cfg(tau: f32, reduction: Reduction) -> LossConfig {
    LossConfig {
        tau,
        reduction,
        ..LossConfig::default()
    }
}

fn loss(f: &BatchFeatures, positives: &[usize], c: &LossConfig) -> f32 {
    contrastive_loss_with(f, positives, c).unwrap().item()
}

/// Two voxels of two 2-D features; voxel 1 sits at angle `theta` from voxel 0.
fn planar(theta: f32) -> BatchFeatures {
    let at = |a: f32| [a.cos(), a.sin()];
    let rows = [at(0.0), at(0.1), at(theta), at(theta + 0.1)];
    features(rows.concat(), 2, 2)
}

#[test]
fn loss_falls_as_negatives_rotate_away() {
    let c = cfg(0.1, Reduction::Sum);
    let positives = [1, 0, 3, 2];
    let mut prev = f32::INFINITY;
    for k in 0..=40 {
        let theta = 0.2 + k as f32 * (std::f32::consts::PI - 0.4) / 40.0;
        let now = loss(&planar(theta), &positives, &c);
        assert!(now < prev, "loss rose to {now} at theta {theta}");
        prev = now;
    }
}

#[test]
fn mse_gradient_is_twice_the_error() {
    let mut r = rng(2);
    for reduction in [Reduction::Sum, Reduction::Mean] {
        let pred = uniform(&mut r, 30, 0.0, 1.0);
        let gt = uniform(&mut r, 30, 0.0, 1.0);
        let g = Graph::new();
        let p = g.leaf(tensor(&[10, 3], pred.clone()));
        let l = mse_loss(&p, &tensor(&[10, 3], gt.clone()), reduction).unwrap();
        let grad = wide(&g.backward(&l).unwrap().get_or_zero(&p));

        let norm = if reduction == Reduction::Mean {
            10.0
        } else {
            1.0
        };
        let gt64 = wide(&gt);
        let fd = central_diff(&wide(&pred), 1e-6, |x| {
            x.iter()
                .zip(&gt64)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / norm
        });
        let analytic: Vec<f64> = pred
            .iter()
            .zip(&gt)
            .map(|(a, b)| 2.0 * (a - b) as f64 / norm)
            .collect();
        assert!(rel_err(&grad, &fd, 1e-6) < 1e-4);
        assert!(rel_err(&grad, &analytic, 1e-6) < 1e-6);
    }
}

#[test]
fn total_gradient_splits_linearly() {
    let c = LossConfig {
        lambda: 0.37,
        ..LossConfig::default()
    };
    let g = Graph::new();
    let mse = g.leaf(Tensor::scalar(1.3));
    let contrast = g.leaf(Tensor::scalar(2.1));
    let total = total_loss(&mse, Some(&contrast), &c).unwrap();
    let grads = g.backward(&total).unwrap();
    assert_eq!(grads.get(&mse).unwrap(), &[1.0]);
    assert!((grads.get(&contrast).unwrap()[0] - 0.37).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_ignores_feature_scale(seed in any::<u64>(), v in 2usize..5, r in 2usize..5, scale in 1e-2f32..1e2) {
        let mut g = rng(seed);
        let d = 6;
        let f = uniform(&mut g, v * r * d, -1.0, 1.0);
        let a = features(f.clone(), v, r);
        let b = features(f.iter().map(|x| x * scale).collect(), v, r);
        let positives = a.draw_positives(&mut g);
        for tau in [0.1f32, 0.5] {
            let c = cfg(tau, Reduction::Sum);
            let (la, lb) = (loss(&a, &positives, &c), loss(&b, &positives, &c));
            prop_assert!((la - lb).abs() <= 1e-5 * la.abs().max(1.0), "{} vs {}", la, lb);
        }
    }

    #[test]
    fn every_anchor_term_is_bounded_below(seed in any::<u64>(), v in 2usize..5, r in 2usize..5, tau in 0.05f32..1.0) {
        // Each term is log(1 + Σ_neg e^{(s − s⁺)/τ}) with s − s⁺ ≥ −2.
        let mut g = rng(seed);
        let f = uniform(&mut g, v * r * 4, -1.0, 1.0);
        let feats = features(f, v, r);
        let positives = feats.draw_positives(&mut g);
        let n = (v * r) as f64;
        let floor = ((v - 1) as f64 * r as f64 * (-2.0 / tau as f64).exp()).ln_1p();
        let sum = loss(&feats, &positives, &cfg(tau, Reduction::Sum)) as f64;
        let mean = loss(&feats, &positives, &cfg(tau, Reduction::Mean)) as f64;
        prop_assert!(sum >= n * floor * (1.0 - 1e-5));
        prop_assert!((mean - sum / n).abs() <= 1e-5 * sum.max(1.0));
    }
}
