mod common;

use common::{central_diff, reference, rel_err, rng, tensor, uniform, wide};
use cvtrf::diffcore::{Graph, Tensor};
use proptest::prelude::*;

#[test]
fn square_has_derivative_six() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let loss = x.mul(&x).unwrap();
    let grads = g.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), &[6.0]);
}

#[test]
fn reused_tensor_accumulates() {
    let g = Graph::new();
    let x = g.leaf(Tensor::scalar(1.0));
    let y = x.scale(2.0).unwrap();
    let loss = y.add(&y).unwrap();
    let grads = g.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), &[4.0]);
}

#[test]
fn relu_matvec_matches_finite_differences() {
    let mut r = rng(11);
    for _ in 0..20 {
        let w = uniform(&mut r, 16, -1.0, 1.0);
        let x = uniform(&mut r, 4, -1.0, 1.0);

        let g = Graph::new();
        let wt = g.leaf(tensor(&[4, 4], w.clone()));
        let xt = g.leaf(tensor(&[4, 1], x.clone()));
        let loss = wt.matmul(&xt).unwrap().relu().unwrap().sum_all().unwrap();
        let grads = g.backward(&loss).unwrap();

        let (w64, x64) = (wide(&w), wide(&x));
        let pre = reference::matmul(&w64, &x64, 4, 4, 1);
        // Finite differences are only meaningful away from the kink.
        if pre.iter().any(|v| v.abs() < 1e-2) {
            continue;
        }
        let f = |w: &[f64], x: &[f64]| {
            reference::matmul(w, x, 4, 4, 1)
                .into_iter()
                .map(reference::relu)
                .sum::<f64>()
        };
        let fd_w = central_diff(&w64, 1e-3, |w| f(w, &x64));
        let fd_x = central_diff(&x64, 1e-3, |x| f(&w64, x));
        assert!(rel_err(&wide(grads.get(&wt).unwrap()), &fd_w, 1e-6) < 1e-4);
        assert!(rel_err(&wide(grads.get(&xt).unwrap()), &fd_x, 1e-6) < 1e-4);
    }
}

fn k_path_gradient(k: usize, x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let g = Graph::new();
    let xt = g.leaf(tensor(&[x.len()], x.to_vec()));
    let y = xt.sigmoid().unwrap();
    let mut acc = y.clone();
    for _ in 1..k {
        acc = acc.add(&y).unwrap();
    }
    let multi = g
        .backward(&acc.sum_all().unwrap())
        .unwrap()
        .get_or_zero(&xt);

    let g = Graph::new();
    let xt = g.leaf(tensor(&[x.len()], x.to_vec()));
    let single = g
        .backward(&xt.sigmoid().unwrap().sum_all().unwrap())
        .unwrap()
        .get_or_zero(&xt);
    (multi, single)
}

fn build_and_backward(a: &[f32], b: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let g = Graph::new();
    let at = g.leaf(tensor(&[3, 4], a.to_vec()));
    let bt = g.leaf(tensor(&[4, 2], b.to_vec()));
    let y = at.matmul(&bt).unwrap().softmax(1).unwrap().log().unwrap();
    let z = at.layer_norm().unwrap().relu().unwrap().sum_all().unwrap();
    let loss = y.sum_all().unwrap().add(&z).unwrap();
    let grads = g.backward(&loss).unwrap();
    (grads.get_or_zero(&at), grads.get_or_zero(&bt))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn k_paths_accumulate_k_fold(x in prop::collection::vec(-4.0f32..4.0, 1..8), k in 2usize..=3) {
        let (multi, single) = k_path_gradient(k, &x);
        for (m, s) in multi.iter().zip(&single) {
            prop_assert!((m - k as f32 * s).abs() <= 1e-6 * s.abs().max(1e-6));
        }
    }

    #[test]
    fn repeated_backward_is_bitwise_identical(
        a in prop::collection::vec(-2.0f32..2.0, 12),
        b in prop::collection::vec(-2.0f32..2.0, 8),
    ) {
        let first = build_and_backward(&a, &b);
        let second = build_and_backward(&a, &b);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..6,
        cols in 1usize..12,
        seed in any::<u64>(),
        spread in prop_oneof![Just(1.0f32), Just(30.0), Just(1e4)],
    ) {
        let mut r = rng(seed);
        let x = tensor(&[rows, cols], uniform(&mut r, rows * cols, -spread, spread));
        let s = x.softmax(1).unwrap();
        for row in s.data().chunks(cols) {
            let total: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6, "row sums to {}", total);
        }
    }
}
