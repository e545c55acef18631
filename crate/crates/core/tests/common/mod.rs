//! Shared fixtures and independent `f64` reference implementations used by
//! the integration tests. Nothing here calls into the library's numerics;
//! the references are written directly from the model equations.
#![allow(dead_code, clippy::needless_range_loop)]

use cvtrf::diffcore::{Module, Tensor};
use cvtrf::field::EncodingSpec;
use cvtrf::field::FieldConfig;
use cvtrf::ivt::TransformerConfig;
use cvtrf::scenedata::{generate_toy_scene, Dataset, ToyOracle, ToyScene};
use cvtrf::trainer::TrainConfig;
use cvtrf::voxelgrid::{build_ray_index, GridSpec, VoxelRayIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn wide(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}

/// Central differences of a scalar function, perturbing one coordinate at a time.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let keep = x[i];
        x[i] = keep + h;
        let up = f(&x);
        x[i] = keep - h;
        let down = f(&x);
        x[i] = keep;
        g.push((up - down) / (2.0 * h));
    }
    g
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every parameter of a module in visit order, widened.
pub fn module_params<M: Module>(m: &M) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    m.visit("", &mut |_, t| out.push(wide(t.data())));
    out
}

pub fn flatten(groups: &[Vec<f64>]) -> Vec<f64> {
    groups.iter().flatten().copied().collect()
}

/// Splits a flat vector back into groups shaped like `like`.
pub fn unflatten(flat: &[f64], like: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut at = 0;
    like.iter()
        .map(|g| {
            let part = flat[at..at + g.len()].to_vec();
            at += g.len();
            part
        })
        .collect()
}

pub fn small_field(width: usize) -> FieldConfig {
    FieldConfig {
        depth: 3,
        width,
        skip: Some(1),
        color_width: width / 2,
        position_encoding: EncodingSpec::new(2, true),
        direction_encoding: EncodingSpec::new(1, true),
    }
}

pub fn small_transformer(dim: usize) -> TransformerConfig {
    TransformerConfig {
        num_blocks: 2,
        model_dim: dim,
        num_heads: 2,
        surround_points: 4,
        ray_points: 3,
        point_encoding: EncodingSpec::new(2, true),
        ..TransformerConfig::default()
    }
}

/// A fast training configuration for pipeline tests.
pub fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::toy();
    cfg.seed = seed;
    cfg.n_coarse = 16;
    cfg.n_fine = 16;
    cfg.voxels_per_batch = 4;
    cfg.rays_per_voxel = 4;
    cfg.field = FieldConfig {
        depth: 3,
        width: 32,
        skip: Some(1),
        color_width: 16,
        position_encoding: EncodingSpec::new(4, true),
        direction_encoding: EncodingSpec::new(2, true),
    };
    cfg.transformer.model_dim = 32;
    cfg.transformer.point_encoding = EncodingSpec::new(4, true);
    cfg
}

/// Toy dataset with `views` training views of `size`² pixels.
pub fn toy_data(
    views: usize,
    size: usize,
    steps: usize,
    test_views: usize,
) -> (Dataset, ToyOracle) {
    let scene = ToyScene {
        quadrature_steps: steps,
        test_views,
        ..ToyScene::default()
    };
    generate_toy_scene(&scene, views, size, size).unwrap()
}

pub fn index_for(data: &Dataset, grid: &GridSpec) -> VoxelRayIndex {
    build_ray_index(data.training_rays().unwrap(), grid).unwrap()
}

/// Direct `f64` evaluations of the model equations on flat row-major arrays.
pub mod reference {
    pub fn relu(x: f64) -> f64 {
        x.max(0.0)
    }

    pub fn softplus(x: f64) -> f64 {
        if x > 30.0 {
            x
        } else {
            x.exp().ln_1p()
        }
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// `[n, k] · [k, m]`.
    pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k).map(|l| a[i * k + l] * b[l * m + j]).sum();
            }
        }
        out
    }

    /// `x W + b` for `rows` rows; `w` is `[in, out]`.
    pub fn affine(x: &[f64], rows: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let out = b.len();
        let fin = w.len() / out;
        assert_eq!(x.len(), rows * fin, "affine input width");
        let mut y = matmul(x, w, rows, fin, out);
        for r in 0..rows {
            for j in 0..out {
                y[r * out + j] += b[j];
            }
        }
        y
    }

    pub fn map(x: &[f64], f: fn(f64) -> f64) -> Vec<f64> {
        x.iter().map(|&v| f(v)).collect()
    }

    /// Row-wise concatenation of `[rows, a]` and `[rows, b]`.
    pub fn hcat(a: &[f64], b: &[f64], rows: usize) -> Vec<f64> {
        let (wa, wb) = (a.len() / rows, b.len() / rows);
        let mut out = Vec::with_capacity(a.len() + b.len());
        for r in 0..rows {
            out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
        }
        out
    }

    /// Walks a module's parameters in visit order.
    pub struct Params<'a> {
        groups: &'a [Vec<f64>],
        at: usize,
    }

    impl<'a> Params<'a> {
        pub fn new(groups: &'a [Vec<f64>]) -> Self {
            Self { groups, at: 0 }
        }

        pub fn next(&mut self) -> &'a [f64] {
            let g = &self.groups[self.at];
            self.at += 1;
            g
        }

        pub fn skip(&mut self, n: usize) {
            self.at += n;
        }

        pub fn linear(&mut self, x: &[f64], rows: usize) -> Vec<f64> {
            let w = self.next();
            let b = self.next();
            affine(x, rows, w, b)
        }

        pub fn layer_norm(&mut self, x: &[f64], dim: usize) -> Vec<f64> {
            let gamma = self.next();
            let beta = self.next();
            layer_norm(x, dim, gamma, beta)
        }

        pub fn done(&self) -> bool {
            self.at == self.groups.len()
        }
    }

    pub fn layer_norm(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(dim) {
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
            let s = (var + 1e-5).sqrt();
            out.extend(
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) / s * gamma[j] + beta[j]),
            );
        }
        out
    }

    /// Field outputs `(sigma [n], color [n·3], feature [n·width])`.
    pub fn field(
        p: &mut Params,
        cfg: &cvtrf::field::FieldConfig,
        pos_enc: &[f64],
        dir_enc: &[f64],
        n: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut h = pos_enc.to_vec();
        for layer in 0..cfg.depth {
            h = map(&p.linear(&h, n), relu);
            if Some(layer) == cfg.skip {
                h = hcat(&h, pos_enc, n);
            }
        }
        let sigma = map(&p.linear(&h, n), softplus);
        let hidden = map(&p.linear(&hcat(&h, dir_enc, n), n), relu);
        let color = map(&p.linear(&hidden, n), sigmoid);
        (sigma, color, h)
    }

    /// `[x, sin(2ᵏx), cos(2ᵏx), …]` for one point.
    pub fn encode(x: &[f64], freqs: usize, include_input: bool) -> Vec<f64> {
        let mut out = Vec::new();
        if include_input {
            out.extend_from_slice(x);
        }
        for k in 0..freqs {
            let f = 2f64.powi(k as i32);
            out.extend(x.iter().map(|v| (f * v).sin()));
            out.extend(x.iter().map(|v| (f * v).cos()));
        }
        out
    }

    /// Scaled dot-product attention for one batch element; heads split the
    /// last axis into equal contiguous slices.
    pub fn attention(
        q: &[f64],
        k: &[f64],
        v: &[f64],
        nq: usize,
        nk: usize,
        d: usize,
        heads: usize,
    ) -> Vec<f64> {
        let dh = d / heads;
        let mut out = vec![0.0; nq * d];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..nq {
                let logits: Vec<f64> = (0..nk)
                    .map(|j| {
                        (0..dh)
                            .map(|c| q[i * d + off + c] * k[j * d + off + c])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    out[i * d + off + c] = (0..nk).map(|j| e[j] / z * v[j * d + off + c]).sum();
                }
            }
        }
        out
    }

    pub fn mha(
        p: &mut Params,
        x: &[f64],
        nx: usize,
        mem: &[f64],
        nm: usize,
        d: usize,
        heads: usize,
    ) -> Vec<f64> {
        let q = p.linear(x, nx);
        let k = p.linear(mem, nm);
        let v = p.linear(mem, nm);
        let mixed = attention(&q, &k, &v, nx, nm, d, heads);
        p.linear(&mixed, nx)
    }

    pub fn ffn(p: &mut Params, x: &[f64], rows: usize) -> Vec<f64> {
        let h = map(&p.linear(x, rows), relu);
        p.linear(&h, rows)
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    /// Encoder over `b` independent sets of `s` tokens.
    pub fn encode_regions(
        p: &mut Params,
        cfg: &cvtrf::ivt::TransformerConfig,
        g: &[f64],
        b: usize,
        s: usize,
    ) -> Vec<f64> {
        let d = cfg.model_dim;
        let start = p.at;
        let mut out = Vec::with_capacity(g.len());
        for item in 0..b {
            p.at = start;
            let mut x = g[item * s * d..(item + 1) * s * d].to_vec();
            for _ in 0..cfg.num_blocks {
                let n = p.layer_norm(&x, d);
                x = add(&x, &mha(p, &n, s, &n, s, d, cfg.num_heads));
                let n = p.layer_norm(&x, d);
                x = add(&x, &ffn(p, &n, s));
            }
            out.extend(x);
        }
        out
    }

    /// Decoder for `b` rays of `np` encoded points each against memory
    /// `h` of `s` tokens per ray. The walker must sit at the embedding.
    pub fn decode_points(
        p: &mut Params,
        cfg: &cvtrf::ivt::TransformerConfig,
        pe: &[f64],
        b: usize,
        np: usize,
        h: &[f64],
        s: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = cfg.model_dim;
        let pe_dim = pe.len() / (b * np);
        let start = p.at;
        let (mut sigma, mut color) = (Vec::new(), Vec::new());
        for item in 0..b {
            p.at = start;
            let mem = &h[item * s * d..(item + 1) * s * d];
            let mut y = map(
                &p.linear(&pe[item * np * pe_dim..(item + 1) * np * pe_dim], np),
                relu,
            );
            for _ in 0..cfg.num_blocks {
                let n = p.layer_norm(&y, d);
                y = add(&y, &mha(p, &n, np, &n, np, d, cfg.num_heads));
                let n = p.layer_norm(&y, d);
                y = add(&y, &mha(p, &n, np, mem, s, d, cfg.num_heads));
                let n = p.layer_norm(&y, d);
                y = add(&y, &ffn(p, &n, np));
            }
            sigma.extend(map(&p.linear(&y, np), softplus));
            color.extend(map(&p.linear(&map(&y, relu), np), sigmoid));
        }
        (sigma, color)
    }

    pub struct Composite {
        pub rgb: [f64; 3],
        pub weights: Vec<f64>,
        pub acc: f64,
    }

    /// One ray's quadrature; the last interval ends at `far` or is treated
    /// as opaque-length `1e10` when `far` is infinite.
    pub fn composite(t: &[f64], sigma: &[f64], color: &[f64], far: f64) -> Composite {
        let n = t.len();
        let mut optical = 0.0f64;
        let mut rgb = [0.0; 3];
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let delta = if i + 1 < n {
                t[i + 1] - t[i]
            } else if far.is_finite() {
                (far - t[i]).max(0.0)
            } else {
                1e10
            };
            let trans = (-optical).exp();
            let w = trans * (1.0 - (-sigma[i] * delta).exp());
            optical += sigma[i] * delta;
            for c in 0..3 {
                rgb[c] += w * color[i * 3 + c];
            }
            weights.push(w);
        }
        Composite {
            rgb,
            acc: weights.iter().sum(),
            weights,
        }
    }

    /// Union of two sample sets ordered by a full sort on depth (field
    /// samples first on ties), then composited.
    pub fn insert_composite(
        t_a: &[f64],
        sigma_a: &[f64],
        color_a: &[f64],
        t_b: &[f64],
        sigma_b: &[f64],
        color_b: &[f64],
        far: f64,
    ) -> Composite {
        let mut all: Vec<(f64, usize, f64, [f64; 3])> = Vec::new();
        for i in 0..t_a.len() {
            all.push((
                t_a[i],
                0,
                sigma_a[i],
                [color_a[3 * i], color_a[3 * i + 1], color_a[3 * i + 2]],
            ));
        }
        for i in 0..t_b.len() {
            all.push((
                t_b[i],
                1,
                sigma_b[i],
                [color_b[3 * i], color_b[3 * i + 1], color_b[3 * i + 2]],
            ));
        }
        all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        let t: Vec<f64> = all.iter().map(|s| s.0).collect();
        let sigma: Vec<f64> = all.iter().map(|s| s.2).collect();
        let color: Vec<f64> = all.iter().flat_map(|s| s.3).collect();
        composite(&t, &sigma, &color, far)
    }

    /// InfoNCE summed over anchors: `-log(e^{s⁺/τ} / (e^{s⁺/τ} + Σ_neg e^{s/τ}))`.
    pub fn contrastive(f: &[f64], d: usize, r: usize, positives: &[usize], tau: f64) -> f64 {
        let n = f.len() / d;
        let row = |i: usize| &f[i * d..(i + 1) * d];
        let cos = |a: usize, b: usize| {
            let (x, y) = (row(a), row(b));
            let dp: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
            let nx = x.iter().map(|u| u * u).sum::<f64>().sqrt();
            let ny = y.iter().map(|u| u * u).sum::<f64>().sqrt();
            dp / (nx * ny)
        };
        let mut total = 0.0;
        for a in 0..n {
            let pos = cos(a, positives[a]) / tau;
            let mut logits = vec![pos];
            logits.extend((0..n).filter(|&b| b / r != a / r).map(|b| cos(a, b) / tau));
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
            total += lse - pos;
        }
        total
    }
}
