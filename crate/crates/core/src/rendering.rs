//! Volume rendering over per-ray sample lists.
//!
//! The batched functions take `R` rays with `N` samples each: densities as
//! `[R, N]`, colours as `[R, N, 3]` and sample depths as a flat row-major
//! `R·N` slice. Depths are never differentiated.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geometry::stratified_sample;

/// Distance assigned to the last sample when the ray is unbounded.
pub const OPEN_DELTA: f32 = 1e10;
/// Added to every coarse weight before building the sampling PDF.
pub const PDF_FLOOR: f32 = 1e-5;
/// Smallest gap enforced between merged samples at equal depth.
pub const TIE_STEP: f32 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    Uniform,
    Importance,
    Decoded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleList {
    pub t: Vec<f32>,
    pub sigma: Vec<f32>,
    pub color: Vec<[f32; 3]>,
    pub source: Vec<SampleSource>,
}

impl RaySampleList {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if self.sigma.len() != n || self.color.len() != n || self.source.len() != n {
            return Err(Error::invalid(
                "composite",
                "sample list fields differ in length",
            ));
        }
        if self.t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(
                "composite",
                "sample depths must be strictly ascending",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub color: [f32; 3],
    /// Expected termination depth normalized by `acc`.
    pub depth: f32,
    pub acc: f32,
    pub weights: Vec<f32>,
    pub transmittance: Vec<f32>,
}

/// Batched compositing outputs.
#[derive(Clone, Debug)]
pub struct RenderTensors {
    /// `[R, 3]`.
    pub color: Tensor,
    /// `[R, N]`.
    pub weights: Tensor,
    /// `[R, N]`, transmittance before each sample.
    pub transmittance: Tensor,
    /// `[R]`.
    pub acc: Tensor,
    /// `Σ wᵢtᵢ / max(acc, 1e-8)` per ray.
    pub depth: Vec<f32>,
    /// Unnormalized `Σ wᵢtᵢ` per ray.
    pub expected_t: Vec<f32>,
}

fn deltas(t: &[f32], n: usize, far: &[f32]) -> Vec<f32> {
    let mut d = Vec::with_capacity(t.len());
    for (row, &f) in t.chunks(n).zip(far) {
        for i in 0..n {
            d.push(if i + 1 < n {
                row[i + 1] - row[i]
            } else if f.is_finite() {
                (f - row[i]).max(0.0)
            } else {
                OPEN_DELTA
            });
        }
    }
    d
}

fn check_finite(op: &'static str, what: &str, x: &[f32]) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op,
            reason: format!("non-finite {what} at index {i}"),
        });
    }
    Ok(())
}

/// `wᵢ = Tᵢ(1 − exp(−σᵢδᵢ))` and `C = Σ wᵢcᵢ` for every ray.
///
/// The last interval ends at `far[r]`; pass `f32::INFINITY` for an
/// unbounded ray, which uses [`OPEN_DELTA`]. `white_background` adds
/// `1 − acc` to every channel.
pub fn composite_batch(
    sigma: &Tensor,
    color: &Tensor,
    t: &[f32],
    far: &[f32],
    white_background: bool,
) -> Result<RenderTensors> {
    if sigma.rank() != 2 {
        return Err(Error::invalid(
            "composite",
            format!("sigma must be [R, N], got {:?}", sigma.shape()),
        ));
    }
    let (r, n) = (sigma.shape()[0], sigma.shape()[1]);
    if color.shape() != [r, n, 3] || t.len() != r * n || far.len() != r {
        return Err(Error::ShapeMismatch {
            op: "composite",
            lhs: sigma.shape().to_vec(),
            rhs: color.shape().to_vec(),
        });
    }
    check_finite("composite", "density", sigma.data())?;
    check_finite("composite", "color", color.data())?;
    if sigma.data().iter().any(|&s| s < 0.0) {
        return Err(Error::Domain {
            op: "composite",
            reason: "negative density".into(),
        });
    }
    let delta = Tensor::new(vec![r, n], deltas(t, n, far))?;
    let sd = sigma.mul(&delta)?;
    let alpha = sd.neg()?.exp()?.neg()?.add_scalar(1.0)?;
    let transmittance = sd.cumsum(1, true)?.neg()?.exp()?;
    let weights = transmittance.mul(&alpha)?;
    let mut rgb = weights.reshape(vec![r, n, 1])?.mul(color)?.sum(1)?;
    let acc = weights.sum(1)?;
    if white_background {
        rgb = rgb.add(&acc.reshape(vec![r, 1])?.neg()?.add_scalar(1.0)?)?;
    }
    let mut depth = Vec::with_capacity(r);
    let mut expected_t = Vec::with_capacity(r);
    for (ray, (w, ts)) in weights
        .data()
        .chunks(n.max(1))
        .zip(t.chunks(n.max(1)))
        .enumerate()
    {
        let e: f32 = w.iter().zip(ts).map(|(a, b)| a * b).sum();
        expected_t.push(e);
        depth.push(e / acc.data()[ray].max(1e-8));
    }
    if n == 0 {
        depth = vec![0.0; r];
        expected_t = vec![0.0; r];
    }
    Ok(RenderTensors {
        color: rgb,
        weights,
        transmittance,
        acc,
        depth,
        expected_t,
    })
}

fn list_tensors(samples: &RaySampleList) -> Result<(Tensor, Tensor)> {
    let n = samples.len();
    Ok((
        Tensor::new(vec![1, n], samples.sigma.clone())?,
        Tensor::new(
            vec![1, n, 3],
            samples.color.iter().flatten().copied().collect(),
        )?,
    ))
}

/// Single-ray compositing; see [`composite_batch`].
pub fn composite(samples: &RaySampleList, far: f32) -> Result<RenderResult> {
    samples.validate()?;
    let (sigma, color) = list_tensors(samples)?;
    let out = composite_batch(&sigma, &color, &samples.t, &[far], false)?;
    let c = out.color.data();
    Ok(RenderResult {
        color: [c[0], c[1], c[2]],
        depth: out.depth[0],
        acc: out.acc.data()[0],
        weights: out.weights.to_vec(),
        transmittance: out.transmittance.to_vec(),
    })
}

/// Draws `count` depths from the piecewise-constant density whose bins are
/// bounded by `near`, the midpoints of consecutive `coarse_t`, and `far`.
/// Falls back to stratified sampling when every weight is zero.
pub fn importance_sample(
    coarse_weights: &[f32],
    coarse_t: &[f32],
    near: f32,
    far: f32,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    let n = coarse_t.len();
    if coarse_weights.len() != n || n == 0 {
        return Err(Error::invalid(
            "importance_sample",
            format!("{} weights for {} bins", coarse_weights.len(), n),
        ));
    }
    if coarse_weights
        .iter()
        .any(|w| !(*w >= 0.0) || !w.is_finite())
    {
        return Err(Error::Domain {
            op: "importance_sample",
            reason: "weights must be finite and non-negative".into(),
        });
    }
    if coarse_weights.iter().all(|&w| w == 0.0) {
        return Ok(stratified_sample(near, far, count, rng));
    }
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(near);
    edges.extend(coarse_t.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(far);

    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0f64);
    let total: f64 = coarse_weights.iter().map(|&w| (w + PDF_FLOOR) as f64).sum();
    let mut run = 0.0;
    for &w in coarse_weights {
        run += (w + PDF_FLOOR) as f64 / total;
        cdf.push(run);
    }
    cdf[n] = 1.0;

    let mut u: Vec<f64> = (0..count).map(|_| rng.gen::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    let below_far = f32::from_bits(far.to_bits() - 1);
    Ok(u.into_iter()
        .map(|u| {
            let bin = cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
            let width = cdf[bin + 1] - cdf[bin];
            let frac = if width > 0.0 {
                (u - cdf[bin]) / width
            } else {
                0.0
            };
            let (lo, hi) = (edges[bin] as f64, edges[bin + 1] as f64);
            ((lo + frac * (hi - lo)) as f32).clamp(near, below_far)
        })
        .collect())
}

/// Merges each ray's `n` field depths with `p` decoded depths.
///
/// Returns the merged depths and, per ray, the positions in the
/// concatenation `[field.., decoded..]` in merged order. Ties keep the field
/// sample first; any depth not above its predecessor is raised to the
/// predecessor plus at least [`TIE_STEP`].
pub fn merge_order(
    field_t: &[f32],
    n: usize,
    decoded_t: &[f32],
    p: usize,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let rays = field_t
        .len()
        .checked_div(n)
        .unwrap_or(decoded_t.len() / p.max(1));
    if field_t.len() != rays * n || decoded_t.len() != rays * p {
        return Err(Error::invalid(
            "merge",
            "depth arrays do not match the sample counts",
        ));
    }
    let mut t = Vec::with_capacity(rays * (n + p));
    let mut order = Vec::with_capacity(rays * (n + p));
    for r in 0..rays {
        let a = &field_t[r * n..(r + 1) * n];
        let b = &decoded_t[r * p..(r + 1) * p];
        let (mut i, mut j) = (0, 0);
        let start = t.len();
        while i < n || j < p {
            let take_field = j == p || (i < n && a[i] <= b[j]);
            let (value, slot) = if take_field {
                i += 1;
                (a[i - 1], i - 1)
            } else {
                j += 1;
                (b[j - 1], n + j - 1)
            };
            let value = match t.last() {
                Some(&prev) if t.len() > start && value <= prev => (prev
                    + TIE_STEP.max(prev.abs() * f32::EPSILON))
                .max(f32::from_bits(prev.to_bits() + 1)),
                _ => value,
            };
            t.push(value);
            order.push(slot);
        }
    }
    Ok((t, order))
}

/// Inserts decoded samples into the field samples by depth and composites
/// the union. Gradients reach both sources through the gather.
#[allow(clippy::too_many_arguments)]
pub fn insert_and_composite_batch(
    field_sigma: &Tensor,
    field_color: &Tensor,
    field_t: &[f32],
    decoded_sigma: &Tensor,
    decoded_color: &Tensor,
    decoded_t: &[f32],
    far: &[f32],
    white_background: bool,
) -> Result<RenderTensors> {
    let (r, n) = (field_sigma.shape()[0], field_sigma.shape()[1]);
    let p = decoded_sigma.shape().get(1).copied().unwrap_or(0);
    if p == 0 {
        return composite_batch(field_sigma, field_color, field_t, far, white_background);
    }
    if decoded_sigma.shape()[0] != r {
        return Err(Error::ShapeMismatch {
            op: "insert_and_composite",
            lhs: field_sigma.shape().to_vec(),
            rhs: decoded_sigma.shape().to_vec(),
        });
    }
    let (t, order) = merge_order(field_t, n, decoded_t, p)?;
    let sigma = Tensor::concat(&[field_sigma, decoded_sigma], 1)?.take_along(1, &order, n + p)?;
    let color = Tensor::concat(&[field_color, decoded_color], 1)?.take_along(1, &order, n + p)?;
    composite_batch(&sigma, &color, &t, far, white_background)
}

/// Single-ray form of [`insert_and_composite_batch`].
pub fn insert_and_composite(
    fine: &RaySampleList,
    decoded: &crate::ivt::DecodedRadiance,
    far: f32,
) -> Result<RenderResult> {
    fine.validate()?;
    let merged = merge_lists(fine, decoded)?;
    composite(&merged, far)
}

/// The merged sample list [`insert_and_composite`] renders.
pub fn merge_lists(
    fine: &RaySampleList,
    decoded: &crate::ivt::DecodedRadiance,
) -> Result<RaySampleList> {
    let (n, p) = (fine.len(), decoded.t_values.len());
    if decoded.sigma_hat.len() != p || decoded.color_hat.len() != p {
        return Err(Error::invalid(
            "insert_and_composite",
            "decoded fields differ in length",
        ));
    }
    let (t, order) = merge_order(&fine.t, n, &decoded.t_values, p)?;
    let pick = |slot: usize| {
        if slot < n {
            (fine.sigma[slot], fine.color[slot], fine.source[slot])
        } else {
            (
                decoded.sigma_hat[slot - n],
                decoded.color_hat[slot - n],
                SampleSource::Decoded,
            )
        }
    };
    let mut out = RaySampleList {
        t,
        sigma: Vec::with_capacity(n + p),
        color: Vec::with_capacity(n + p),
        source: Vec::with_capacity(n + p),
    };
    for slot in order {
        let (s, c, src) = pick(slot);
        out.sigma.push(s);
        out.color.push(c);
        out.source.push(src);
    }
    Ok(out)
}
