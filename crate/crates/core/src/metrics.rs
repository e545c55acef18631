//! Image-quality metrics and the evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenedata::Image;

/// Reported for identical images, where the true value is infinite.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.height, a.width, 3],
            rhs: vec![b.height, b.width, 3],
        });
    }
    if a.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op,
            reason: "non-finite pixel".into(),
        });
    }
    Ok(())
}

/// `−10·log10(MSE)` over all channels, with [`PSNR_CAP`] for zero error.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair("psnr", a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        -10.0 * mse.log10()
    })
}

fn gray(img: &Image) -> Vec<f64> {
    img.data
        .chunks(3)
        .map(|c| (c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0)
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows of the
/// channel-mean grayscale images, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair("ssim", a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!(
                "image {}×{} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window",
                a.width, a.height
            ),
        ));
    }
    let (x, y) = (gray(a), gray(b));
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let width = a.width;
    let (rows, cols) = (a.height - SSIM_WINDOW + 1, a.width - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let k = (r + i) * width + c + j;
                    let wt = w[i * SSIM_WINDOW + j];
                    mx += wt * x[k];
                    my += wt * y[k];
                    xx += wt * x[k] * x[k];
                    yy += wt * y[k] * y[k];
                    xy += wt * x[k] * y[k];
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (rows * cols) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub config_digest: String,
    pub iteration: u64,
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    /// Scores each prediction against its ground truth, in order.
    pub fn evaluate(
        predictions: &[Image],
        ground_truth: &[Image],
        config_digest: String,
        iteration: u64,
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        if predictions.len() != ground_truth.len() || predictions.is_empty() {
            return Err(Error::invalid(
                "evaluate",
                format!(
                    "{} predictions for {} ground-truth views",
                    predictions.len(),
                    ground_truth.len()
                ),
            ));
        }
        let views = predictions
            .iter()
            .zip(ground_truth)
            .enumerate()
            .map(|(view, (p, g))| {
                Ok(ViewMetrics {
                    view,
                    psnr: psnr(p, g)?,
                    ssim: ssim(p, g)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = views.len() as f64;
        Ok(Self {
            mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            views,
            config_digest,
            iteration,
            wall_clock_seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Image {
        let data = (0..n * n)
            .flat_map(|k| {
                let v = ((k % n) + (k / n)) as f32 / (2 * n - 2) as f32;
                [v, v, v]
            })
            .collect();
        Image::new(n, n, data).unwrap()
    }

    #[test]
    fn psnr_cap_and_arithmetic() {
        let a = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn ssim_identity_and_constant() {
        let a = ramp(16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::filled(12, 12, [0.0; 3]);
        let one = Image::filled(12, 12, [1.0; 3]);
        let c1 = SSIM_K1 * SSIM_K1;
        assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small() {
        let a = Image::filled(10, 10, [0.0; 3]);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &Image::filled(10, 9, [0.0; 3])).is_err());
    }

    #[test]
    fn negative_disagrees() {
        let a = ramp(16);
        let neg = Image::new(16, 16, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.5);
    }
}
