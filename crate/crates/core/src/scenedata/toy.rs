use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Camera, Dataset, Image, View};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere {
        center: [f32; 3],
        radius: f32,
    },
    Box {
        center: [f32; 3],
        half_extent: [f32; 3],
    },
}

impl Shape {
    /// Signed distance, negative inside.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => {
                let d: f64 = (0..3).map(|i| (p[i] - center[i] as f64).powi(2)).sum();
                d.sqrt() - radius as f64
            }
            Shape::Box {
                center,
                half_extent,
            } => {
                let q: Vec<f64> = (0..3)
                    .map(|i| (p[i] - center[i] as f64).abs() - half_extent[i] as f64)
                    .collect();
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
        }
    }
}

/// A shape filled with constant density and colour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub sigma: f32,
    pub color: [f32; 3],
}

/// Cameras evenly spaced in azimuth at a fixed height, all facing the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRing {
    pub radius: f32,
    pub height: f32,
    pub camera_angle_x: f32,
}

impl Default for CameraRing {
    fn default() -> Self {
        Self {
            radius: 4.0,
            height: 1.5,
            camera_angle_x: 0.69,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyScene {
    pub primitives: Vec<Primitive>,
    /// Width of the smooth density falloff around every surface.
    pub edge_width: f32,
    pub ring: CameraRing,
    pub test_views: usize,
    pub near: f32,
    pub far: f32,
    pub white_background: bool,
    /// Selects the azimuth phase of the camera ring.
    pub seed: u64,
    pub quadrature_steps: usize,
}

impl Default for ToyScene {
    fn default() -> Self {
        Self {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.3, 0.2, 0.0],
                        radius: 0.5,
                    },
                    sigma: 20.0,
                    color: [0.9, 0.25, 0.2],
                },
                Primitive {
                    shape: Shape::Box {
                        center: [-0.4, -0.35, -0.2],
                        half_extent: [0.3, 0.3, 0.3],
                    },
                    sigma: 20.0,
                    color: [0.2, 0.8, 0.3],
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [-0.1, -0.2, 0.55],
                        radius: 0.3,
                    },
                    sigma: 20.0,
                    color: [0.2, 0.35, 0.95],
                },
            ],
            edge_width: 0.08,
            ring: CameraRing::default(),
            test_views: 16,
            near: 2.0,
            far: 6.0,
            white_background: false,
            seed: 0,
            quadrature_steps: 4096,
        }
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Analytic density/colour fields of a [`ToyScene`] and a dense quadrature
/// renderer over them.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyOracle {
    pub scene: ToyScene,
}

impl ToyOracle {
    fn occupancy(&self, prim: &Primitive, p: [f64; 3]) -> f64 {
        let half = 0.5 * self.scene.edge_width as f64;
        if half == 0.0 {
            return (prim.shape.sdf(p) <= 0.0) as u8 as f64;
        }
        1.0 - smoothstep(-half, half, prim.shape.sdf(p))
    }

    /// `(σ, c)` at `p`; colour is the density-weighted mix of overlapping
    /// primitives and zero in empty space.
    pub fn sample(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut c = [0.0; 3];
        for prim in &self.scene.primitives {
            let s = prim.sigma as f64 * self.occupancy(prim, p);
            sigma += s;
            for k in 0..3 {
                c[k] += s * prim.color[k] as f64;
            }
        }
        if sigma > 0.0 {
            for v in &mut c {
                *v /= sigma;
            }
        }
        (sigma, c)
    }

    pub fn density(&self, p: Vec3) -> f32 {
        self.sample([p.x as f64, p.y as f64, p.z as f64]).0 as f32
    }

    pub fn color(&self, p: Vec3) -> [f32; 3] {
        let c = self.sample([p.x as f64, p.y as f64, p.z as f64]).1;
        [c[0] as f32, c[1] as f32, c[2] as f32]
    }

    /// Midpoint depths of `steps` equal intervals over `[near, far]`.
    pub fn quadrature_t(near: f32, far: f32, steps: usize) -> Vec<f64> {
        let h = (far as f64 - near as f64) / steps as f64;
        (0..steps)
            .map(|i| near as f64 + (i as f64 + 0.5) * h)
            .collect()
    }

    /// Colour and opacity of `ray` by midpoint quadrature with `steps`
    /// samples, composited as `Σ Tᵢ(1 − e^{−σᵢh})cᵢ` in f64.
    pub fn render_ray(&self, ray: &Ray, steps: usize) -> ([f64; 3], f64) {
        let h = (ray.far as f64 - ray.near as f64) / steps as f64;
        let o = [
            ray.origin.x as f64,
            ray.origin.y as f64,
            ray.origin.z as f64,
        ];
        let d = [
            ray.direction.x as f64,
            ray.direction.y as f64,
            ray.direction.z as f64,
        ];
        let mut transmittance = 1.0f64;
        let mut rgb = [0.0f64; 3];
        for t in Self::quadrature_t(ray.near, ray.far, steps) {
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            let (sigma, c) = self.sample(p);
            if sigma == 0.0 {
                continue;
            }
            let alpha = 1.0 - (-sigma * h).exp();
            let w = transmittance * alpha;
            for k in 0..3 {
                rgb[k] += w * c[k];
            }
            transmittance *= 1.0 - alpha;
        }
        if self.scene.white_background {
            for v in &mut rgb {
                *v += transmittance;
            }
        }
        (rgb, 1.0 - transmittance)
    }

    pub fn render(&self, camera: &Camera, steps: usize) -> Result<Image> {
        let rays = camera.rays(self.scene.near, self.scene.far)?;
        let mut data = Vec::with_capacity(rays.len() * 3);
        for ray in &rays {
            let (c, _) = self.render_ray(ray, steps);
            data.extend(c.iter().map(|&v| v as f32));
        }
        Image::new(camera.width, camera.height, data)
    }

    /// Ring cameras: `n_train` training azimuths, then the test azimuths
    /// offset by half a step.
    pub fn cameras(
        &self,
        n: usize,
        offset: f32,
        width: usize,
        height: usize,
    ) -> Result<Vec<Camera>> {
        let ring = &self.scene.ring;
        let phase =
            ChaCha8Rng::seed_from_u64(self.scene.seed).gen_range(0.0..std::f32::consts::TAU);
        let focal = Camera::focal_from_fov(width, ring.camera_angle_x);
        (0..n)
            .map(|k| {
                let a = phase + std::f32::consts::TAU * (k as f32 + offset) / n as f32;
                let eye = Vec3::new(ring.radius * a.cos(), ring.radius * a.sin(), ring.height);
                Camera::look_at(
                    eye,
                    Vec3::ZERO,
                    Vec3::new(0.0, 0.0, 1.0),
                    width,
                    height,
                    focal,
                )
            })
            .collect()
    }
}

/// Renders `n_views` training and `scene.test_views` held-out images of
/// the scene with the quadrature oracle.
pub fn generate_toy_scene(
    scene: &ToyScene,
    n_views: usize,
    height: usize,
    width: usize,
) -> Result<(Dataset, ToyOracle)> {
    if n_views == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(
            "generate_toy_scene",
            "needs at least one view and a non-empty image",
        ));
    }
    if scene.quadrature_steps == 0 || !(scene.near >= 0.0 && scene.near < scene.far) {
        return Err(Error::invalid(
            "generate_toy_scene",
            "bad quadrature steps or near/far",
        ));
    }
    if let Some(p) = scene
        .primitives
        .iter()
        .find(|p| !(p.sigma >= 0.0) || p.color.iter().any(|c| !(0.0..=1.0).contains(c)))
    {
        return Err(Error::invalid(
            "generate_toy_scene",
            format!("primitive out of range: {p:?}"),
        ));
    }
    let oracle = ToyOracle {
        scene: scene.clone(),
    };
    let make = |cams: Vec<Camera>, split: &str| -> Result<Vec<View>> {
        cams.into_iter()
            .enumerate()
            .map(|(i, camera)| {
                Ok(View {
                    image: oracle.render(&camera, scene.quadrature_steps)?,
                    camera,
                    file_path: format!("{split}/r_{i}.png"),
                })
            })
            .collect()
    };
    let train = make(oracle.cameras(n_views, 0.0, width, height)?, "train")?;
    let test = make(
        oracle.cameras(scene.test_views, 0.5, width, height)?,
        "test",
    )?;
    Ok((
        Dataset {
            train,
            test,
            near: scene.near,
            far: scene.far,
            white_background: scene.white_background,
            camera_angle_x: scene.ring.camera_angle_x,
        },
        oracle,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sdf() {
        let b = Shape::Box {
            center: [0.0; 3],
            half_extent: [1.0, 1.0, 1.0],
        };
        assert!((b.sdf([2.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!((b.sdf([0.5, 0.0, 0.0]) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_black_or_white() {
        let mut scene = ToyScene {
            primitives: vec![],
            test_views: 1,
            quadrature_steps: 64,
            ..ToyScene::default()
        };
        let (d, _) = generate_toy_scene(&scene, 2, 4, 4).unwrap();
        assert!(d
            .train
            .iter()
            .all(|v| v.image.data.iter().all(|&x| x == 0.0)));
        scene.white_background = true;
        let (d, _) = generate_toy_scene(&scene, 1, 4, 4).unwrap();
        assert!(d.train[0].image.data.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn opaque_sphere_center_pixel() {
        let scene = ToyScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 0.5,
                },
                sigma: 200.0,
                color: [0.1, 0.7, 0.4],
            }],
            test_views: 0,
            ..ToyScene::default()
        };
        let (d, _) = generate_toy_scene(&scene, 3, 5, 5).unwrap();
        for v in &d.train {
            let c = v.image.pixel(2, 2);
            for (a, b) in c.iter().zip([0.1, 0.7, 0.4]) {
                assert!((a - b).abs() < 1e-3, "{c:?}");
            }
        }
    }
}
