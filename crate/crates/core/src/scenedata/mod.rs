//! Posed image datasets, the procedural toy scene, and point-cloud export.

mod ply;
mod toy;
mod transforms;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::voxelgrid::TrainingRay;

pub use ply::{read_ply, write_ply, PlyVertex};
pub use toy::{generate_toy_scene, CameraRing, Primitive, Shape, ToyOracle, ToyScene};
pub use transforms::{load_dataset, write_dataset, FrameRecord, TransformsFile};

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(
                "image",
                format!(
                    "{}×{} RGB needs {} values, got {}",
                    width,
                    height,
                    width * height * 3,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f32; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::data(path, e.to_string()))
    }

    /// Reads an 8-bit PNG. Alpha, when present, composites onto white if
    /// `white_background` and is dropped otherwise.
    pub fn load_png(path: &Path, white_background: bool) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?;
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        let mut data = Vec::with_capacity((w * h * 3) as usize);
        for p in rgba.pixels() {
            let a = p[3] as f32 / 255.0;
            for c in 0..3 {
                let v = p[c] as f32 / 255.0;
                data.push(if white_background {
                    v * a + (1.0 - a)
                } else {
                    v
                });
            }
        }
        Image::new(w as usize, h as usize, data)
    }
}

/// Pinhole camera with an OpenGL-style camera-to-world pose: the camera
/// looks down its local −z axis with +y up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major 4×4 camera-to-world transform.
    pub pose: [[f32; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub focal: f32,
}

impl Camera {
    pub fn focal_from_fov(width: usize, camera_angle_x: f32) -> f32 {
        0.5 * width as f32 / (0.5 * camera_angle_x).tan()
    }

    /// Camera at `eye` looking at `target`, with `up` giving the roll.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        focal: f32,
    ) -> Result<Self> {
        let back = (eye - target).normalize();
        let right = up.cross(back);
        if !(right.length() > 1e-6) {
            return Err(Error::invalid("look_at", "view direction parallel to up"));
        }
        let right = right.normalize();
        let true_up = back.cross(right);
        let mut pose = [[0.0; 4]; 4];
        for r in 0..3 {
            pose[r][0] = right[r];
            pose[r][1] = true_up[r];
            pose[r][2] = back[r];
            pose[r][3] = eye[r];
        }
        pose[3][3] = 1.0;
        Ok(Self {
            pose,
            width,
            height,
            focal,
        })
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::new(self.pose[0][3], self.pose[1][3], self.pose[2][3])
    }

    /// Unit direction through the centre of pixel `(u, v)`.
    pub fn direction(&self, u: usize, v: usize) -> Vec3 {
        let x = (u as f32 + 0.5 - 0.5 * self.width as f32) / self.focal;
        let y = -(v as f32 + 0.5 - 0.5 * self.height as f32) / self.focal;
        let local = [x, y, -1.0];
        let r = &self.pose;
        Vec3::new(
            r[0][0] * local[0] + r[0][1] * local[1] + r[0][2] * local[2],
            r[1][0] * local[0] + r[1][1] * local[1] + r[1][2] * local[2],
            r[2][0] * local[0] + r[2][1] * local[1] + r[2][2] * local[2],
        )
        .normalize()
    }

    pub fn ray(&self, u: usize, v: usize, near: f32, far: f32) -> Result<Ray> {
        Ray::new(self.origin(), self.direction(u, v), near, far)
    }

    /// All pixel rays in row-major order.
    pub fn rays(&self, near: f32, far: f32) -> Result<Vec<Ray>> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.ray(u, v, near, far)?);
            }
        }
        Ok(out)
    }

    /// Checks that the pose is a rigid transform.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = &self.pose;
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err("pose has non-finite entries".into());
        }
        if (p[3][0], p[3][1], p[3][2], p[3][3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(format!(
                "pose bottom row must be [0, 0, 0, 1], got {:?}",
                p[3]
            ));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f32 = (0..3).map(|k| p[k][i] * p[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-4 {
                    return Err(format!(
                        "rotation block is not orthonormal (column {i}·{j} = {dot})"
                    ));
                }
            }
        }
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err("camera needs positive focal and size".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    /// Image path as written in the transforms file, if any.
    pub file_path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub near: f32,
    pub far: f32,
    pub white_background: bool,
    /// Horizontal field of view in radians.
    pub camera_angle_x: f32,
}

impl Dataset {
    /// Every pixel of every training view as a supervised ray.
    pub fn training_rays(&self) -> Result<Vec<TrainingRay>> {
        views_to_rays(&self.train, self.near, self.far)
    }
}

pub fn views_to_rays(views: &[View], near: f32, far: f32) -> Result<Vec<TrainingRay>> {
    let mut out = Vec::new();
    for view in views {
        let rays = view.camera.rays(near, far)?;
        for (i, ray) in rays.into_iter().enumerate() {
            let c = &view.image.data[i * 3..i * 3 + 3];
            out.push(TrainingRay {
                ray,
                color: [c[0], c[1], c[2]],
            });
        }
    }
    Ok(out)
}
