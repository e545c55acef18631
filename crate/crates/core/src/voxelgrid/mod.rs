//! Uniform scene voxelization, grid traversal and voxel-grouped ray batches.

mod cache;
mod dda;
mod index;

pub use cache::{load_index, save_index, INDEX_MAGIC};
pub use dda::{dda_traverse, VoxelSpan};
pub use index::{
    build_ray_index, sample_batch, sample_random_rays, BatchRay, RayHit, TrainingRay,
    VoxelRayBatch, VoxelRayIndex,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelId(pub u32);

/// Cubic scene bound split into `resolution³` equal voxels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub resolution: u32,
    pub scene_range: f32,
    /// Min corner of the scene bound.
    pub origin: [f32; 3],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            scene_range: 6.0,
            origin: [-3.0, -3.0, -3.0],
        }
    }
}

impl GridSpec {
    pub fn centered(resolution: u32, scene_range: f32) -> Self {
        Self {
            resolution,
            scene_range,
            origin: [-0.5 * scene_range; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0
            || !(self.scene_range > 0.0)
            || !self.origin.iter().all(|v| v.is_finite())
        {
            return Err(Error::Config(format!("invalid grid {self:?}")));
        }
        if (self.resolution as u64).pow(3) > u32::MAX as u64 {
            return Err(Error::Config(format!(
                "grid resolution {} too large",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn voxel_size(&self) -> f32 {
        self.scene_range / self.resolution as f32
    }

    pub fn voxel_count(&self) -> u32 {
        self.resolution.pow(3)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::cube(Vec3::from_array(self.origin), self.scene_range)
    }

    pub fn id(&self, ix: u32, iy: u32, iz: u32) -> VoxelId {
        let r = self.resolution;
        VoxelId(ix + r * (iy + r * iz))
    }

    pub fn coords(&self, id: VoxelId) -> [u32; 3] {
        let r = self.resolution;
        [id.0 % r, (id.0 / r) % r, id.0 / (r * r)]
    }

    /// Coordinate of grid plane `i` along `axis`.
    pub(crate) fn plane(&self, axis: usize, i: i64) -> f32 {
        self.origin[axis] + i as f32 * self.voxel_size()
    }

    pub fn voxel_aabb(&self, id: VoxelId) -> Aabb {
        let c = self.coords(id);
        let lo = Vec3::new(
            self.plane(0, c[0] as i64),
            self.plane(1, c[1] as i64),
            self.plane(2, c[2] as i64),
        );
        let hi = Vec3::new(
            self.plane(0, c[0] as i64 + 1),
            self.plane(1, c[1] as i64 + 1),
            self.plane(2, c[2] as i64 + 1),
        );
        Aabb { min: lo, max: hi }
    }

    /// Voxel containing `p`, if inside the bound.
    pub fn locate(&self, p: Vec3) -> Option<VoxelId> {
        let mut c = [0u32; 3];
        for (axis, slot) in c.iter_mut().enumerate() {
            let f = ((p[axis] - self.origin[axis]) / self.voxel_size()).floor();
            if f < 0.0 || f >= self.resolution as f32 {
                return None;
            }
            *slot = f as u32;
        }
        Some(self.id(c[0], c[1], c[2]))
    }
}
