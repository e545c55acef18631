use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dda::dda_traverse;
use super::{GridSpec, VoxelId};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

/// A supervised pixel ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRay {
    pub ray: Ray,
    pub color: [f32; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub ray_id: u32,
    pub t_in: f32,
    pub t_out: f32,
}

/// For every voxel pierced by at least one training ray, the rays that
/// pierce it (sorted by ray id) with their in/out parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelRayIndex {
    pub(crate) grid: GridSpec,
    pub(crate) voxels: Vec<VoxelId>,
    pub(crate) hits: Vec<Vec<RayHit>>,
    pub(crate) rays: Vec<TrainingRay>,
}

impl VoxelRayIndex {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rays(&self) -> &[TrainingRay] {
        &self.rays
    }

    /// Indexed voxels in ascending id order.
    pub fn voxels(&self) -> &[VoxelId] {
        &self.voxels
    }

    pub fn hits(&self, voxel: VoxelId) -> Option<&[RayHit]> {
        self.voxels
            .binary_search(&voxel)
            .ok()
            .map(|i| self.hits[i].as_slice())
    }

    pub fn entries(&self) -> impl Iterator<Item = (VoxelId, &[RayHit])> {
        self.voxels
            .iter()
            .copied()
            .zip(self.hits.iter().map(Vec::as_slice))
    }

    pub fn pair_count(&self) -> usize {
        self.hits.iter().map(Vec::len).sum()
    }
}

pub fn build_ray_index(rays: Vec<TrainingRay>, grid: &GridSpec) -> Result<VoxelRayIndex> {
    grid.validate()?;
    if rays.is_empty() {
        return Err(Error::invalid("build_ray_index", "no training rays"));
    }
    if rays.len() > u32::MAX as usize {
        return Err(Error::invalid("build_ray_index", "too many rays"));
    }
    let mut map: BTreeMap<VoxelId, Vec<RayHit>> = BTreeMap::new();
    for (ray_id, tr) in rays.iter().enumerate() {
        for span in dda_traverse(&tr.ray, grid) {
            map.entry(span.voxel).or_default().push(RayHit {
                ray_id: ray_id as u32,
                t_in: span.t_enter,
                t_out: span.t_exit,
            });
        }
    }
    if map.is_empty() {
        let b = grid.bounds();
        return Err(Error::invalid(
            "build_ray_index",
            format!(
                "none of the {} rays intersects the scene bound {:?}..{:?}",
                rays.len(),
                b.min,
                b.max
            ),
        ));
    }
    let (voxels, hits) = map.into_iter().unzip();
    Ok(VoxelRayIndex {
        grid: *grid,
        voxels,
        hits,
        rays,
    })
}

/// One ray of a batch, with its span through the batch voxel it was drawn for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchRay {
    pub ray_id: u32,
    pub ray: Ray,
    pub color: [f32; 3],
    /// Owning batch voxel; `None` for rays drawn without voxel grouping.
    pub voxel: Option<VoxelId>,
    pub t_in: f32,
    pub t_out: f32,
}

impl BatchRay {
    pub fn x_in(&self) -> Vec3 {
        self.ray.at(self.t_in)
    }

    pub fn x_out(&self) -> Vec3 {
        self.ray.at(self.t_out)
    }
}

/// `voxels.len() × rays_per_voxel` rays stored voxel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelRayBatch {
    pub voxels: Vec<VoxelId>,
    pub rays_per_voxel: usize,
    pub rays: Vec<BatchRay>,
}

impl VoxelRayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn group(&self, v: usize) -> &[BatchRay] {
        &self.rays[v * self.rays_per_voxel..(v + 1) * self.rays_per_voxel]
    }
}

/// Draw `v` voxels (without replacement while enough are indexed) and `r`
/// rays inside each (with replacement only when a voxel holds fewer than `r`).
/// `weighted` draws voxels proportionally to their ray count.
pub fn sample_batch(
    index: &VoxelRayIndex,
    v: usize,
    r: usize,
    weighted: bool,
    rng: &mut impl Rng,
) -> Result<VoxelRayBatch> {
    let n = index.voxels.len();
    if n == 0 {
        return Err(Error::invalid("sample_batch", "empty ray index"));
    }
    if v == 0 || r == 0 {
        return Err(Error::invalid(
            "sample_batch",
            format!("need V >= 1 and R >= 1, got V={v} R={r}"),
        ));
    }
    let picks: Vec<usize> = if n >= v {
        if weighted {
            index::sample_weighted(rng, n, |i| index.hits[i].len() as f64, v)
                .map_err(|e| Error::invalid("sample_batch", e.to_string()))?
                .into_vec()
        } else {
            index::sample(rng, n, v).into_vec()
        }
    } else {
        (0..v).map(|_| rng.gen_range(0..n)).collect()
    };

    let mut rays = Vec::with_capacity(v * r);
    let mut voxels = Vec::with_capacity(v);
    for slot in picks {
        let voxel = index.voxels[slot];
        let hits = &index.hits[slot];
        let chosen: Vec<usize> = if hits.len() >= r {
            index::sample(rng, hits.len(), r).into_vec()
        } else {
            (0..r).map(|_| rng.gen_range(0..hits.len())).collect()
        };
        for h in chosen.into_iter().map(|i| hits[i]) {
            let tr = &index.rays[h.ray_id as usize];
            rays.push(BatchRay {
                ray_id: h.ray_id,
                ray: tr.ray,
                color: tr.color,
                voxel: Some(voxel),
                t_in: h.t_in,
                t_out: h.t_out,
            });
        }
        voxels.push(voxel);
    }
    Ok(VoxelRayBatch {
        voxels,
        rays_per_voxel: r,
        rays,
    })
}

/// `count` rays drawn uniformly without replacement from the whole ray
/// table, ignoring voxels.
pub fn sample_random_rays(
    index: &VoxelRayIndex,
    count: usize,
    rng: &mut impl Rng,
) -> Result<VoxelRayBatch> {
    let n = index.rays.len();
    if count == 0 {
        return Err(Error::invalid("sample_random_rays", "count must be >= 1"));
    }
    let ids: Vec<usize> = if n >= count {
        index::sample(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..n)).collect()
    };
    let rays = ids
        .into_iter()
        .map(|id| {
            let tr = &index.rays[id];
            BatchRay {
                ray_id: id as u32,
                ray: tr.ray,
                color: tr.color,
                voxel: None,
                t_in: tr.ray.near,
                t_out: tr.ray.far,
            }
        })
        .collect();
    Ok(VoxelRayBatch {
        voxels: Vec::new(),
        rays_per_voxel: count,
        rays,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn grid4() -> GridSpec {
        GridSpec {
            resolution: 4,
            scene_range: 4.0,
            origin: [0.0; 3],
        }
    }

    fn ray_x(y: f32, z: f32) -> TrainingRay {
        TrainingRay {
            ray: Ray::new(Vec3::new(-1.0, y, z), Vec3::new(1.0, 0.0, 0.0), 0.0, 10.0).unwrap(),
            color: [y / 4.0, z / 4.0, 0.5],
        }
    }

    #[test]
    fn single_ray_four_entries() {
        let idx = build_ray_index(vec![ray_x(0.5, 0.5)], &grid4()).unwrap();
        assert_eq!(idx.voxels().len(), 4);
        for (_, hits) in idx.entries() {
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].ray_id, 0);
        }
        // empty space is absent
        assert!(idx.hits(grid4().id(0, 3, 3)).is_none());
    }

    #[test]
    fn no_intersection_rejected() {
        let err = build_ray_index(vec![ray_x(10.0, 10.0)], &grid4()).unwrap_err();
        assert!(err.to_string().contains("scene bound"));
    }

    #[test]
    fn exhaustive_draw_and_replacement() {
        // 4 voxels in row y=0,z=0, each with one ray
        let idx = build_ray_index(vec![ray_x(0.5, 0.5)], &grid4()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_batch(&idx, 4, 16, false, &mut rng).unwrap();
        let mut vs = b.voxels.clone();
        vs.sort();
        assert_eq!(vs, idx.voxels().to_vec());
        assert_eq!(b.len(), 64);
        for g in 0..4 {
            assert!(b.group(g).iter().all(|r| r.ray_id == 0));
        }
    }

    #[test]
    fn seeded_batches_repeat() {
        let rays: Vec<_> = (0..8).map(|i| ray_x(0.25 + i as f32 * 0.45, 1.3)).collect();
        let idx = build_ray_index(rays, &grid4()).unwrap();
        let a = sample_batch(&idx, 3, 2, false, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(&idx, 3, 2, false, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let w = sample_batch(&idx, 3, 2, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(w.len(), 6);
    }

    #[test]
    fn empty_index_rejected() {
        let idx = VoxelRayIndex {
            grid: grid4(),
            voxels: vec![],
            hits: vec![],
            rays: vec![],
        };
        assert!(sample_batch(&idx, 1, 1, false, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
