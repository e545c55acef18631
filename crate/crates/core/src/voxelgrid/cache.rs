use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::index::{RayHit, TrainingRay, VoxelRayIndex};
use super::{GridSpec, VoxelId};
use crate::error::{Error, Result};
use crate::geometry::{ray_aabb_intersect, Ray, Vec3};

pub const INDEX_MAGIC: &[u8; 7] = b"CVTIDX1";

/// Tolerance when re-checking stored spans against direct intersection.
const SPAN_TOLERANCE: f32 = 1e-5;

/// Layout (little-endian): magic, grid (u32 resolution, f32 range, 3×f32
/// origin), u32 ray count, rays (3×f32 origin, 3×f32 direction, f32 near,
/// f32 far, 3×f32 color), u32 voxel count, then per voxel u32 id, u32 hit
/// count and hits (u32 ray id, f32 t_in, f32 t_out).
pub fn save_index(index: &VoxelRayIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    let g = &index.grid;
    w.write_u32::<LittleEndian>(g.resolution)?;
    w.write_f32::<LittleEndian>(g.scene_range)?;
    for v in g.origin {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.write_u32::<LittleEndian>(index.rays.len() as u32)?;
    for tr in &index.rays {
        let r = &tr.ray;
        for v in r
            .origin
            .to_array()
            .into_iter()
            .chain(r.direction.to_array())
        {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.write_f32::<LittleEndian>(r.near)?;
        w.write_f32::<LittleEndian>(r.far)?;
        for v in tr.color {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.write_u32::<LittleEndian>(index.voxels.len() as u32)?;
    for (voxel, hits) in index.entries() {
        w.write_u32::<LittleEndian>(voxel.0)?;
        w.write_u32::<LittleEndian>(hits.len() as u32)?;
        for h in hits {
            w.write_u32::<LittleEndian>(h.ray_id)?;
            w.write_f32::<LittleEndian>(h.t_in)?;
            w.write_f32::<LittleEndian>(h.t_out)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::IndexCache(reason.into())
}

fn read_vec3(r: &mut impl Read) -> std::io::Result<Vec3> {
    Ok(Vec3::new(
        r.read_f32::<LittleEndian>()?,
        r.read_f32::<LittleEndian>()?,
        r.read_f32::<LittleEndian>()?,
    ))
}

/// Reads a cache written by [`save_index`] and re-validates every invariant.
pub fn load_index(path: &Path) -> Result<VoxelRayIndex> {
    let mut r = BufReader::new(File::open(path)?);
    let truncated = |e: std::io::Error| corrupt(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != INDEX_MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let resolution = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let scene_range = r.read_f32::<LittleEndian>().map_err(truncated)?;
    let o = read_vec3(&mut r).map_err(truncated)?;
    let grid = GridSpec {
        resolution,
        scene_range,
        origin: o.to_array(),
    };
    grid.validate().map_err(|e| corrupt(e.to_string()))?;

    let n_rays = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut rays = Vec::with_capacity(n_rays.min(1 << 24));
    for i in 0..n_rays {
        let origin = read_vec3(&mut r).map_err(truncated)?;
        let direction = read_vec3(&mut r).map_err(truncated)?;
        let near = r.read_f32::<LittleEndian>().map_err(truncated)?;
        let far = r.read_f32::<LittleEndian>().map_err(truncated)?;
        let c = read_vec3(&mut r).map_err(truncated)?;
        if (direction.length() - 1.0).abs() > 1e-5 || !(near >= 0.0 && near < far) {
            return Err(corrupt(format!("ray {i} is malformed")));
        }
        rays.push(TrainingRay {
            ray: Ray {
                origin,
                direction,
                near,
                far,
            },
            color: c.to_array(),
        });
    }

    let n_voxels = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut voxels = Vec::with_capacity(n_voxels.min(1 << 24));
    let mut hits = Vec::with_capacity(n_voxels.min(1 << 24));
    for _ in 0..n_voxels {
        let voxel = VoxelId(r.read_u32::<LittleEndian>().map_err(truncated)?);
        if voxel.0 >= grid.voxel_count() {
            return Err(corrupt(format!("voxel id {} outside grid", voxel.0)));
        }
        if voxels.last().is_some_and(|&last| last >= voxel) {
            return Err(corrupt("voxel ids not strictly ascending"));
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if count == 0 {
            return Err(corrupt(format!("voxel {} has no rays", voxel.0)));
        }
        let aabb = grid.voxel_aabb(voxel);
        let mut list = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let h = RayHit {
                ray_id: r.read_u32::<LittleEndian>().map_err(truncated)?,
                t_in: r.read_f32::<LittleEndian>().map_err(truncated)?,
                t_out: r.read_f32::<LittleEndian>().map_err(truncated)?,
            };
            let ray = rays
                .get(h.ray_id as usize)
                .ok_or_else(|| corrupt(format!("ray id {} out of range", h.ray_id)))?;
            if list.last().is_some_and(|l: &RayHit| l.ray_id >= h.ray_id) {
                return Err(corrupt(format!("voxel {} ray list not sorted", voxel.0)));
            }
            let ok = ray_aabb_intersect(&ray.ray, &aabb).is_some_and(|(a, b)| {
                (a - h.t_in).abs() <= SPAN_TOLERANCE * a.abs().max(1.0)
                    && (b - h.t_out).abs() <= SPAN_TOLERANCE * b.abs().max(1.0)
            });
            if !ok {
                return Err(corrupt(format!(
                    "ray {} does not cross voxel {} at the stored span",
                    h.ray_id, voxel.0
                )));
            }
            list.push(h);
        }
        voxels.push(voxel);
        hits.push(list);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }
    if voxels.is_empty() {
        return Err(corrupt("no indexed voxels"));
    }
    Ok(VoxelRayIndex {
        grid,
        voxels,
        hits,
        rays,
    })
}
