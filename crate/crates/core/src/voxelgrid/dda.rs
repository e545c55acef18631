use super::{GridSpec, VoxelId};
use crate::geometry::{ray_aabb_intersect, Ray};

/// A ray's stay inside one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelSpan {
    pub voxel: VoxelId,
    pub t_enter: f32,
    pub t_exit: f32,
}

/// Spans shorter than this fraction of a voxel (corner grazes produced by
/// rounding) are dropped.
const MIN_SPAN: f32 = 1e-5;

/// Voxels pierced by `ray` in ascending `t` (Amanatides–Woo walk).
/// Consecutive spans abut; a ray that misses the bound yields nothing.
pub fn dda_traverse(ray: &Ray, grid: &GridSpec) -> Vec<VoxelSpan> {
    let Some((t_start, t_end)) = ray_aabb_intersect(ray, &grid.bounds()) else {
        return Vec::new();
    };
    let size = grid.voxel_size();
    let res = grid.resolution as i64;
    let min_span = MIN_SPAN * size;

    let entry = ray.at(t_start);
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    for axis in 0..3 {
        let d = ray.direction[axis];
        let rel = (entry[axis] - grid.origin[axis]) / size;
        let mut c = rel.floor() as i64;
        // On a plane while heading backwards: the cell behind the plane.
        if d < 0.0 && rel == rel.floor() {
            c -= 1;
        }
        cell[axis] = c.clamp(0, res - 1);
        step[axis] = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        };
    }

    let next_crossing = |axis: usize, c: i64| -> f32 {
        match step[axis] {
            0 => f32::INFINITY,
            s => {
                let plane = grid.plane(axis, if s > 0 { c + 1 } else { c });
                (plane - ray.origin[axis]) / ray.direction[axis]
            }
        }
    };
    let mut t_max = [0.0f32; 3];
    for axis in 0..3 {
        t_max[axis] = next_crossing(axis, cell[axis]);
    }

    let mut spans = Vec::new();
    let mut t_enter = t_start;
    loop {
        let t_exit = t_max[0].min(t_max[1]).min(t_max[2]).min(t_end);
        if t_exit - t_enter > min_span {
            spans.push(VoxelSpan {
                voxel: grid.id(cell[0] as u32, cell[1] as u32, cell[2] as u32),
                t_enter,
                t_exit,
            });
        }
        if t_exit >= t_end {
            break;
        }
        t_enter = t_enter.max(t_exit);
        let axis = (0..3)
            .min_by(|&a, &b| t_max[a].total_cmp(&t_max[b]))
            .expect("three axes");
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= res {
            break;
        }
        t_max[axis] = next_crossing(axis, cell[axis]);
    }
    spans
}
