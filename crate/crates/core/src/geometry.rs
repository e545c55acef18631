//! Rays, boxes and the point samplers used by the training pipeline.

use std::ops::{Add, Index, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f32) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [f32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Vec3 {
        self * (1.0 / self.length())
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f32;
    fn index(&self, i: usize) -> &f32 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Half-line `origin + t·direction` restricted to `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub near: f32,
    pub far: f32,
}

impl Ray {
    /// Normalizes `direction`; rejects degenerate directions and empty ranges.
    pub fn new(origin: Vec3, direction: Vec3, near: f32, far: f32) -> Result<Self> {
        let len = direction.length();
        if !(len > 0.0) || !origin.is_finite() || !direction.is_finite() {
            return Err(Error::invalid(
                "ray",
                format!("bad origin/direction {origin:?} {direction:?}"),
            ));
        }
        if !(near >= 0.0 && near < far) {
            return Err(Error::invalid(
                "ray",
                format!("need 0 <= near < far, got {near}..{far}"),
            ));
        }
        Ok(Self {
            origin,
            direction: direction * (1.0 / len),
            near,
            far,
        })
    }

    pub fn at(&self, t: f32) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x <= max.x && min.y <= max.y && min.z <= max.z) {
            return Err(Error::invalid(
                "aabb",
                format!("min {min:?} exceeds max {max:?}"),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn cube(min: Vec3, side: f32) -> Self {
        Self {
            min,
            max: min + Vec3::splat(side),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn translate(&self, by: Vec3) -> Self {
        Self {
            min: self.min + by,
            max: self.max + by,
        }
    }
}

/// Entry/exit parameters of `ray` through `aabb`, clamped to the ray's
/// `[near, far]`. `None` when the clamped interval is empty.
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<(f32, f32)> {
    let mut t0 = ray.near;
    let mut t1 = ray.far;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        let (lo, hi) = (aabb.min[axis], aabb.max[axis]);
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut b) = ((lo - o) * inv, (hi - o) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// `count` points uniform in the ball of `radius` around `center`, by
/// rejection from the bounding cube.
pub fn sphere_sample(
    center: Vec3,
    radius: f32,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec3>> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(
            "sphere_sample",
            format!("radius must be >= 0, got {radius}"),
        ));
    }
    if radius == 0.0 {
        return Ok(vec![center; count]);
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = Vec3::new(
            rng.gen_range(-1.0f32..1.0),
            rng.gen_range(-1.0f32..1.0),
            rng.gen_range(-1.0f32..1.0),
        );
        if p.dot(p) <= 1.0 {
            out.push(center + p * radius);
        }
    }
    Ok(out)
}

/// A straight segment parametrized as `origin + t·direction`, `t ∈ [t_in, t_out]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_in: f32,
    pub t_out: f32,
}

impl Segment {
    /// `x_in + u·(x_out − x_in)` with `u ∈ [0, 1]`.
    pub fn between(x_in: Vec3, x_out: Vec3) -> Self {
        Self {
            origin: x_in,
            direction: x_out - x_in,
            t_in: 0.0,
            t_out: 1.0,
        }
    }

    pub fn on_ray(ray: &Ray, t_in: f32, t_out: f32) -> Self {
        Self {
            origin: ray.origin,
            direction: ray.direction,
            t_in,
            t_out,
        }
    }

    pub fn at(&self, t: f32) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSamples {
    pub points: Vec<Vec3>,
    /// Ascending, within the segment's `[t_in, t_out]`.
    pub t_values: Vec<f32>,
}

/// `count` points uniform on `segment`, sorted by `t`.
pub fn line_sample(segment: &Segment, count: usize, rng: &mut impl Rng) -> SegmentSamples {
    let span = segment.t_out - segment.t_in;
    let mut t_values: Vec<f32> = (0..count)
        .map(|_| {
            let u: f32 = rng.gen();
            (segment.t_in + u * span).clamp(segment.t_in, segment.t_out)
        })
        .collect();
    t_values.sort_by(f32::total_cmp);
    let points = t_values.iter().map(|&t| segment.at(t)).collect();
    SegmentSamples { points, t_values }
}

/// One jittered sample per equal-width bin of `[near, far)`, ascending.
pub fn stratified_sample(near: f32, far: f32, count: usize, rng: &mut impl Rng) -> Vec<f32> {
    stratified_with(near, far, count, || rng.gen::<f32>())
}

/// Bin midpoints; the jitter-free form of [`stratified_sample`].
pub fn stratified_midpoints(near: f32, far: f32, count: usize) -> Vec<f32> {
    stratified_with(near, far, count, || 0.5)
}

fn stratified_with(near: f32, far: f32, count: usize, mut jitter: impl FnMut() -> f32) -> Vec<f32> {
    let width = (far - near) / count as f32;
    let below_far = f32::from_bits(far.to_bits() - 1);
    (0..count)
        .map(|i| (near + (i as f32 + jitter()) * width).min(below_far))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn unit_cube() -> Aabb {
        Aabb::cube(Vec3::ZERO, 1.0)
    }

    #[test]
    fn axis_aligned_hit() {
        let ray = Ray::new(
            Vec3::new(-1.0, 0.5, 0.5),
            Vec3::new(1.0, 0.0, 0.0),
            0.0,
            10.0,
        )
        .unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), Some((1.0, 2.0)));
    }

    #[test]
    fn origin_inside_clamps_to_near() {
        let ray = Ray::new(Vec3::splat(0.5), Vec3::new(1.0, 0.0, 0.0), 0.0, 10.0).unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), Some((0.0, 0.5)));
    }

    #[test]
    fn parallel_outside_misses() {
        let ray = Ray::new(
            Vec3::new(-1.0, 2.0, 0.5),
            Vec3::new(1.0, 0.0, 0.0),
            0.0,
            10.0,
        )
        .unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), None);
    }

    #[test]
    fn far_clamp_can_miss() {
        let ray = Ray::new(
            Vec3::new(-1.0, 0.5, 0.5),
            Vec3::new(1.0, 0.0, 0.0),
            0.0,
            0.5,
        )
        .unwrap();
        assert_eq!(ray_aabb_intersect(&ray, &unit_cube()), None);
    }

    #[test]
    fn zero_radius_sphere_repeats_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(sphere_sample(c, 0.0, 9, &mut rng).unwrap(), vec![c; 9]);
        assert!(sphere_sample(c, -1.0, 9, &mut rng).is_err());
    }

    #[test]
    fn degenerate_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Vec3::new(0.3, 0.3, 0.3);
        let s = line_sample(&Segment::between(p, p), 5, &mut rng);
        assert!(s.points.iter().all(|&q| q == p));
        assert!(s.t_values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_bin_midpoint() {
        assert_eq!(stratified_midpoints(2.0, 6.0, 1), vec![4.0]);
    }

    #[test]
    fn one_sample_per_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = stratified_sample(2.0, 6.0, 64, &mut rng);
        let w = 4.0 / 64.0;
        for (i, v) in t.iter().enumerate() {
            assert!(*v >= 2.0 + i as f32 * w - 1e-6 && *v < 2.0 + (i + 1) as f32 * w + 1e-6);
            assert!(*v < 6.0);
        }
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
    }
}
