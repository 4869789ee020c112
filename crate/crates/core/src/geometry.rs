//! Planar vector math and the exact intersection primitives the lidar,
//! collision checks and rasterizer are built on.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or direction in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the x axis.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Returns `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A straight wall piece between two distinct points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let e = self.b - self.a;
        let len2 = e.norm_squared();
        if len2 == 0.0 {
            return p.distance(self.a);
        }
        let t = ((p - self.a).dot(e) / len2).clamp(0.0, 1.0);
        p.distance(self.a + e * t)
    }

    /// Ray parameter of the first crossing of `origin + t * dir` with this
    /// segment, for `t > 0`. Parallel rays never hit.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() <= 1e-12 * e.norm() {
            return None;
        }
        let ao = self.a - origin;
        let t = ao.cross(e) / denom;
        let u = ao.cross(dir) / denom;
        (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }

    /// Closed-box overlap test against the axis-aligned rectangle `[lo, hi]`.
    pub fn touches_box(&self, lo: Vec2, hi: Vec2) -> bool {
        // Liang-Barsky clipping against the box.
        let d = self.b - self.a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (p, q) in [
            (-d.x, self.a.x - lo.x),
            (d.x, hi.x - self.a.x),
            (-d.y, self.a.y - lo.y),
            (d.y, hi.y - self.a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Ray parameter of the first entry of `origin + t * dir` (unit `dir`) into
/// the circle, for `t > 0`.
pub fn ray_circle_hit(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let f = origin - center;
    let b = f.dot(dir);
    let c = f.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Stable root pair: avoid cancellation in -b ± s.
    let (near, far) = if b > 0.0 {
        let q = -b - s;
        let other = if q != 0.0 { c / q } else { 0.0 };
        (q.min(other), q.max(other))
    } else {
        let q = -b + s;
        let other = if q != 0.0 { c / q } else { 0.0 };
        (q.min(other), q.max(other))
    };
    if near > 0.0 {
        Some(near)
    } else if far > 0.0 {
        Some(far)
    } else {
        None
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let a = (angle + PI).rem_euclid(TAU) - PI;
    if a >= PI {
        a - TAU
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_axis_aligned_wall() {
        let wall = Segment::new(Vec2::new(5.0, -5.0), Vec2::new(5.0, 5.0));
        let t = wall.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap();
        assert_eq!(t, 5.0);
        assert!(wall.ray_hit(Vec2::ZERO, Vec2::new(-1.0, 0.0)).is_none());
    }

    #[test]
    fn parallel_ray_misses() {
        let wall = Segment::new(Vec2::new(0.0, 1.0), Vec2::new(5.0, 1.0));
        assert!(wall.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).is_none());
        // Collinear also reports no hit.
        let wall = Segment::new(Vec2::new(1.0, 0.0), Vec2::new(5.0, 0.0));
        assert!(wall.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).is_none());
    }

    #[test]
    fn circle_hit_from_outside_and_inside() {
        let t = ray_circle_hit(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0), 0.25).unwrap();
        assert!((t - 1.75).abs() < 1e-15);
        let t = ray_circle_hit(Vec2::new(2.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0), 0.25)
            .unwrap();
        assert!((t - 0.25).abs() < 1e-15);
        assert!(ray_circle_hit(Vec2::ZERO, Vec2::new(-1.0, 0.0), Vec2::new(2.0, 0.0), 0.25).is_none());
    }

    #[test]
    fn point_segment_distance_cases() {
        let s = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0));
        assert_eq!(s.distance_to(Vec2::new(1.0, 0.24)), 0.24);
        assert_eq!(s.distance_to(Vec2::new(3.0, 0.0)), 1.0);
        assert_eq!(s.distance_to(Vec2::new(1.0, 0.0)), 0.0);
    }

    #[test]
    fn box_touch() {
        let s = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0));
        assert!(s.touches_box(Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.1)));
        assert!(s.touches_box(Vec2::new(-0.1, 0.5), Vec2::new(0.0, 0.6)));
        assert!(!s.touches_box(Vec2::new(0.01, 0.0), Vec2::new(0.1, 0.1)));
        let d = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
        assert!(!d.touches_box(Vec2::new(0.6, 0.0), Vec2::new(1.0, 0.3)));
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        for k in -20..20 {
            let a = wrap_angle(k as f64 * 0.7);
            assert!((-PI..PI).contains(&a));
        }
        assert!((wrap_angle(3.0 * PI) + PI).abs() < 1e-12);
    }
}
