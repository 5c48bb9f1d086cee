//! Planar geometry shared by the simulator, cost maps and planners.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rotates counter-clockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// World pose. The heading is kept in (-π, π].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::from_angle(self.heading)
    }

    /// Expresses a world point in this pose's frame: (longitudinal, lateral).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.heading)
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position() + local.rotate(self.heading)
    }
}

/// Oriented rectangle given by its center, half extents and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Vec2,
    pub half_length: f64,
    pub half_width: f64,
    #[serde(default)]
    pub heading: f64,
}

impl Rect {
    pub fn new(center: Vec2, length: f64, width: f64, heading: f64) -> Self {
        Self {
            center,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
            heading,
        }
    }

    /// Axis-aligned rectangle from corner bounds.
    pub fn from_bounds(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            center: Vec2::new(0.5 * (x_min + x_max), 0.5 * (y_min + y_max)),
            half_length: 0.5 * (x_max - x_min),
            half_width: 0.5 * (y_max - y_min),
            heading: 0.0,
        }
    }

    pub fn footprint(pose: &Pose, length: f64, width: f64) -> Self {
        Self::new(pose.position(), length, width, pose.heading)
    }

    fn axes(&self) -> (Vec2, Vec2) {
        let u = Vec2::from_angle(self.heading);
        (u, u.perp())
    }

    fn local(&self, p: Vec2) -> Vec2 {
        let (u, v) = self.axes();
        let d = p - self.center;
        Vec2::new(d.dot(u), d.dot(v))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.local(p);
        l.x.abs() <= self.half_length && l.y.abs() <= self.half_width
    }

    /// Closest point of the (filled) rectangle to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let l = self.local(p);
        let cx = l.x.clamp(-self.half_length, self.half_length);
        let cy = l.y.clamp(-self.half_width, self.half_width);
        let (u, v) = self.axes();
        self.center + u * cx + v * cy
    }

    /// Euclidean distance from the rectangle to `p`; zero inside.
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let l = self.local(p);
        let dx = (l.x.abs() - self.half_length).max(0.0);
        let dy = (l.y.abs() - self.half_width).max(0.0);
        dx.hypot(dy)
    }

    pub fn intersects_disc(&self, center: Vec2, radius: f64) -> bool {
        self.distance_to_point(center) <= radius
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (u, v) = self.axes();
        let a = u * self.half_length;
        let b = v * self.half_width;
        [
            self.center + a + b,
            self.center - a + b,
            self.center - a - b,
            self.center + a - b,
        ]
    }

    /// Separating-axis overlap test.
    pub fn intersects_rect(&self, other: &Rect) -> bool {
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        let ca = self.corners();
        let cb = other.corners();
        for axis in [u1, v1, u2, v2] {
            let (amin, amax) = project(&ca, axis);
            let (bmin, bmax) = project(&cb, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    /// True when the closed segment `a`-`b` touches the rectangle.
    pub fn intersects_segment(&self, a: Vec2, b: Vec2) -> bool {
        // Liang-Barsky clip in the rectangle frame.
        let p0 = self.local(a);
        let p1 = self.local(b);
        let d = p1 - p0;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for (p, q) in [
            (-d.x, p0.x + self.half_length),
            (d.x, self.half_length - p0.x),
            (-d.y, p0.y + self.half_width),
            (d.y, self.half_width - p0.y),
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

    /// Axis-aligned bounding box (x_min, y_min, x_max, y_max).
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let c = self.corners();
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in c {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }
}

fn project(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let s = p.dot(axis);
        (lo.min(s), hi.max(s))
    })
}

/// Shortest distance from `p` to segment `a`-`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}
