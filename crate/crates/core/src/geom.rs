//! Point clouds and the rigid augmentation group (flip, scale, yaw, translation).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub type Point = [f64; 3];

/// Ordered 3D points; a point's index is its identity across frames and views.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(i) = &intensity {
            if i.len() != points.len() {
                return Err(Error::LengthMismatch {
                    what: "intensity vs points",
                    expected: points.len(),
                    actual: i.len(),
                });
            }
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("points", "non-finite coordinate"));
        }
        Ok(Self { points, intensity })
    }

    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            intensity: None,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same intensity and ordering, new coordinates. Caller guarantees equal length.
    pub(crate) fn with_points(&self, points: Vec<Point>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self {
            points,
            intensity: self.intensity.clone(),
        }
    }

    /// Keeps the listed indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Element of the augmentation group.
///
/// Acts on a point as `x' = R(yaw) * (scale * F(x)) + translation`, where `F`
/// negates the y coordinate when `flip` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub flip: bool,
    pub scale: f64,
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            flip: false,
            scale: 1.0,
            yaw: 0.0,
            translation: [0.0; 3],
        }
    }

    pub fn new(flip: bool, scale: f64, yaw: f64, translation: [f64; 3]) -> Result<Self> {
        let t = Self {
            flip,
            scale,
            yaw: wrap_angle(yaw),
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn yaw(yaw: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            ..Self::identity()
        }
    }

    pub fn flip() -> Self {
        Self {
            flip: true,
            ..Self::identity()
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("scale", "must be finite and > 0"));
        }
        if !self.yaw.is_finite() || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("transform", "non-finite field"));
        }
        Ok(())
    }

    /// Linear part only: rotation, scale and flip.
    fn apply_linear(&self, p: Point) -> Point {
        let y = if self.flip { -p[1] } else { p[1] };
        let (x, y, z) = (self.scale * p[0], self.scale * y, self.scale * p[2]);
        let (s, c) = self.yaw.sin_cos();
        [c * x - s * y, s * x + c * y, z]
    }

    pub fn apply_point(&self, p: Point) -> Point {
        let q = self.apply_linear(p);
        [
            q[0] + self.translation[0],
            q[1] + self.translation[1],
            q[2] + self.translation[2],
        ]
    }

    /// `compose(a, b)` applies `a` first, then `b`.
    pub fn compose(&self, then: &RigidTransform) -> RigidTransform {
        // F R(a) = R(-a) F, so b's flip mirrors a's yaw.
        let mirrored = if then.flip { -self.yaw } else { self.yaw };
        RigidTransform {
            flip: self.flip ^ then.flip,
            scale: self.scale * then.scale,
            yaw: wrap_angle(then.yaw + mirrored),
            translation: then.apply_point(self.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let mut inv = RigidTransform {
            flip: self.flip,
            scale: 1.0 / self.scale,
            yaw: if self.flip { self.yaw } else { wrap_angle(-self.yaw) },
            translation: [0.0; 3],
        };
        let t = inv.apply_linear(self.translation);
        inv.translation = [-t[0], -t[1], -t[2]];
        inv
    }
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    cloud.with_points(cloud.points.iter().map(|&p| t.apply_point(p)).collect())
}

pub fn compose(first: &RigidTransform, second: &RigidTransform) -> RigidTransform {
    first.compose(second)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Closed interval `[lo, hi]`; `lo == hi` is a valid point interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::config(field, format!("empty or non-finite interval [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn sample(&self, rng: &mut SeedStream) -> f64 {
        let u: f64 = rng.gen();
        self.lo + self.width() * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub yaw_range: Interval,
    pub translation_range: Interval,
    pub scale_range: Interval,
    pub flip_probability: f64,
    pub n_rotation_classes: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            yaw_range: Interval::new(-PI / 2.0, PI / 2.0),
            translation_range: Interval::new(0.0, 0.2),
            scale_range: Interval::new(0.95, 1.05),
            flip_probability: 0.5,
            n_rotation_classes: 10,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.yaw_range.validate("augment.yaw_range")?;
        self.translation_range.validate("augment.translation_range")?;
        self.scale_range.validate("augment.scale_range")?;
        if self.scale_range.lo <= 0.0 {
            return Err(Error::config("augment.scale_range", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("augment.flip_probability", "must lie in [0, 1]"));
        }
        if self.n_rotation_classes == 0 {
            return Err(Error::config("augment.n_rotation_classes", "must be positive"));
        }
        Ok(())
    }

    /// Yaw at the center of rotation bin `class`.
    pub fn bin_center(&self, class: usize) -> f64 {
        let w = self.yaw_range.width() / self.n_rotation_classes as f64;
        self.yaw_range.lo + (class as f64 + 0.5) * w
    }
}

/// Draws one augmentation and its rotation class.
pub fn sample_transform(cfg: &AugmentConfig, rng: &mut SeedStream) -> (RigidTransform, usize) {
    let class = rng.gen_range(0..cfg.n_rotation_classes);
    let flip = rng.gen_bool(cfg.flip_probability);
    let scale = cfg.scale_range.sample(rng);
    let translation = [
        cfg.translation_range.sample(rng),
        cfg.translation_range.sample(rng),
        cfg.translation_range.sample(rng),
    ];
    let t = RigidTransform {
        flip,
        scale,
        yaw: wrap_angle(cfg.bin_center(class)),
        translation,
    };
    (t, class)
}
