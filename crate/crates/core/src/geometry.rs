//! Pinhole camera model and rigid transforms.
//!
//! Camera frame: x right, y down, z forward. World frame: right-handed, z up.
//! A viewpoint's heading-0 horizontal camera looks along world +y, and
//! headings grow clockwise when seen from above (toward world +x).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type Rotation = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Square pixels, principal point at `(width/2, height/2)`.
    pub fn from_fov(width: usize, height: usize, vertical_fov_deg: f64) -> Result<Self> {
        if !(vertical_fov_deg > 0.0 && vertical_fov_deg < 180.0) {
            return Err(Error::invalid(format!(
                "vertical fov must lie in (0, 180) degrees, got {vertical_fov_deg}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let fy = (height as f64 / 2.0) / (vertical_fov_deg.to_radians() / 2.0).tan();
        Self::new(fy, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl Default for Intrinsics {
    /// 512x512 with a 60° vertical field of view.
    fn default() -> Self {
        Self::from_fov(512, 512, 60.0).expect("default intrinsics are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Unit-length 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub fn new_normalized(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self(v / n))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }
}

/// Camera-to-world rigid transform: `P_w = R * P + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn camera_to_world(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn world_to_camera(&self, p: &Point3) -> Point3 {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// How the translation of a [`RelativePose`] is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationConvention {
    /// `p' = R * (p + T)`: translate in the source frame, then rotate.
    RotateAfterTranslate,
    /// `p' = R * p + t`.
    RotateThenAdd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    rotation: Rotation,
    translation: Vector3<f64>,
    convention: TranslationConvention,
}

impl RelativePose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, convention: TranslationConvention) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
            convention,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
            convention: TranslationConvention::RotateThenAdd,
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Result<Self> {
        Self::new(rotation, Vector3::zeros(), TranslationConvention::RotateThenAdd)
    }

    /// Transform taking camera-frame points of `from` into the camera frame of
    /// `to`, in canonical form.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        let rt = to.rotation.transpose();
        Self {
            rotation: rt * from.rotation,
            translation: rt * (from.translation - to.translation),
            convention: TranslationConvention::RotateThenAdd,
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn convention(&self) -> TranslationConvention {
        self.convention
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        match self.convention {
            TranslationConvention::RotateAfterTranslate => self.rotation * (p + self.translation),
            TranslationConvention::RotateThenAdd => self.rotation * p + self.translation,
        }
    }

    pub fn to_canonical(&self) -> Self {
        match self.convention {
            TranslationConvention::RotateThenAdd => *self,
            TranslationConvention::RotateAfterTranslate => Self {
                rotation: self.rotation,
                translation: self.rotation * self.translation,
                convention: TranslationConvention::RotateThenAdd,
            },
        }
    }

    pub fn to_translate_first(&self) -> Self {
        match self.convention {
            TranslationConvention::RotateAfterTranslate => *self,
            TranslationConvention::RotateThenAdd => Self {
                rotation: self.rotation,
                translation: self.rotation.transpose() * self.translation,
                convention: TranslationConvention::RotateAfterTranslate,
            },
        }
    }

    pub fn inverse(&self) -> Self {
        let c = self.to_canonical();
        let rt = c.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * c.translation),
            convention: TranslationConvention::RotateThenAdd,
        }
    }
}

pub fn is_rotation(m: &Rotation, tol: f64) -> bool {
    let ortho = (m.transpose() * m - Rotation::identity()).abs().max() <= tol;
    ortho && (m.determinant() - 1.0).abs() <= tol
}

pub fn check_rotation(m: &Rotation) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) || !is_rotation(m, ORTHO_TOL) {
        return Err(Error::invalid("matrix is not a proper rotation"));
    }
    Ok(())
}

/// Turn to the right by `deg` degrees (about the camera y axis).
pub fn yaw(deg: f64) -> Rotation {
    let (s, c) = deg.to_radians().sin_cos();
    Rotation::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Tilt upward by `deg` degrees (about the camera x axis).
pub fn pitch(deg: f64) -> Rotation {
    let (s, c) = deg.to_radians().sin_cos();
    Rotation::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotate about the optical axis by `deg` degrees.
pub fn roll(deg: f64) -> Rotation {
    let (s, c) = deg.to_radians().sin_cos();
    Rotation::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `yaw * pitch * roll`, i.e. roll applied first.
pub fn yaw_pitch_roll(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Rotation {
    yaw(yaw_deg) * pitch(pitch_deg) * roll(roll_deg)
}

/// Rotation taking heading-0 camera coordinates into world coordinates.
pub fn camera_to_world_axes() -> Rotation {
    // columns: camera x -> world +x, camera y (down) -> world -z, camera z -> world +y
    Rotation::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0)
}

/// `P = K^-1 [u d, v d, d]^T`.
pub fn unproject(p: PixelCoord, depth: f64, k: &Intrinsics) -> Result<Point3> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::invalid(format!("depth must be positive and finite, got {depth}")));
    }
    Ok(unproject_unchecked(p.u, p.v, depth, k))
}

#[inline]
pub(crate) fn unproject_unchecked(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Point3 {
    Point3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)
}

/// Pinhole projection; returns the pixel and the z-depth.
pub fn project(p: &Point3, k: &Intrinsics) -> Result<(PixelCoord, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((
        PixelCoord::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
        p.z,
    ))
}

pub fn camera_to_world(p: &Point3, pose: &Pose) -> Point3 {
    pose.camera_to_world(p)
}

pub fn apply_relative(p: &Point3, rel: &RelativePose) -> Point3 {
    rel.apply(p)
}

/// Ray through pixel `p`, normalized onto the unit sphere.
pub fn pixel_to_sphere(p: PixelCoord, k: &Intrinsics) -> Direction {
    let ray = Vector3::new((p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0);
    Direction(ray / ray.norm())
}

/// `R_view * R_extrinsic * d`.
pub fn rotate_direction(d: &Direction, r_view: &Rotation, r_extrinsic: &Rotation) -> Result<Direction> {
    check_rotation(r_view)?;
    check_rotation(r_extrinsic)?;
    Ok(Direction(r_view * (r_extrinsic * d.0)))
}
