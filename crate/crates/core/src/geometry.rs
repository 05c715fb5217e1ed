//! Pose algebra, the circular needle model and arc constructions.
//!
//! Angles cross the public surface in degrees. Lengths are millimetres.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance from the needle body within which a point counts as "on" the needle.
pub const NEEDLE_TUBE_TOLERANCE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("angle {theta}° outside needle span [0, {span}]")]
    AngleOutOfSpan { theta: f64, span: f64 },
    #[error("chord length {chord} mm exceeds needle diameter {diameter} mm")]
    NoArc { chord: f64, diameter: f64 },
    #[error("entry and exit targets coincide")]
    DegenerateTargets,
    #[error("surface normal is parallel to the chord")]
    NormalAlongChord,
    #[error("point is {distance} mm from the needle body")]
    NotOnNeedle { distance: f64 },
    #[error("zero-length direction")]
    ZeroLength,
    #[error("invalid needle model: {0}")]
    InvalidNeedle(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Result<Vec3, GeometryError> {
        let n = self.norm();
        if n < 1e-12 || !n.is_finite() {
            return Err(GeometryError::ZeroLength);
        }
        Ok(self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    /// Some unit vector perpendicular to `self` (which must be non-zero).
    pub fn any_perpendicular(self) -> Vec3 {
        let a = if self.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        self.cross(a).normalized().unwrap_or(Vec3::Z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation quaternion, stored `[w, x, y, z]` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for UnitQuat {
    fn from(a: [f64; 4]) -> Self {
        UnitQuat { w: a[0], x: a[1], y: a[2], z: a[3] }
    }
}

impl From<UnitQuat> for [f64; 4] {
    fn from(q: UnitQuat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Default for UnitQuat {
    fn default() -> Self {
        UnitQuat::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes arbitrary components. Zero input yields identity.
    pub fn from_components(w: f64, x: f64, y: f64, z: f64) -> UnitQuat {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n < 1e-12 || !n.is_finite() {
            return UnitQuat::IDENTITY;
        }
        UnitQuat { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    pub fn from_axis_angle(axis: Vec3, degrees: f64) -> UnitQuat {
        let axis = match axis.normalized() {
            Ok(a) => a,
            Err(_) => return UnitQuat::IDENTITY,
        };
        let half = degrees.to_radians() * 0.5;
        let s = half.sin();
        UnitQuat::from_components(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Rotation whose columns are the given orthonormal frame axes.
    pub fn from_basis(x_axis: Vec3, y_axis: Vec3, z_axis: Vec3) -> UnitQuat {
        let (m00, m10, m20) = (x_axis.x, x_axis.y, x_axis.z);
        let (m01, m11, m21) = (y_axis.x, y_axis.y, y_axis.z);
        let (m02, m12, m22) = (z_axis.x, z_axis.y, z_axis.z);
        let trace = m00 + m11 + m22;
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            UnitQuat::from_components(0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            UnitQuat::from_components((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            UnitQuat::from_components((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            UnitQuat::from_components((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
        }
    }

    /// Shortest-arc rotation taking direction `from` onto direction `to`.
    pub fn rotation_between(from: Vec3, to: Vec3) -> UnitQuat {
        let (Ok(a), Ok(b)) = (from.normalized(), to.normalized()) else {
            return UnitQuat::IDENTITY;
        };
        let d = a.dot(b);
        if d > 1.0 - 1e-15 {
            return UnitQuat::IDENTITY;
        }
        if d < -1.0 + 1e-12 {
            return UnitQuat::from_axis_angle(a.any_perpendicular(), 180.0);
        }
        let c = a.cross(b);
        UnitQuat::from_components(1.0 + d, c.x, c.y, c.z)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(self) -> UnitQuat {
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product `self * o` (apply `o` first), renormalized.
    pub fn compose(self, o: UnitQuat) -> UnitQuat {
        UnitQuat::from_components(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Spherical interpolation along the shorter path; `t` in [0, 1].
    pub fn slerp(self, o: UnitQuat, t: f64) -> UnitQuat {
        let mut d = self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z;
        let o = if d < 0.0 {
            d = -d;
            UnitQuat { w: -o.w, x: -o.x, y: -o.y, z: -o.z }
        } else {
            o
        };
        let (a, b) = if d > 0.9995 {
            (1.0 - t, t)
        } else {
            let th = d.min(1.0).acos();
            let s = th.sin();
            (((1.0 - t) * th).sin() / s, (t * th).sin() / s)
        };
        UnitQuat::from_components(
            a * self.w + b * o.w,
            a * self.x + b * o.x,
            a * self.y + b * o.y,
            a * self.z + b * o.z,
        )
    }

    /// Rotation angle between two orientations, degrees in [0, 180].
    pub fn angle_to(self, o: UnitQuat) -> f64 {
        let r = self.conjugate().compose(o);
        let v = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
        (2.0 * v.atan2(r.w.abs())).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "pos")]
    pub position: Vec3,
    #[serde(rename = "rot")]
    pub orientation: UnitQuat,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: Vec3::ZERO, orientation: UnitQuat::IDENTITY };

    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Pose { position, orientation }
    }

    pub fn from_position(position: Vec3) -> Self {
        Pose { position, orientation: UnitQuat::IDENTITY }
    }

    pub fn transform_point(&self, local: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(local)
    }

    pub fn transform_vector(&self, local: Vec3) -> Vec3 {
        self.orientation.rotate(local)
    }

    pub fn inverse_transform_point(&self, world: Vec3) -> Vec3 {
        self.orientation.conjugate().rotate(world - self.position)
    }

    /// `self ∘ o`: the pose `o` expressed in `self`'s frame, mapped to world.
    pub fn compose(&self, o: &Pose) -> Pose {
        Pose {
            position: self.transform_point(o.position),
            orientation: self.orientation.compose(o.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.conjugate();
        Pose { position: -inv.rotate(self.position), orientation: inv }
    }

    pub fn axis_x(&self) -> Vec3 {
        self.orientation.rotate(Vec3::X)
    }

    pub fn axis_y(&self) -> Vec3 {
        self.orientation.rotate(Vec3::Y)
    }

    pub fn axis_z(&self) -> Vec3 {
        self.orientation.rotate(Vec3::Z)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.is_finite()
    }
}

/// Planar circular needle. Tip at local angle 0°, tail at `span`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleModel {
    pub radius: f64,
    pub span: f64,
}

impl NeedleModel {
    pub fn new(radius: f64, span: f64) -> Result<Self, GeometryError> {
        let m = NeedleModel { radius, span };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(GeometryError::InvalidNeedle("radius must be positive"));
        }
        if !(self.span > 0.0 && self.span <= 360.0) {
            return Err(GeometryError::InvalidNeedle("span must lie in (0, 360]"));
        }
        if self.span < 165.0 {
            return Err(GeometryError::InvalidNeedle("span must cover the 165° grasp point"));
        }
        Ok(())
    }

    fn local_point(&self, theta: f64) -> Vec3 {
        let (s, c) = theta.to_radians().sin_cos();
        Vec3::new(self.radius * c, self.radius * s, 0.0)
    }
}

/// World position of the needle-body point at `theta` degrees from the tip.
pub fn needle_point(pose: &Pose, model: &NeedleModel, theta: f64) -> Result<Vec3, GeometryError> {
    if !(0.0..=model.span).contains(&theta) {
        return Err(GeometryError::AngleOutOfSpan { theta, span: model.span });
    }
    Ok(pose.transform_point(model.local_point(theta)))
}

/// Unit normal of the needle plane in world coordinates.
pub fn needle_normal(pose: &Pose) -> Vec3 {
    pose.axis_z()
}

/// Tangent at `theta`, pointing from tip toward tail.
pub fn needle_tangent(pose: &Pose, theta: f64) -> Vec3 {
    let (s, c) = theta.to_radians().sin_cos();
    pose.transform_vector(Vec3::new(-s, c, 0.0))
}

/// Evenly spaced body points from tip to tail, `count` ≥ 2.
pub fn needle_samples(pose: &Pose, model: &NeedleModel, count: usize) -> Vec<Vec3> {
    let count = count.max(2);
    let (sd, cd) = (model.span / (count - 1) as f64).to_radians().sin_cos();
    let ax = pose.orientation.rotate(Vec3::X) * model.radius;
    let ay = pose.orientation.rotate(Vec3::Y) * model.radius;
    let (mut c, mut s) = (1.0, 0.0);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(pose.position + ax * c + ay * s);
        (c, s) = (c * cd - s * sd, s * cd + c * sd);
    }
    out
}

/// Circular arc in 3D. Angles are measured in the plane from `ref_axis`
/// toward `plane_normal × ref_axis`, in degrees on [0, 360).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcPath {
    pub center: Vec3,
    pub radius: f64,
    pub plane_normal: Vec3,
    pub ref_axis: Vec3,
    pub start_angle: f64,
    pub end_angle: f64,
    /// +1 when travel increases the angle, −1 otherwise.
    pub drive_direction: i8,
}

impl ArcPath {
    fn basis(&self) -> (Vec3, Vec3) {
        (self.ref_axis, self.plane_normal.cross(self.ref_axis))
    }

    pub fn point_at(&self, angle: f64) -> Vec3 {
        let (u, v) = self.basis();
        let (s, c) = angle.to_radians().sin_cos();
        self.center + (u * c + v * s) * self.radius
    }

    pub fn start_point(&self) -> Vec3 {
        self.point_at(self.start_angle)
    }

    pub fn end_point(&self) -> Vec3 {
        self.point_at(self.end_angle)
    }

    /// Angular extent swept in the drive direction, degrees in (0, 360).
    pub fn sweep(&self) -> f64 {
        let raw = (self.end_angle - self.start_angle) * f64::from(self.drive_direction);
        raw.rem_euclid(360.0)
    }

    /// Whether `angle` lies on the swept portion of the circle.
    pub fn contains_angle(&self, angle: f64) -> bool {
        let off = ((angle - self.start_angle) * f64::from(self.drive_direction)).rem_euclid(360.0);
        off <= self.sweep() + 1e-9
    }

    /// Progress in [0, 1] of `angle` along the sweep, unclamped outside.
    pub fn progress(&self, angle: f64) -> f64 {
        let off = ((angle - self.start_angle) * f64::from(self.drive_direction)).rem_euclid(360.0);
        off / self.sweep()
    }

    /// Same arc under a rigid transform.
    pub fn transformed(&self, rotation: UnitQuat, pivot: Vec3, translation: Vec3) -> ArcPath {
        ArcPath {
            center: pivot + rotation.rotate(self.center - pivot) + translation,
            plane_normal: rotation.rotate(self.plane_normal),
            ref_axis: rotation.rotate(self.ref_axis),
            ..*self
        }
    }
}

fn wrap_degrees(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// The arc of `radius` through `entry` and `exit` whose centre sits above the
/// chord along `surface_normal`, so the swept portion runs below the surface.
pub fn chord_arc(
    entry: Vec3,
    exit: Vec3,
    radius: f64,
    surface_normal: Vec3,
) -> Result<ArcPath, GeometryError> {
    let chord = exit - entry;
    let d = chord.norm();
    if d < 1e-12 {
        return Err(GeometryError::DegenerateTargets);
    }
    if d > 2.0 * radius {
        return Err(GeometryError::NoArc { chord: d, diameter: 2.0 * radius });
    }
    let c = chord * (1.0 / d);
    // Only the component of the surface normal orthogonal to the chord spans the plane.
    let up = (surface_normal - c * surface_normal.dot(c))
        .normalized()
        .map_err(|_| GeometryError::NormalAlongChord)?;
    let half = d / 2.0;
    let h = (radius * radius - half * half).max(0.0).sqrt();
    let center = entry.lerp(exit, 0.5) + up * h;
    let plane_normal = c.cross(up);
    let start_angle = wrap_degrees((-h).atan2(-half).to_degrees());
    let end_angle = wrap_degrees((-h).atan2(half).to_degrees());
    Ok(ArcPath {
        center,
        radius,
        plane_normal,
        ref_axis: c,
        start_angle,
        end_angle,
        drive_direction: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcDeviation {
    pub in_plane: f64,
    pub out_plane: f64,
    pub arc_angle: f64,
}

/// Decomposes the offset of `p` from the arc circle into a depth (in-plane)
/// and a lateral (out-of-plane) component.
pub fn arc_deviation(p: Vec3, arc: &ArcPath) -> ArcDeviation {
    let rel = p - arc.center;
    let signed = rel.dot(arc.plane_normal);
    let in_plane_vec = rel - arc.plane_normal * signed;
    let r = in_plane_vec.norm();
    let (u, v) = arc.basis();
    let arc_angle = if r < 1e-12 {
        arc.start_angle
    } else {
        wrap_degrees(in_plane_vec.dot(v).atan2(in_plane_vec.dot(u)).to_degrees())
    };
    ArcDeviation { in_plane: (r - arc.radius).abs(), out_plane: signed.abs(), arc_angle }
}

/// Nearest body angle to `grasp_point`, rejecting points off the needle tube.
pub fn angle_on_needle(grasp_point: Vec3, pose: &Pose, model: &NeedleModel) -> Result<f64, GeometryError> {
    let local = pose.inverse_transform_point(grasp_point);
    let planar = local.x.hypot(local.y);
    let raw = if planar < 1e-12 { 0.0 } else { wrap_degrees(local.y.atan2(local.x).to_degrees()) };
    let theta = if raw <= model.span {
        raw
    } else {
        // Past the tail: the nearer endpoint wins.
        let to_tail = (raw - model.span).abs();
        let to_tip = 360.0 - raw;
        if to_tip < to_tail {
            0.0
        } else {
            model.span
        }
    };
    let nearest = pose.transform_point(model.local_point(theta));
    let distance = nearest.distance(grasp_point);
    if distance > NEEDLE_TUBE_TOLERANCE {
        return Err(GeometryError::NotOnNeedle { distance });
    }
    Ok(theta)
}

/// Axis-sign-insensitive angle between a gripper axis and the needle-plane normal.
pub fn orientation_deviation(gripper_axis: Vec3, needle_plane_normal: Vec3) -> Result<f64, GeometryError> {
    let a = gripper_axis.normalized()?;
    let b = needle_plane_normal.normalized()?;
    Ok(a.dot(b).abs().min(1.0).acos().to_degrees())
}
