//! SE(2) pose algebra, homogeneous transforms and oriented-box geometry.
//!
//! Angles are counterclockwise-positive and always wrapped into `(-π, π]`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating the rotation block of a [`Transform2`].
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// Wraps `a` into `(-π, π]`, rejecting non-finite input.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Infallible wrap for values already known to be finite.
///
/// Values inside `(-π, π]` are returned untouched, which makes the map idempotent bit-for-bit.
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A planar pose `(x, y, θ)`: agent poses and object poses alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    theta: f64,
}

impl TryFrom<RawPose> for Pose2 {
    type Error = Error;

    fn try_from(raw: RawPose) -> Result<Self> {
        Pose2::try_new(raw.x, raw.y, raw.theta)
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    /// Builds a pose, wrapping `theta`. Inputs are assumed finite.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("pose translation"));
        }
        Ok(Self::new(x, y, wrap_angle(theta)?))
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// `self ∘ other`: applies `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)
    }

    /// `self⁻¹ ∘ other`: the pose of `other` expressed in the frame of `self`.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    /// Maps a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_matrix(&self) -> Transform2 {
        let (s, c) = self.theta.sin_cos();
        Transform2(Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0))
    }

    pub fn from_matrix(t: &Transform2) -> Pose2 {
        let m = &t.0;
        Pose2::new(m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)]))
    }
}

/// A validated 3×3 homogeneous rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2(Matrix3<f64>);

impl Transform2 {
    pub fn identity() -> Self {
        Transform2(Matrix3::identity())
    }

    pub fn translation(x: f64, y: f64) -> Self {
        Pose2::new(x, y, 0.0).to_matrix()
    }

    /// Validates `m` as a rigid transform: orthonormal rotation block with
    /// determinant +1 (to [`RIGID_TOLERANCE`]) and a bottom row of exactly `[0, 0, 1]`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        if m[(2, 0)] != 0.0 || m[(2, 1)] != 0.0 || m[(2, 2)] != 1.0 {
            return Err(Error::InvalidTransform("bottom row is not [0 0 1]".into()));
        }
        let r: Matrix2<f64> = m.fixed_view::<2, 2>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix2::identity()).abs().max();
        if ortho > RIGID_TOLERANCE {
            return Err(Error::InvalidTransform(format!(
                "rotation block not orthonormal (deviation {ortho:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > RIGID_TOLERANCE {
            return Err(Error::InvalidTransform(format!("determinant {det} != 1")));
        }
        Ok(Transform2(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Closed-form rigid inverse `[Rᵀ, -Rᵀt; 0 1]`.
    pub fn inverse(&self) -> Transform2 {
        let m = &self.0;
        let r = m.fixed_view::<2, 2>(0, 0).transpose();
        let t = -(r * m.fixed_view::<2, 1>(0, 2));
        Transform2(Matrix3::new(
            r[(0, 0)],
            r[(0, 1)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            t[1],
            0.0,
            0.0,
            1.0,
        ))
    }

    pub fn mul(&self, other: &Transform2) -> Transform2 {
        let mut m = self.0 * other.0;
        // keep the homogeneous row exact
        m[(2, 0)] = 0.0;
        m[(2, 1)] = 0.0;
        m[(2, 2)] = 1.0;
        Transform2(m)
    }
}

impl std::ops::Mul for Transform2 {
    type Output = Transform2;

    fn mul(self, rhs: Transform2) -> Transform2 {
        Transform2::mul(&self, &rhs)
    }
}

/// Oriented BEV rectangle with per-axis detection standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedBox {
    pub center: Pose2,
    pub half_length: f64,
    pub half_width: f64,
    /// `(σ_x, σ_y, σ_θ)` in meters, meters, radians.
    pub sigma: [f64; 3],
    pub confidence: f64,
}

impl DetectedBox {
    pub fn new(center: Pose2, half_length: f64, half_width: f64, sigma: [f64; 3], confidence: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::InvalidBox("non-finite center".into()));
        }
        if !(half_length > 0.0 && half_width > 0.0) || !half_length.is_finite() || !half_width.is_finite() {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got {half_length} x {half_width}"
            )));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidBox(format!("sigma must be positive, got {sigma:?}")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            center,
            half_length,
            half_width,
            sigma,
            confidence,
        })
    }

    /// Same box with its center re-expressed through `frame ∘ center`.
    pub fn transformed(&self, frame: &Pose2) -> DetectedBox {
        DetectedBox {
            center: frame.compose(&self.center),
            ..*self
        }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    pub fn half_diagonal(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    /// Information matrix diagonal `(σ_x⁻², σ_y⁻², σ_θ⁻²)`.
    pub fn information(&self) -> [f64; 3] {
        self.sigma.map(|s| 1.0 / (s * s))
    }

    /// Footprint corners in counterclockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (l, w) = (self.half_length, self.half_width);
        [[l, -w], [l, w], [-l, w], [-l, -w]].map(|p| self.center.transform_point(p))
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive for counterclockwise order).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Sutherland–Hodgman clipping of `subject` against a convex counterclockwise `clip` polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection-over-union of two oriented box footprints.
pub fn rotated_iou(a: &DetectedBox, b: &DetectedBox) -> f64 {
    let reach = a.half_diagonal() + b.half_diagonal();
    if a.center.distance(&b.center) >= reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners())).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_box(x: f64, y: f64, theta: f64) -> DetectedBox {
        DetectedBox::new(Pose2::new(x, y, theta), 0.5, 0.5, [0.1; 3], 1.0).unwrap()
    }

    fn pose_close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && wrap(a.theta - b.theta).abs() < tol
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_eq!(wrap_angle(TAU).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap_angle(1.5 * PI).unwrap(), -FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn compose_examples() {
        let p = Pose2::new(3.0, -1.0, 0.7);
        assert!(pose_close(&Pose2::identity().compose(&p), &p, 1e-15));
        assert!(pose_close(&p.compose(&p.inverse()), &Pose2::identity(), 1e-15));
        // [[0,-1,1],[1,0,0],[0,0,1]] · [1,0,1]ᵀ = [1,1,1]ᵀ
        let c = Pose2::new(1.0, 0.0, FRAC_PI_2).compose(&Pose2::new(1.0, 0.0, 0.0));
        assert!(pose_close(&c, &Pose2::new(1.0, 1.0, FRAC_PI_2), 1e-15));
    }

    #[test]
    fn relative_examples() {
        let p = Pose2::new(-2.0, 5.0, -2.5);
        assert!(pose_close(&p.relative(&p), &Pose2::identity(), 1e-15));
        assert!(pose_close(&Pose2::identity().relative(&p), &p, 1e-15));
        let r = Pose2::new(1.0, 1.0, 0.0).relative(&Pose2::new(2.0, 1.0, 0.0));
        assert_eq!(r, Pose2::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn matrix_examples() {
        assert_eq!(Pose2::identity().to_matrix(), Transform2::identity());
        assert_eq!(Pose2::from_matrix(&Transform2::identity()), Pose2::identity());
        let flip = Pose2::new(0.0, 0.0, PI).to_matrix();
        let m = flip.matrix();
        assert_abs_diff_eq!(m[(0, 0)], -1.0);
        assert_abs_diff_eq!(m[(1, 1)], -1.0);
        assert_abs_diff_eq!(m[(0, 1)], 0.0, epsilon = 1e-15);
        assert_eq!(Pose2::from_matrix(&flip).theta, PI);
        let p = Pose2::new(3.0, 4.0, PI / 6.0);
        assert!(pose_close(&Pose2::from_matrix(&p.to_matrix()), &p, 1e-15));
    }

    #[test]
    fn from_matrix_rejects_non_rigid() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 2.0;
        assert!(Transform2::from_matrix(m).is_err());
        let mut m = Matrix3::identity();
        m[(2, 0)] = 1e-3;
        assert!(Transform2::from_matrix(m).is_err());
        // reflection: orthonormal but det = -1
        let mut m = Matrix3::identity();
        m[(1, 1)] = -1.0;
        assert!(Transform2::from_matrix(m).is_err());
        assert!(Transform2::from_matrix(*Pose2::new(1.0, 2.0, 0.3).to_matrix().matrix()).is_ok());
    }

    #[test]
    fn iou_examples() {
        let a = unit_box(0.0, 0.0, 0.3);
        assert_abs_diff_eq!(rotated_iou(&a, &a), 1.0, epsilon = 1e-12);
        assert_eq!(rotated_iou(&a, &unit_box(100.0, 0.0, 0.0)), 0.0);
        // overlap 0.5 x 1 = 0.5, union 1.5
        let iou = rotated_iou(&unit_box(0.0, 0.0, 0.0), &unit_box(0.5, 0.0, 0.0));
        assert_abs_diff_eq!(iou, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_rotated_square_in_itself() {
        // a 45°-rotated unit square intersected with the axis-aligned one: octagon of area 2(√2-1)
        let a = unit_box(0.0, 0.0, 0.0);
        let b = unit_box(0.0, 0.0, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert_abs_diff_eq!(rotated_iou(&a, &b), inter / (2.0 - inter), epsilon = 1e-12);
    }

    #[test]
    fn box_validation() {
        let c = Pose2::identity();
        assert!(DetectedBox::new(c, 0.0, 1.0, [0.1; 3], 0.5).is_err());
        assert!(DetectedBox::new(c, 1.0, 1.0, [0.1, 0.0, 0.1], 0.5).is_err());
        assert!(DetectedBox::new(c, 1.0, 1.0, [0.1; 3], 1.5).is_err());
        let b = DetectedBox::new(c, 1.0, 1.0, [0.5, 0.25, 0.1], 0.5).unwrap();
        assert_eq!(b.information(), [4.0, 16.0, 1.0 / (0.1 * 0.1)]);
    }

    #[test]
    fn pose_json_rewraps() {
        let p: Pose2 = serde_json::from_str(r#"{"x":1.0,"y":2.0,"theta":7.0}"#).unwrap();
        assert!(p.theta > -PI && p.theta <= PI);
        assert!(serde_json::from_str::<Pose2>(r#"{"x":1.0,"y":2.0,"theta":1e400}"#).is_err());
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-100.0..100.0f64, -100.0..100.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    fn any_box() -> impl Strategy<Value = DetectedBox> {
        (pose(), 0.2..5.0f64, 0.2..3.0f64).prop_map(|(c, l, w)| DetectedBox::new(c, l, w, [0.1; 3], 1.0).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn group_laws(a in pose(), b in pose(), c in pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(pose_close(&left, &right, 1e-12));
            prop_assert!(pose_close(&a.compose(&Pose2::identity()), &a, 1e-12));
            prop_assert!(pose_close(&Pose2::identity().compose(&a), &a, 1e-12));
            prop_assert!(pose_close(&a.inverse().compose(&a), &Pose2::identity(), 1e-12));
            prop_assert!(pose_close(&a.compose(&a.relative(&b)), &b, 1e-12));
        }

        #[test]
        fn compose_matches_matrix_product(a in pose(), b in pose()) {
            let via_matrix = Pose2::from_matrix(&(a.to_matrix() * b.to_matrix()));
            prop_assert!(pose_close(&a.compose(&b), &via_matrix, 1e-12));
        }

        #[test]
        fn matrix_round_trip(p in pose()) {
            let back = Pose2::from_matrix(&p.to_matrix());
            prop_assert!(pose_close(&back, &p, 1e-12));
            prop_assert!(Transform2::from_matrix(*p.to_matrix().matrix()).is_ok());
            let inv = p.to_matrix().inverse();
            prop_assert!(pose_close(&Pose2::from_matrix(&inv), &p.inverse(), 1e-12));
        }

        #[test]
        fn wrap_idempotent_and_in_range(a in -1e4..1e4f64) {
            let w = wrap_angle(a).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            prop_assert!(((a - w) / TAU - ((a - w) / TAU).round()).abs() < 1e-9);
        }

        #[test]
        fn iou_symmetric_and_rigid_invariant(a in any_box(), dx in -3.0..3.0f64, dy in -3.0..3.0f64,
                                             b in any_box(), g in pose()) {
            let b = DetectedBox { center: Pose2::new(a.center.x + dx, a.center.y + dy, b.center.theta), ..b };
            let ab = rotated_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - rotated_iou(&b, &a)).abs() < 1e-9);
            let moved = rotated_iou(&a.transformed(&g), &b.transformed(&g));
            prop_assert!((ab - moved).abs() < 1e-9);
        }
    }
}
