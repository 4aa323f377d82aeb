//! Rigid-body pose algebra.
//!
//! Rotations are stored as 3×3 matrices and poses as rotation + translation,
//! homogeneous 4×4 on the wire. Units are meters and radians throughout.
//!
//! A `RigidTransform` named `T_ab` (or `a_from_b`) maps coordinates expressed
//! in frame `b` into frame `a`: `p_a = T_ab · p_b`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

/// Rigidity tolerance for transforms produced by this crate.
pub const COMPUTED_RIGIDITY_TOL: f64 = 1e-9;
/// Rigidity tolerance for transforms read from files with 4-5 printed digits.
pub const INGESTED_RIGIDITY_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(RigidityReport),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected 16 numbers per transform line, found {0}")]
    FieldCount(usize),
    #[error("line {line}: cannot parse `{token}` as a number")]
    Parse { line: usize, token: String },
}

/// A proper rotation (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant at `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
        let report = validate_rigid(&h, tol);
        if report.passed {
            Ok(Self(m))
        } else {
            Err(GeometryError::NotRigid(report))
        }
    }

    /// Wraps `m` without validation. Callers guarantee orthonormality.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Nearest rotation in the Frobenius sense (SVD projection).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation about `axis` (need not be unit length) by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Self::from_rotation_vector(&(axis * (angle / n)))
    }

    /// Exponential map of a rotation vector (axis · angle).
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        let k = skew(v);
        if theta < 1e-12 {
            return Self(Matrix3::identity() + k);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Logarithm map: the rotation vector whose exponential is `self`.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        let r = &self.0;
        let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        let sin = 0.5 * w.norm();
        let angle = sin.atan2(cos);
        if angle < 1e-9 {
            return w * 0.5;
        }
        if std::f64::consts::PI - angle > 1e-6 {
            return w * (angle / (2.0 * sin));
        }
        // Near π the antisymmetric part vanishes; recover the axis from R + I.
        let b = (r + Matrix3::identity()) * 0.5;
        let (col, _) = (0..3)
            .map(|i| (i, b[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis = b.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * angle
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Geodesic distance (rotation angle of `selfᵀ·other`) in radians.
    ///
    /// Computed from the chordal distance, which stays accurate near zero
    /// where the trace formula loses half the significant digits.
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        let chord = (self.0 - other.0).norm();
        let half = (chord / (2.0 * std::f64::consts::SQRT_2)).min(1.0);
        2.0 * half.asin()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Homogeneous rigid transform `[R t; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: RotationMatrix,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(RotationMatrix::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: RotationMatrix) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Validates `m` at `tol` and splits it into rotation and translation.
    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("transform"));
        }
        let report = validate_rigid(m, tol);
        if !report.passed {
            return Err(GeometryError::NotRigid(report));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Self::new(RotationMatrix(r), t))
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    /// `[Rᵀ, −Rᵀt]`.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        let t = -rt.apply(&self.translation);
        RigidTransform::new(rt, t)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation.apply(&p.coords) + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(v)
    }

    /// Returns `(translation distance, rotation angle)` between two poses.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            self.rotation.angle_to(&other.rotation),
        )
    }

    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        (self.to_matrix() - other.to_matrix()).amax() <= tol
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[4 * r + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64], tol: f64) -> Result<Self, GeometryError> {
        if values.len() != 16 {
            return Err(GeometryError::FieldCount(values.len()));
        }
        Self::from_matrix(&Matrix4::from_row_slice(values), tol)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

pub fn compose(first: &RigidTransform, second: &RigidTransform) -> RigidTransform {
    first.compose(second)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

pub fn transform_point(t: &RigidTransform, p: &Point3) -> Point3 {
    t.transform_point(p)
}

/// Per-check residuals of a rigidity test on a 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityReport {
    /// Frobenius norm of `R·Rᵀ − I`.
    pub orthonormality_residual: f64,
    /// `|det(R) − 1|`.
    pub determinant_residual: f64,
    /// Largest absolute deviation of the bottom row from `(0, 0, 0, 1)`.
    pub bottom_row_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl RigidityReport {
    pub fn bottom_row_exact(&self) -> bool {
        self.bottom_row_residual == 0.0
    }
}

impl std::fmt::Display for RigidityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "orthonormality {:.3e}, det {:.3e}, bottom row {:.3e} (tol {:.1e}): {}",
            self.orthonormality_residual,
            self.determinant_residual,
            self.bottom_row_residual,
            self.tolerance,
            if self.passed { "pass" } else { "fail" }
        )
    }
}

/// Checks that `m` is a homogeneous rigid transform. Never fails; the report
/// carries each residual so callers can see which check tripped.
///
/// The bottom row must be exactly `(0, 0, 0, 1)`.
pub fn validate_rigid(m: &Matrix4<f64>, tol: f64) -> RigidityReport {
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let orthonormality_residual = (r * r.transpose() - Matrix3::identity()).norm();
    let determinant_residual = (r.determinant() - 1.0).abs();
    let expected = [0.0, 0.0, 0.0, 1.0];
    let bottom_row_residual = (0..4).map(|c| (m[(3, c)] - expected[c]).abs()).fold(0.0, f64::max);
    let finite = m.iter().all(|v| v.is_finite());
    let passed = finite && orthonormality_residual <= tol && determinant_residual <= tol && bottom_row_residual == 0.0;
    RigidityReport {
        orthonormality_residual,
        determinant_residual,
        bottom_row_residual,
        tolerance: tol,
        passed,
    }
}

/// Formats a transform as 16 whitespace-separated row-major numbers.
///
/// Uses the shortest representation that parses back to the same `f64`.
pub fn format_transform(t: &RigidTransform) -> String {
    t.to_row_major()
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn parse_numbers(line: &str, line_no: usize) -> Result<Vec<f64>, GeometryError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| GeometryError::Parse {
                line: line_no,
                token: tok.to_string(),
            })
        })
        .collect()
}

pub fn parse_transform(line: &str, tol: f64) -> Result<RigidTransform, GeometryError> {
    let values = parse_numbers(line, 1)?;
    RigidTransform::from_row_major(&values, tol)
}

/// Parses a transform file: one transform per line, `#` comments and blank
/// lines ignored.
pub fn parse_transforms(text: &str, tol: f64) -> Result<Vec<RigidTransform>, GeometryError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let values = parse_numbers(line, i + 1)?;
        out.push(RigidTransform::from_row_major(&values, tol)?);
    }
    Ok(out)
}

pub fn format_transforms(ts: &[RigidTransform]) -> String {
    let mut s = String::new();
    for t in ts {
        s.push_str(&format_transform(t));
        s.push('\n');
    }
    s
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

/// Raw 4×4 matrix parse, without the rigidity gate.
pub fn parse_matrix4(line: &str) -> Result<Matrix4<f64>, GeometryError> {
    let values = parse_numbers(line, 1)?;
    if values.len() != 16 {
        return Err(GeometryError::FieldCount(values.len()));
    }
    Ok(Matrix4::from_row_slice(&values))
}
