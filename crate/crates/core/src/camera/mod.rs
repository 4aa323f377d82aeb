//! Pinhole camera with radial/tangential distortion, planar calibration and
//! reprojection-error gating.

mod calibration;
mod io;

pub use calibration::{
    calibrate_planar, calibrate_planar_with, estimate_homography, reprojection_error, synthesize_target_views,
    CalibrationOptions, CalibrationResult, Correspondence, PlanarTarget, View, RMS_GATE_PX,
};
pub use io::{format_calibration, parse_calibration, StereoCalibrationTables};

use nalgebra::{Point2, Vector3};
use thiserror::Error;

use crate::geometry::{Point3, RigidityReport, RotationMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("undistortion did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("need at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },
    #[error("degenerate view configuration: {0}")]
    Degenerate(String),
    #[error("view count mismatch: result has {expected} poses, got {got} views")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("board behind camera in view {0}")]
    BoardBehindCamera(usize),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stereo rotation is not rigid: {0}")]
    NotRigid(RigidityReport),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.skew]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "fx = {}, fy = {} must be positive and finite",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Normalized (distorted) coordinates to pixels.
    pub fn to_pixel(&self, xd: f64, yd: f64) -> Point2<f64> {
        Point2::new(self.fx * xd + self.skew * yd + self.cx, self.fy * yd + self.cy)
    }

    /// Pixels to normalized (still distorted) coordinates.
    pub fn to_normalized(&self, pixel: &Point2<f64>) -> (f64, f64) {
        let yd = (pixel.y - self.cy) / self.fy;
        let xd = (pixel.x - self.cx - self.skew * yd) / self.fx;
        (xd, yd)
    }
}

/// Brown–Conrady coefficients `k1, k2, p1, p2` (no `k3`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        [self.k1, self.k2, self.p1, self.p2].iter().all(|v| v.is_finite())
    }

    /// Applies the distortion to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }
}

/// Intrinsics and distortion of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, distortion: Distortion) -> Self {
        Self { intrinsics, distortion }
    }

    pub fn project(&self, p_cam: &Point3) -> Result<Point2<f64>, CameraError> {
        project(&self.intrinsics, &self.distortion, p_cam)
    }

    pub fn undistort(&self, pixel: &Point2<f64>) -> Result<Point2<f64>, CameraError> {
        undistort(&self.intrinsics, &self.distortion, pixel)
    }
}

/// Maps a camera-frame point to pixels through distortion and intrinsics.
pub fn project(intr: &Intrinsics, dist: &Distortion, p_cam: &Point3) -> Result<Point2<f64>, CameraError> {
    if !(p_cam.z > 0.0) {
        return Err(CameraError::NonPositiveDepth(p_cam.z));
    }
    let (x, y) = (p_cam.x / p_cam.z, p_cam.y / p_cam.z);
    let (xd, yd) = dist.distort(x, y);
    Ok(intr.to_pixel(xd, yd))
}

pub const UNDISTORT_MAX_ITERATIONS: usize = 20;
pub const UNDISTORT_TOLERANCE: f64 = 1e-10;

/// Inverts the distortion by fixed-point iteration and returns the
/// undistorted normalized coordinate `(x, y)` with `z = 1`.
pub fn undistort(intr: &Intrinsics, dist: &Distortion, pixel: &Point2<f64>) -> Result<Point2<f64>, CameraError> {
    let (xd, yd) = intr.to_normalized(pixel);
    let (mut x, mut y) = (xd, yd);
    for _ in 0..UNDISTORT_MAX_ITERATIONS {
        let r2 = x * x + y * y;
        let radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2;
        let dx = 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x);
        let dy = dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y;
        let nx = (xd - dx) / radial;
        let ny = (yd - dy) / radial;
        let step = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        if step <= UNDISTORT_TOLERANCE {
            return Ok(Point2::new(x, y));
        }
    }
    // One last check: the iterate may already satisfy the model.
    let (cx, cy) = dist.distort(x, y);
    if (cx - xd).abs().max((cy - yd).abs()) <= UNDISTORT_TOLERANCE {
        Ok(Point2::new(x, y))
    } else {
        Err(CameraError::NoConvergence(UNDISTORT_MAX_ITERATIONS))
    }
}

/// Left/right cameras of a stereo pair. The right camera pose is given in
/// the left camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    pub rotation: RotationMatrix,
    /// Meters.
    pub translation: Vector3<f64>,
}

impl StereoRig {
    /// Ideal rectified pair: identical cameras, right camera `baseline` meters
    /// along the left camera's +x axis.
    pub fn rectified(camera: CameraModel, baseline: f64) -> Self {
        Self {
            left: camera,
            right: camera,
            rotation: RotationMatrix::identity(),
            translation: Vector3::new(baseline, 0.0, 0.0),
        }
    }

    pub fn baseline(&self) -> f64 {
        self.translation.norm()
    }
}
