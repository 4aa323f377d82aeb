//! Plain-text `key = values` files for calibration results and stereo tables.

use nalgebra::{Matrix3, Matrix4, Vector3};

use super::{CalibrationResult, CameraError, CameraModel, Distortion, Intrinsics, StereoRig};
use crate::geometry::{format_transform, strip_comment, validate_rigid, RigidTransform, RotationMatrix};

struct Entry {
    line: usize,
    key: String,
    values: Vec<f64>,
}

fn entries(text: &str) -> Result<Vec<Entry>, CameraError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once('=').ok_or_else(|| CameraError::Parse {
            line: i + 1,
            message: "expected `key = values`".into(),
        })?;
        let values = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| CameraError::Parse {
                    line: i + 1,
                    message: format!("bad number `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::Parse {
                line: i + 1,
                message: "non-finite value".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.trim().to_string(),
            values,
        });
    }
    Ok(out)
}

fn expect_len(e: &Entry, n: usize) -> Result<(), CameraError> {
    if e.values.len() != n {
        return Err(CameraError::Parse {
            line: e.line,
            message: format!("`{}` needs {n} values, got {}", e.key, e.values.len()),
        });
    }
    Ok(())
}

fn scalar(e: &Entry) -> Result<f64, CameraError> {
    expect_len(e, 1)?;
    Ok(e.values[0])
}

/// Serializes a calibration result; one `view =` line per extrinsic pose.
pub fn format_calibration(result: &CalibrationResult) -> String {
    let k = &result.intrinsics;
    let d = &result.distortion;
    let mut s = String::new();
    for (key, v) in [
        ("fx", k.fx),
        ("fy", k.fy),
        ("cx", k.cx),
        ("cy", k.cy),
        ("skew", k.skew),
        ("k1", d.k1),
        ("k2", d.k2),
        ("p1", d.p1),
        ("p2", d.p2),
        ("rms", result.rms_reprojection),
    ] {
        s.push_str(&format!("{key} = {v}\n"));
    }
    for pose in &result.extrinsics {
        s.push_str("view = ");
        s.push_str(&format_transform(pose));
        s.push('\n');
    }
    s
}

pub fn parse_calibration(text: &str) -> Result<CalibrationResult, CameraError> {
    let mut k = Intrinsics {
        fx: f64::NAN,
        fy: f64::NAN,
        cx: f64::NAN,
        cy: f64::NAN,
        skew: 0.0,
    };
    let mut d = Distortion::none();
    let mut rms = 0.0;
    let mut extrinsics = Vec::new();
    for e in entries(text)? {
        match e.key.as_str() {
            "fx" => k.fx = scalar(&e)?,
            "fy" => k.fy = scalar(&e)?,
            "cx" => k.cx = scalar(&e)?,
            "cy" => k.cy = scalar(&e)?,
            "skew" => k.skew = scalar(&e)?,
            "k1" => d.k1 = scalar(&e)?,
            "k2" => d.k2 = scalar(&e)?,
            "p1" => d.p1 = scalar(&e)?,
            "p2" => d.p2 = scalar(&e)?,
            "rms" => rms = scalar(&e)?,
            "view" => {
                expect_len(&e, 16)?;
                let t = RigidTransform::from_row_major(&e.values, crate::geometry::INGESTED_RIGIDITY_TOL).map_err(
                    |err| CameraError::Parse {
                        line: e.line,
                        message: err.to_string(),
                    },
                )?;
                extrinsics.push(t);
            }
            other => {
                return Err(CameraError::Parse {
                    line: e.line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    k.validate()?;
    if rms < 0.0 {
        return Err(CameraError::Parse {
            line: 0,
            message: "rms must be non-negative".into(),
        });
    }
    Ok(CalibrationResult {
        intrinsics: k,
        distortion: d,
        extrinsics,
        rms_reprojection: rms,
    })
}

/// Stereo calibration tables: intrinsic matrices, distortion,
/// right-relative-to-left rotation and translation in millimeters.
/// Values are kept verbatim; `to_stereo_rig` applies the
/// physical checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoCalibrationTables {
    pub left_intrinsics: Matrix3<f64>,
    pub left_distortion: Distortion,
    pub right_intrinsics: Matrix3<f64>,
    pub right_distortion: Distortion,
    pub rotation: Matrix3<f64>,
    pub translation_mm: Vector3<f64>,
    pub rms_reprojection: f64,
}

impl StereoCalibrationTables {
    pub fn parse(text: &str) -> Result<Self, CameraError> {
        let mut left_k = None;
        let mut right_k = None;
        let mut left_d = None;
        let mut right_d = None;
        let mut rotation = None;
        let mut translation = None;
        let mut rms = None;
        for e in entries(text)? {
            match e.key.as_str() {
                "left.intrinsics" | "right.intrinsics" | "rotation" => {
                    expect_len(&e, 9)?;
                    let m = Matrix3::from_row_slice(&e.values);
                    match e.key.as_str() {
                        "left.intrinsics" => left_k = Some(m),
                        "right.intrinsics" => right_k = Some(m),
                        _ => rotation = Some(m),
                    }
                }
                "left.distortion" | "right.distortion" => {
                    expect_len(&e, 4)?;
                    let d = Distortion {
                        k1: e.values[0],
                        k2: e.values[1],
                        p1: e.values[2],
                        p2: e.values[3],
                    };
                    if e.key.starts_with("left") {
                        left_d = Some(d);
                    } else {
                        right_d = Some(d);
                    }
                }
                "translation_mm" => {
                    expect_len(&e, 3)?;
                    translation = Some(Vector3::new(e.values[0], e.values[1], e.values[2]));
                }
                "rms_reprojection" => rms = Some(scalar(&e)?),
                other => {
                    return Err(CameraError::Parse {
                        line: e.line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        let missing = |name: &str| CameraError::Parse {
            line: 0,
            message: format!("missing `{name}`"),
        };
        Ok(Self {
            left_intrinsics: left_k.ok_or_else(|| missing("left.intrinsics"))?,
            left_distortion: left_d.ok_or_else(|| missing("left.distortion"))?,
            right_intrinsics: right_k.ok_or_else(|| missing("right.intrinsics"))?,
            right_distortion: right_d.ok_or_else(|| missing("right.distortion"))?,
            rotation: rotation.ok_or_else(|| missing("rotation"))?,
            translation_mm: translation.ok_or_else(|| missing("translation_mm"))?,
            rms_reprojection: rms.ok_or_else(|| missing("rms_reprojection"))?,
        })
    }

    /// Camera intrinsics from an upper-triangular `K` with unit `K[2][2]`.
    pub fn intrinsics(k: &Matrix3<f64>) -> Result<Intrinsics, CameraError> {
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(CameraError::InvalidIntrinsics(
                "K must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        let intr = Intrinsics {
            fx: k[(0, 0)],
            fy: k[(1, 1)],
            cx: k[(0, 2)],
            cy: k[(1, 2)],
            skew: k[(0, 1)],
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Builds a rig in meters after checking the rotation against `tol`.
    pub fn to_stereo_rig(&self, tol: f64) -> Result<StereoRig, CameraError> {
        let left = CameraModel::new(Self::intrinsics(&self.left_intrinsics)?, self.left_distortion);
        let right = CameraModel::new(Self::intrinsics(&self.right_intrinsics)?, self.right_distortion);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        let report = validate_rigid(&m, tol);
        if !report.passed {
            return Err(CameraError::NotRigid(report));
        }
        let translation = self.translation_mm / 1000.0;
        if !(translation.norm() > 0.0) {
            return Err(CameraError::InvalidTarget("stereo baseline must be positive".into()));
        }
        let rotation = RotationMatrix::from_matrix(self.rotation, tol).map_err(|_| CameraError::NotRigid(report))?;
        Ok(StereoRig {
            left,
            right,
            rotation,
            translation,
        })
    }
}
