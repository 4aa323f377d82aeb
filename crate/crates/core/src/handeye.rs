//! Camera (C), effector (E) and base (B) frame bookkeeping and eye-in-hand
//! calibration from relative motions, `A·X = X·B`.
//!
//! `T_EB` is the effector pose in the base frame and `T_CE` the camera pose
//! in the effector frame, so `p_B = T_EB · T_CE · p_C`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{
    format_transform, parse_transforms, skew, GeometryError, Point3, RigidTransform, RotationMatrix,
    INGESTED_RIGIDITY_TOL,
};

/// Rotation angle below which a motion carries no rotational information.
pub const UNINFORMATIVE_ANGLE: f64 = 1e-9;
/// Pair count below which the CLI warns.
pub const RECOMMENDED_MIN_PAIRS: usize = 5;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandEyeError {
    #[error("expected a point in the {expected} frame, got {got}")]
    FrameMismatch { expected: FrameTag, got: FrameTag },
    #[error("need at least {needed} {what}, got {got}")]
    Insufficient {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("pose lists differ in length: {robot} robot vs {camera} camera")]
    LengthMismatch { robot: usize, camera: usize },
    #[error("all motions are pure translations; rotation is underdetermined")]
    Underdetermined,
    #[error("degenerate motion set: {system} system has rank {rank} of 3 (rotation axes parallel)")]
    Degenerate { system: &'static str, rank: usize },
    #[error("motion-pair file has an odd number of transforms ({0})")]
    OddTransformCount(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameTag {
    Camera,
    Effector,
    Base,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameTag::Camera => "camera",
            FrameTag::Effector => "effector",
            FrameTag::Base => "base",
        })
    }
}

/// A point together with the frame its coordinates are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub frame: FrameTag,
    pub point: Point3,
}

impl FramePoint {
    pub fn new(frame: FrameTag, point: Point3) -> Self {
        Self { frame, point }
    }

    pub fn camera(point: Point3) -> Self {
        Self::new(FrameTag::Camera, point)
    }

    pub fn expect(&self, frame: FrameTag) -> Result<&Point3, HandEyeError> {
        if self.frame == frame {
            Ok(&self.point)
        } else {
            Err(HandEyeError::FrameMismatch {
                expected: frame,
                got: self.frame,
            })
        }
    }
}

/// Result of mapping a camera point to the base, with the effector-frame
/// intermediate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainedPoint {
    pub effector: FramePoint,
    pub base: FramePoint,
}

pub fn camera_to_base(
    t_ce: &RigidTransform,
    t_eb: &RigidTransform,
    p_c: &FramePoint,
) -> Result<ChainedPoint, HandEyeError> {
    let p = p_c.expect(FrameTag::Camera)?;
    let p_e = t_ce.transform_point(p);
    let p_b = t_eb.transform_point(&p_e);
    Ok(ChainedPoint {
        effector: FramePoint::new(FrameTag::Effector, p_e),
        base: FramePoint::new(FrameTag::Base, p_b),
    })
}

/// Relative effector motion `A` and relative target motion `B` between two
/// consecutive stations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

impl MotionPair {
    /// Whether the effector rotated between the two stations.
    pub fn is_informative(&self) -> bool {
        self.a.rotation().angle_to(&RotationMatrix::identity()) > UNINFORMATIVE_ANGLE
    }

    /// `(rotation rad, translation m)` norms of `A·X − X·B`.
    pub fn residual(&self, x: &RigidTransform) -> (f64, f64) {
        let ax = self.a.compose(x);
        let xb = x.compose(&self.b);
        let (dpos, drot) = ax.distance_to(&xb);
        (drot, dpos)
    }
}

/// Differences consecutive stations: `A_i = T_EB(i+1)⁻¹·T_EB(i)` and
/// `B_i = C(i+1)·C(i)⁻¹`, where `C` is the target pose in the camera frame.
pub fn collect_motion_pairs(
    robot_poses: &[RigidTransform],
    camera_target_poses: &[RigidTransform],
) -> Result<Vec<MotionPair>, HandEyeError> {
    if robot_poses.len() != camera_target_poses.len() {
        return Err(HandEyeError::LengthMismatch {
            robot: robot_poses.len(),
            camera: camera_target_poses.len(),
        });
    }
    if robot_poses.len() < 3 {
        return Err(HandEyeError::Insufficient {
            what: "poses",
            needed: 3,
            got: robot_poses.len(),
        });
    }
    Ok(robot_poses
        .windows(2)
        .zip(camera_target_poses.windows(2))
        .map(|(r, c)| MotionPair {
            a: r[1].inverse().compose(&r[0]),
            b: c[1].compose(&c[0].inverse()),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandEyeSolution {
    pub t_ce: RigidTransform,
    pub rotation_residual_max: f64,
    pub rotation_residual_rms: f64,
    pub translation_residual_max: f64,
    pub translation_residual_rms: f64,
    pub pairs: usize,
}

/// Modified Rodrigues vector `2·sin(θ/2)·axis`.
fn modified_rodrigues(r: &RotationMatrix) -> Vector3<f64> {
    let v = r.rotation_vector();
    let angle = v.norm();
    if angle == 0.0 {
        return Vector3::zeros();
    }
    v * (2.0 * (angle / 2.0).sin() / angle)
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn least_squares(m: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    m.svd(true, true).solve(&rhs, 0.0).expect("u and v_t were requested")
}

/// Tsai–Lenz solve: rotation from stacked axis constraints in modified
/// Rodrigues form, then translation from `(R_A − I)·t_X = R_X·t_B − t_A`.
pub fn solve_hand_eye(pairs: &[MotionPair]) -> Result<HandEyeSolution, HandEyeError> {
    if pairs.len() < 2 {
        return Err(HandEyeError::Insufficient {
            what: "motion pairs",
            needed: 2,
            got: pairs.len(),
        });
    }
    if !pairs.iter().any(MotionPair::is_informative) {
        return Err(HandEyeError::Underdetermined);
    }

    let n = pairs.len();
    let mut m = DMatrix::zeros(3 * n, 3);
    let mut rhs = DVector::zeros(3 * n);
    for (i, pair) in pairs.iter().enumerate() {
        let pa = modified_rodrigues(pair.a.rotation());
        let pb = modified_rodrigues(pair.b.rotation());
        m.view_mut((3 * i, 0), (3, 3)).copy_from(&skew(&(pa + pb)));
        rhs.rows_mut(3 * i, 3).copy_from(&(pb - pa));
    }
    let r = rank(&m);
    if r < 3 {
        return Err(HandEyeError::Degenerate {
            system: "rotation",
            rank: r,
        });
    }
    let p_prime = least_squares(m, rhs);
    let p_prime = Vector3::new(p_prime[0], p_prime[1], p_prime[2]);
    let p_x = p_prime * (2.0 / (1.0 + p_prime.norm_squared()).sqrt());
    let px2 = p_x.norm_squared();
    let r_x = Matrix3::identity() * (1.0 - px2 / 2.0)
        + (p_x * p_x.transpose() + skew(&p_x) * (4.0 - px2).max(0.0).sqrt()) * 0.5;
    let r_x = RotationMatrix::nearest(&r_x);

    let mut m = DMatrix::zeros(3 * n, 3);
    let mut rhs = DVector::zeros(3 * n);
    for (i, pair) in pairs.iter().enumerate() {
        let ra = pair.a.rotation().matrix();
        m.view_mut((3 * i, 0), (3, 3)).copy_from(&(ra - Matrix3::identity()));
        rhs.rows_mut(3 * i, 3)
            .copy_from(&(r_x.apply(pair.b.translation()) - pair.a.translation()));
    }
    let r = rank(&m);
    if r < 3 {
        return Err(HandEyeError::Degenerate {
            system: "translation",
            rank: r,
        });
    }
    let t = least_squares(m, rhs);
    let t_ce = RigidTransform::new(r_x, Vector3::new(t[0], t[1], t[2]));

    let residuals: Vec<(f64, f64)> = pairs.iter().map(|p| p.residual(&t_ce)).collect();
    let stats = |f: fn(&(f64, f64)) -> f64| {
        let max = residuals.iter().map(f).fold(0.0, f64::max);
        let rms = (residuals.iter().map(|r| f(r).powi(2)).sum::<f64>() / n as f64).sqrt();
        (max, rms)
    };
    let (rot_max, rot_rms) = stats(|r| r.0);
    let (tr_max, tr_rms) = stats(|r| r.1);
    Ok(HandEyeSolution {
        t_ce,
        rotation_residual_max: rot_max,
        rotation_residual_rms: rot_rms,
        translation_residual_max: tr_max,
        translation_residual_rms: tr_rms,
        pairs: n,
    })
}

/// One transform per line, alternating `A` and `B`.
pub fn parse_motion_pairs(text: &str) -> Result<Vec<MotionPair>, HandEyeError> {
    let ts = parse_transforms(text, INGESTED_RIGIDITY_TOL)?;
    if ts.len() % 2 != 0 {
        return Err(HandEyeError::OddTransformCount(ts.len()));
    }
    Ok(ts.chunks(2).map(|c| MotionPair { a: c[0], b: c[1] }).collect())
}

pub fn format_motion_pairs(pairs: &[MotionPair]) -> String {
    pairs
        .iter()
        .flat_map(|p| [format_transform(&p.a), format_transform(&p.b)])
        .map(|l| l + "\n")
        .collect()
}

/// Transform line followed by `key = value` residual lines.
pub fn format_solution(s: &HandEyeSolution) -> String {
    format!(
        "{}\npairs = {}\nrotation_residual_max = {}\nrotation_residual_rms = {}\ntranslation_residual_max = {}\ntranslation_residual_rms = {}\n",
        format_transform(&s.t_ce),
        s.pairs,
        s.rotation_residual_max,
        s.rotation_residual_rms,
        s.translation_residual_max,
        s.translation_residual_rms
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{parse_transform, validate_rigid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, rot_scale: f64) -> RigidTransform {
        let rv = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * rot_scale;
        let t = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.1..0.5),
        );
        RigidTransform::new(RotationMatrix::from_rotation_vector(&rv), t)
    }

    /// Stations observing a fixed target, consistent with `x`.
    fn stations(x: &RigidTransform, n: usize, seed: u64) -> (Vec<RigidTransform>, Vec<RigidTransform>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target_in_base = random_pose(&mut rng, 0.5);
        let robot: Vec<_> = (0..n).map(|_| random_pose(&mut rng, 1.0)).collect();
        let cam = robot
            .iter()
            .map(|t_eb| t_eb.compose(x).inverse().compose(&target_in_base))
            .collect();
        (robot, cam)
    }

    #[test]
    fn identity_chain_and_translations() {
        let p = FramePoint::camera(Point3::new(0.1, -0.2, 0.3));
        let id = RigidTransform::identity();
        assert_eq!(camera_to_base(&id, &id, &p).unwrap().base.point, p.point);
        let t1 = RigidTransform::from_translation(0.01, 0.02, 0.03);
        let t2 = RigidTransform::from_translation(1.0, 2.0, 3.0);
        let out = camera_to_base(&t1, &t2, &FramePoint::camera(Point3::origin())).unwrap();
        assert_eq!(out.effector.point, Point3::new(0.01, 0.02, 0.03));
        assert_eq!(out.base.point, Point3::new(1.01, 2.02, 3.03));
        assert_eq!(out.base.frame, FrameTag::Base);
    }

    #[test]
    fn frame_mismatch_rejected() {
        let id = RigidTransform::identity();
        let p = FramePoint::new(FrameTag::Base, Point3::origin());
        assert_eq!(
            camera_to_base(&id, &id, &p),
            Err(HandEyeError::FrameMismatch {
                expected: FrameTag::Camera,
                got: FrameTag::Base
            })
        );
    }

    #[test]
    fn pairs_satisfy_construction() {
        let x = random_pose(&mut ChaCha8Rng::seed_from_u64(1), 1.0);
        let (robot, cam) = stations(&x, 3, 2);
        let pairs = collect_motion_pairs(&robot, &cam).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            let (r, t) = p.residual(&x);
            assert!(r < 1e-12 && t < 1e-12, "{r} {t}");
        }
        assert!(collect_motion_pairs(&robot[..2], &cam[..2]).is_err());
        assert!(collect_motion_pairs(&robot, &cam[..2]).is_err());
    }

    #[test]
    fn repeated_station_is_uninformative() {
        let x = random_pose(&mut ChaCha8Rng::seed_from_u64(1), 1.0);
        let (mut robot, mut cam) = stations(&x, 3, 3);
        robot[1] = robot[0];
        cam[1] = cam[0];
        let pairs = collect_motion_pairs(&robot, &cam).unwrap();
        assert!(!pairs[0].is_informative());
        assert!(pairs[1].is_informative());
    }

    #[test]
    fn noiseless_recovery() {
        let x = random_pose(&mut ChaCha8Rng::seed_from_u64(5), 1.0);
        let (robot, cam) = stations(&x, 11, 6);
        let pairs = collect_motion_pairs(&robot, &cam).unwrap();
        let sol = solve_hand_eye(&pairs).unwrap();
        let (dpos, drot) = sol.t_ce.distance_to(&x);
        assert!(dpos < 1e-8 && drot < 1e-8, "{dpos} {drot}");
        assert!(sol.rotation_residual_max < 1e-9 && sol.translation_residual_max < 1e-9);
        assert!(validate_rigid(&sol.t_ce.to_matrix(), 1e-9).passed);
    }

    #[test]
    fn parallel_axes_degenerate() {
        let x = random_pose(&mut ChaCha8Rng::seed_from_u64(7), 1.0);
        let pairs: Vec<MotionPair> = [0.4, -0.7]
            .iter()
            .map(|&angle| {
                let a = RigidTransform::new(RotationMatrix::rot_z(angle), Vector3::new(0.1, angle, 0.0));
                MotionPair {
                    a,
                    b: x.inverse().compose(&a).compose(&x),
                }
            })
            .collect();
        assert!(matches!(
            solve_hand_eye(&pairs),
            Err(HandEyeError::Degenerate { rank: 2, .. })
        ));
    }

    #[test]
    fn identity_motions_underdetermined() {
        let id = RigidTransform::identity();
        let pairs = vec![MotionPair { a: id, b: id }; 3];
        assert_eq!(solve_hand_eye(&pairs), Err(HandEyeError::Underdetermined));
        assert!(matches!(
            solve_hand_eye(&pairs[..1]),
            Err(HandEyeError::Insufficient { .. })
        ));
    }

    #[test]
    fn reference_matrix_fixture() {
        let text = include_str!("../fixtures/handeye_matrix.txt");
        let line = text.lines().find(|l| !l.starts_with('#')).unwrap();
        let t = parse_transform(line, INGESTED_RIGIDITY_TOL).unwrap();
        let back = parse_transform(&format_transform(&t), INGESTED_RIGIDITY_TOL).unwrap();
        assert_eq!(t, back);
        assert_eq!(t.to_matrix()[(2, 2)], -9.7357e-1);
    }

    #[test]
    fn pair_and_solution_files() {
        let x = random_pose(&mut ChaCha8Rng::seed_from_u64(8), 1.0);
        let (robot, cam) = stations(&x, 5, 9);
        let pairs = collect_motion_pairs(&robot, &cam).unwrap();
        let text = format_motion_pairs(&pairs);
        assert_eq!(parse_motion_pairs(&text).unwrap(), pairs);
        let first_line = text.lines().next().unwrap().to_string() + "\n";
        assert_eq!(parse_motion_pairs(&first_line), Err(HandEyeError::OddTransformCount(1)));
        let sol = solve_hand_eye(&pairs).unwrap();
        assert!(format_solution(&sol).contains("pairs = 4\n"));
    }
}
