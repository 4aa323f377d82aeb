use aggsort::camera::{calibrate_planar, synthesize_target_views, Distortion, Intrinsics, PlanarTarget};
use aggsort::geometry::{RigidTransform, RotationMatrix};
use aggsort::handeye::{collect_motion_pairs, solve_hand_eye};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn board_poses(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let a = i as f64;
            let r = RotationMatrix::rot_x(0.35 * (0.7 * a).sin())
                .compose(&RotationMatrix::rot_y(0.35 * (1.3 * a + 0.5).cos()))
                .compose(&RotationMatrix::rot_z(0.2 * (0.4 * a).sin()));
            RigidTransform::new(
                r,
                Vector3::new(-0.1 + 0.02 * (0.9 * a).sin(), -0.06 + 0.02 * a.cos(), 0.55 + 0.015 * a),
            )
        })
        .collect()
}

#[test]
fn calibration_rms_grows_with_pixel_noise() {
    let k = Intrinsics::new(800.0, 790.0, 640.0, 400.0).unwrap();
    let d = Distortion {
        k1: -0.05,
        k2: 0.01,
        p1: 0.001,
        p2: -0.0005,
    };
    let target = PlanarTarget::default();
    let poses = board_poses(12);
    for seed in [1u64, 2] {
        let mut last = 0.0;
        for sigma in [0.05, 0.2, 0.8, 1.6] {
            let views = synthesize_target_views(&target, &poses, &k, &d, Some((sigma, seed))).unwrap();
            let rms = calibrate_planar(&views).unwrap().rms_reprojection;
            assert!(rms > last, "seed {seed}: rms {rms} at sigma {sigma} not above {last}");
            // Residual rms of a well-posed fit stays near the injected noise.
            assert!(rms < 1.5 * sigma, "rms {rms} at sigma {sigma}");
            last = rms;
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let rv = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let t = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    RigidTransform::new(RotationMatrix::from_rotation_vector(&rv), t)
}

/// Recovery error of `X` when camera observations carry noise scaled by
/// `sigma`; the same unit draws are reused for every `sigma`.
fn handeye_error(seed: u64, sigma: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_pose(&mut rng);
    let target = random_pose(&mut rng);
    let robot: Vec<_> = (0..11).map(|_| random_pose(&mut rng)).collect();
    let cam: Vec<_> = robot
        .iter()
        .map(|t_eb| {
            let c = t_eb.compose(&x).inverse().compose(&target);
            let rv: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let dt: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let noise = RigidTransform::new(RotationMatrix::from_rotation_vector(&(rv * sigma)), dt * sigma);
            noise.compose(&c)
        })
        .collect();
    let pairs = collect_motion_pairs(&robot, &cam).unwrap();
    let sol = solve_hand_eye(&pairs).unwrap();
    let (dp, dr) = sol.t_ce.distance_to(&x);
    (dr, dp)
}

#[test]
fn handeye_error_grows_with_observation_noise() {
    for seed in [3u64, 4, 5] {
        let (r0, t0) = handeye_error(seed, 0.0);
        assert!(r0 < 1e-9 && t0 < 1e-9);
        let mut last = (r0, t0);
        for sigma in [1e-4, 1e-3, 1e-2] {
            let e = handeye_error(seed, sigma);
            assert!(
                e.0 > last.0 && e.1 > last.1,
                "seed {seed} sigma {sigma}: {e:?} vs {last:?}"
            );
            last = e;
        }
    }
}
