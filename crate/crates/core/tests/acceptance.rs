//! End-to-end acceptance criteria, one PASS/FAIL line each.

use std::time::{Duration, Instant};

use aggsort::camera::{calibrate_planar, synthesize_target_views, Distortion, Intrinsics, PlanarTarget, RMS_GATE_PX};
use aggsort::detection::DetectorConfig;
use aggsort::geometry::{RigidTransform, RotationMatrix};
use aggsort::handeye::{collect_motion_pairs, solve_hand_eye, HandEyeError, MotionPair};
use aggsort::kinematics::{
    closed_form_position, forward_kinematics, inverse_kinematics, wrap_angle, wrist_coupling_residual, DhChain,
    JointVector,
};
use aggsort::simulator::{
    generate_scene, parse_replay, render_report, run_experiment, run_experiment_observed, run_experiments, run_replay,
    ExperimentConfig, GraspModel, Phase, ReportFormat,
};
use aggsort::sizing::{grade, mer_dimensions, pixel_to_metric, Grade};
use aggsort::stereo::{census_transform, compute_disparity, GrayImage, MatchParams};
use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fk_desk_check() -> Outcome {
    let chain = DhChain::jetarm();
    let q = JointVector::from_degrees([90.0, 0.0, 0.0, 0.0, 0.0]);
    let t = forward_kinematics(&chain, &q).map_err(|e| e.to_string())?;
    let norm = t.translation().norm();
    check((norm - 0.2588).abs() <= 1e-4, || format!("|p| = {norm}"))?;
    Ok(format!("|p| = {norm:.6} m"))
}

fn fk_dual_path() -> Outcome {
    let chain = DhChain::jetarm();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = JointVector(std::array::from_fn(|_| {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        }));
        let a = forward_kinematics(&chain, &q).map_err(|e| e.to_string())?;
        let b = closed_form_position(&chain, &q).map_err(|e| e.to_string())?;
        worst = worst.max((a.translation() - b).norm());
    }
    check(worst <= 1e-10, || format!("max gap {worst:e} m"))?;
    Ok(format!("max gap {worst:.1e} m over 1000 configurations"))
}

fn ik_round_trip() -> Outcome {
    let chain = DhChain::jetarm();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pi = std::f64::consts::PI;
    let mut total_solutions = 0;
    for i in 0..1000 {
        let (q1, q2, q3, q5) = (
            rng.random_range(-pi..pi),
            rng.random_range(-pi..pi),
            rng.random_range(-pi..pi),
            rng.random_range(-pi..pi),
        );
        let q = JointVector([q1, q2, q3, wrap_angle(-(q2 + q3)), q5]);
        let target = forward_kinematics(&chain, &q).map_err(|e| e.to_string())?;
        let set = inverse_kinematics(&chain, &target).map_err(|e| e.to_string())?;
        let reproduces = set.solutions.iter().any(|s| {
            let (dp, dr) = forward_kinematics(&chain, &s.joints).unwrap().distance_to(&target);
            dp <= 1e-9 && dr <= 1e-9
        });
        check(reproduces, || {
            format!("target {i} not reproduced ({} solutions)", set.len())
        })?;
        for s in &set.solutions {
            let r = wrist_coupling_residual(&s.joints);
            check(r <= 1e-12, || format!("target {i}: coupling residual {r:e}"))?;
        }
        total_solutions += set.len();
    }
    Ok(format!(
        "1000 targets reproduced, {total_solutions} solutions all coupled"
    ))
}

fn ik_reference_case() -> Outcome {
    let chain = DhChain::jetarm();
    let q = JointVector::from_degrees([90.0, 0.0, 0.0, 0.0, 0.0]);
    let pose = forward_kinematics(&chain, &q).map_err(|e| e.to_string())?;
    let set = inverse_kinematics(&chain, &pose).map_err(|e| e.to_string())?;
    check(set.contains(&q, 1e-6), || format!("solutions {:?}", set.solutions))?;
    let literal = Matrix4::new(
        0.0, 0.0, 1.0, 0.2588, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    );
    let literal = RigidTransform::from_matrix(&literal, 1e-9).map_err(|e| e.to_string())?;
    let literal_set = inverse_kinematics(&chain, &literal).map_err(|e| e.to_string())?;
    Ok(format!(
        "[90,0,0,0,0] among {} solutions; printed matrix taken literally: {} solutions ({:?})",
        set.len(),
        literal_set.len(),
        literal_set.reason
    ))
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let rv = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let t = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    RigidTransform::new(RotationMatrix::from_rotation_vector(&rv), t)
}

fn handeye_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_pose(&mut rng);
    let target = random_pose(&mut rng);
    let robot: Vec<_> = (0..11).map(|_| random_pose(&mut rng)).collect();
    let cam: Vec<_> = robot.iter().map(|t| t.compose(&x).inverse().compose(&target)).collect();
    let pairs = collect_motion_pairs(&robot, &cam).map_err(|e| e.to_string())?;
    check(pairs.len() == 10, || format!("{} pairs", pairs.len()))?;
    let sol = solve_hand_eye(&pairs).map_err(|e| e.to_string())?;
    let (dp, dr) = sol.t_ce.distance_to(&x);
    check(dr <= 1e-8 && dp <= 1e-8, || {
        format!("rotation {dr:e} rad, translation {dp:e} m")
    })?;

    // Every motion about the same axis leaves the rotation underdetermined.
    let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
    let parallel: Vec<MotionPair> = (1..=10)
        .map(|i| {
            let a = RigidTransform::new(
                RotationMatrix::from_axis_angle(&axis, 0.1 * i as f64),
                Vector3::new(0.01 * i as f64, 0.02, -0.01),
            );
            MotionPair {
                a,
                b: x.inverse().compose(&a).compose(&x),
            }
        })
        .collect();
    let degenerate = solve_hand_eye(&parallel);
    check(matches!(degenerate, Err(HandEyeError::Degenerate { .. })), || {
        format!("parallel axes gave {degenerate:?}")
    })?;
    Ok(format!(
        "rotation {dr:.1e} rad, translation {dp:.1e} m; parallel axes rejected"
    ))
}

fn board_poses(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let a = i as f64;
            let r = RotationMatrix::rot_x(0.35 * (0.7 * a).sin())
                .compose(&RotationMatrix::rot_y(0.35 * (1.3 * a + 0.5).cos()))
                .compose(&RotationMatrix::rot_z(0.2 * (0.4 * a).sin()));
            RigidTransform::new(
                r,
                Vector3::new(-0.1 + 0.02 * (0.9 * a).sin(), -0.06 + 0.02 * a.cos(), 0.55 + 0.01 * a),
            )
        })
        .collect()
}

fn calibration() -> Outcome {
    let k = Intrinsics::new(800.0, 790.0, 640.0, 400.0).map_err(|e| e.to_string())?;
    let d = Distortion {
        k1: -0.05,
        k2: 0.01,
        p1: 0.001,
        p2: -0.0005,
    };
    let target = PlanarTarget::default();
    check((target.rows, target.cols, target.square_size) == (6, 9, 0.027), || {
        format!("{target:?}")
    })?;
    let poses = board_poses(20);
    let clean = synthesize_target_views(&target, &poses, &k, &d, None).map_err(|e| e.to_string())?;
    let fit = calibrate_planar(&clean).map_err(|e| e.to_string())?;
    let r = fit.intrinsics;
    let rel = [
        (r.fx - k.fx) / k.fx,
        (r.fy - k.fy) / k.fy,
        (r.cx - k.cx) / k.cx,
        (r.cy - k.cy) / k.cy,
    ]
    .iter()
    .fold(0.0f64, |m, v| m.max(v.abs()));
    check(rel <= 1e-6, || format!("intrinsics relative error {rel:e}"))?;
    check(fit.rms_reprojection < 1e-6, || {
        format!("noiseless rms {:e}", fit.rms_reprojection)
    })?;
    let noisy = synthesize_target_views(&target, &poses, &k, &d, Some((0.5, 6))).map_err(|e| e.to_string())?;
    let nfit = calibrate_planar(&noisy).map_err(|e| e.to_string())?;
    check(nfit.passes_gate(RMS_GATE_PX), || {
        format!("noisy rms {}", nfit.rms_reprojection)
    })?;
    Ok(format!(
        "relative error {rel:.1e}, rms {:.1e} px; 0.5 px noise rms {:.3} px",
        fit.rms_reprojection, nfit.rms_reprojection
    ))
}

fn stereo_shift() -> Outcome {
    let (w, h, d_max) = (320, 240, 32);
    let mut report = Vec::new();
    for (k, s) in [3usize, 7, 15].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + k as u64);
        let base: Vec<u8> = (0..(w + s) * h).map(|_| rng.random()).collect();
        let left = GrayImage::from_fn(w, h, |x, y| base[y * (w + s) + x]).map_err(|e| e.to_string())?;
        let right = GrayImage::from_fn(w, h, |x, y| base[y * (w + s) + x + s]).map_err(|e| e.to_string())?;
        let disp = compute_disparity(&left, &right, &MatchParams::with_d_max(d_max)).map_err(|e| e.to_string())?;
        let (mut exact, mut valid) = (0usize, 0usize);
        for y in 2..h - 2 {
            for x in d_max + 2..w - 2 {
                if let Some(d) = disp.get(x, y) {
                    valid += 1;
                    exact += usize::from(d as usize == s);
                }
            }
        }
        let frac = exact as f64 / valid.max(1) as f64;
        check(valid > 0 && frac >= 0.95, || format!("shift {s}: {exact}/{valid}"))?;
        report.push(format!("s={s}: {:.1}%", 100.0 * frac));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let img =
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random_range(0..128u8)).collect()).map_err(|e| e.to_string())?;
    let remapped = img.map(|v| 2 * v + 1);
    let a = census_transform(&img, (5, 5)).map_err(|e| e.to_string())?;
    let b = census_transform(&remapped, (5, 5)).map_err(|e| e.to_string())?;
    let mismatches = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    check(mismatches == 0, || format!("{mismatches} census mismatches"))?;
    Ok(format!("{}; 0 census mismatches", report.join(", ")))
}

fn sizing() -> Outcome {
    let m = mer_dimensions((0.0, 0.0), (3.0, 4.0));
    check((m.a, m.b, m.c) == (4.0, 3.0, 5.0), || format!("{m:?}"))?;
    let cases = [
        (0.999, Grade::Rejected),
        (1.0, Grade::One),
        (1.999, Grade::One),
        (2.0, Grade::Two),
        (2.999, Grade::Two),
        (3.0, Grade::Three),
        (10.0, Grade::Three),
    ];
    for (cm, want) in cases {
        check(grade(cm) == want, || format!("grade({cm}) = {:?}", grade(cm)))?;
    }
    let len = pixel_to_metric(100.0, 1.0, 1000.0).map_err(|e| e.to_string())?;
    check(len == 0.1, || format!("pixel_to_metric = {len}"))?;
    Ok("(4,3,5), half-open bands, 0.1 m".into())
}

const REPLAY: &str = include_str!("../fixtures/grasp_replay.txt");

const EXPECTED_TABLE: &str = "\
category        attempted  grasp successes  success rate/%  correct  accuracy/%
limestone (SH)         10               10             100       10         100
granite (H)            10               10             100        9          90
sandstone (S)          10                9              90       10         100
marble (D)             10               10             100       10         100
overall                40               39            97.5       39        97.5
";

fn replay_report() -> Result<String, String> {
    let records = parse_replay(REPLAY).map_err(|e| e.to_string())?;
    Ok(render_report(&run_replay(&records), ReportFormat::Table))
}

fn replay_table() -> Outcome {
    let table = replay_report()?;
    check(table == EXPECTED_TABLE, || format!("rendered:\n{table}"))?;
    Ok("rates (100,100,90,100), accuracies (100,90,100,100), mean 97.5".into())
}

const E2E_SEED: u64 = 2024;

fn e2e_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: E2E_SEED,
        grasp: GraspModel::Always,
        detector: DetectorConfig::noiseless(),
        ..ExperimentConfig::default()
    }
}

fn end_to_end() -> Outcome {
    let cfg = e2e_config();
    let scene = generate_scene(cfg.seed, &cfg.scene).map_err(|e| e.to_string())?;
    check(scene.aggregates.len() == 40, || {
        format!("{} aggregates", scene.aggregates.len())
    })?;
    let mut conserved = true;
    let mut localize_err = 0.0f64;
    let out = run_experiment_observed(&cfg, |s| {
        conserved &= s.conservation_holds();
        if s.phase == Phase::Localize {
            if let Some(t) = s.target {
                let truth = scene.aggregates.iter().find(|a| a.id == t.detection.source).unwrap();
                localize_err = localize_err.max((t.position.unwrap() - truth.centroid()).norm());
            }
        }
    })
    .map_err(|e| e.to_string())?;
    check(conserved, || "conservation violated".into())?;
    check(localize_err <= 1e-6, || format!("localize error {localize_err:e} m"))?;
    check(out.report.rows.len() == 4, || format!("{} rows", out.report.rows.len()))?;
    for r in &out.report.rows {
        check((r.attempted, r.grasped, r.correct) == (10, 10, 10), || format!("{r:?}"))?;
    }
    Ok(format!(
        "40/40 grasped and classified, localize error {localize_err:.1e} m"
    ))
}

fn determinism() -> Outcome {
    let table = replay_report()?;
    let copies: Vec<String> = (0..8).into_par_iter().map(|_| replay_report().unwrap()).collect();
    check(copies.iter().all(|c| *c == table), || "replay report differs".into())?;

    let cfg = e2e_config();
    let render = |o: &aggsort::simulator::ExperimentOutcome| {
        format!(
            "{}{}",
            render_report(&o.report, ReportFormat::Table),
            render_report(&o.report, ReportFormat::Csv)
        )
    };
    let first = render(&run_experiment(&cfg).map_err(|e| e.to_string())?);
    let second = render(&run_experiment(&cfg).map_err(|e| e.to_string())?);
    check(first == second, || "sequential re-run differs".into())?;
    let batch = run_experiments(&vec![cfg; 8]);
    for o in batch {
        let o = o.map_err(|e| e.to_string())?;
        check(render(&o) == first, || "parallel run differs".into())?;
    }
    Ok("byte-identical across re-runs and 8 parallel copies".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

#[test]
fn acceptance() {
    let criteria = [
        Criterion {
            id: 1,
            name: "FK desk check",
            limit: Some(Duration::from_millis(1)),
            run: fk_desk_check,
        },
        Criterion {
            id: 2,
            name: "FK dual path",
            limit: Some(Duration::from_secs(1)),
            run: fk_dual_path,
        },
        Criterion {
            id: 3,
            name: "IK round trip",
            limit: Some(Duration::from_secs(5)),
            run: ik_round_trip,
        },
        Criterion {
            id: 4,
            name: "IK reference pose",
            limit: None,
            run: ik_reference_case,
        },
        Criterion {
            id: 5,
            name: "hand-eye recovery",
            limit: Some(Duration::from_secs(1)),
            run: handeye_recovery,
        },
        Criterion {
            id: 6,
            name: "calibration",
            limit: Some(Duration::from_secs(30)),
            run: calibration,
        },
        Criterion {
            id: 7,
            name: "stereo shift oracle",
            limit: Some(Duration::from_secs(5)),
            run: stereo_shift,
        },
        Criterion {
            id: 8,
            name: "sizing",
            limit: None,
            run: sizing,
        },
        Criterion {
            id: 9,
            name: "grasp table replay",
            limit: Some(Duration::from_secs(1)),
            run: replay_table,
        },
        Criterion {
            id: 10,
            name: "end-to-end zero-noise run",
            limit: Some(Duration::from_secs(10)),
            run: end_to_end,
        },
        Criterion {
            id: 11,
            name: "determinism",
            limit: None,
            run: determinism,
        },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS [{:>2}] {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                println!("FAIL [{:>2}] {} ({elapsed:.2?}): {why}", c.id, c.name);
                failed.push(c.id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
