use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aggsort::geometry::{format_transforms, RigidTransform, RotationMatrix};
use aggsort::stereo::{format_pgm_p5, GrayImage};
use nalgebra::Vector3;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

fn aggsort(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggsort")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fk_output_feeds_ik() {
    let fk = aggsort(&["fk", "30", "-40", "60", "-20", "10"]);
    assert!(fk.status.success(), "{}", stderr(&fk));
    let text = stdout(&fk);
    let nums: Vec<String> = text
        .lines()
        .take(4)
        .flat_map(|l| l.split_whitespace().map(String::from))
        .collect();
    assert_eq!(nums.len(), 16);
    let mut args = vec!["ik"];
    args.extend(nums.iter().map(String::as_str));
    let ik = aggsort(&args);
    assert!(ik.status.success(), "{}", stdout(&ik));
    let want = [30.0, -40.0, 60.0, -20.0, 10.0];
    assert!(
        stdout(&ik).lines().any(|l| {
            let q: Vec<f64> = l.split_whitespace().take(5).map(|t| t.parse().unwrap()).collect();
            q.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-3)
        }),
        "{}",
        stdout(&ik)
    );
}

#[test]
fn ik_reports_unreachable() {
    let o = aggsort(&[
        "ik", "1", "0", "0", "5", "0", "1", "0", "0", "0", "0", "1", "0", "0", "0", "0", "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("OutOfReach"));
}

#[test]
fn report_replay_reproduces_table() {
    let replay = format!("{FIXTURES}/grasp_replay.txt");
    let o = aggsort(&["report", "--replay", &replay]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("granite (H)            10               10             100        9          90"));
    assert!(text
        .lines()
        .last()
        .unwrap()
        .starts_with("overall                40               39            97.5"));

    let dir = scratch("report_csv");
    let csv = dir.join("r.csv");
    fs::write(
        &csv,
        stdout(&aggsort(&["report", "--replay", &replay, "--format", "csv"])),
    )
    .unwrap();
    let back = aggsort(&["report", "--csv", s(&csv)]);
    assert!(back.status.success(), "{}", stderr(&back));
    assert_eq!(stdout(&back), text);
}

#[test]
fn simulate_is_seeded_and_resolves_replay_paths() {
    let dir = scratch("simulate");
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "seed = 11\ngrasp = step 1.5 0.8 1.0\n").unwrap();
    let a = aggsort(&["simulate", "--config", s(&cfg), "--format", "csv"]);
    let b = aggsort(&["simulate", "--config", s(&cfg), "--format", "csv"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).starts_with("category,attempted,grasp_successes"));

    let multi = aggsort(&["simulate", "--config", s(&cfg), "--trials", "3"]);
    assert_eq!(stdout(&multi).matches("# seed").count(), 3);

    fs::copy(format!("{FIXTURES}/grasp_replay.txt"), dir.join("replay.txt")).unwrap();
    let cfg = dir.join("replay.cfg");
    fs::write(&cfg, "replay = replay.txt\n").unwrap();
    let o = aggsort(&["simulate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sandstone (S)          10                9              90"));
}

#[test]
fn simulate_rejects_unknown_keys() {
    let dir = scratch("simulate_bad");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "seeds = 1\n").unwrap();
    let o = aggsort(&["simulate", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seeds"));
}

fn stations(n: usize) -> (Vec<RigidTransform>, Vec<RigidTransform>, RigidTransform) {
    let x = RigidTransform::new(
        RotationMatrix::rot_z(0.5 * std::f64::consts::PI),
        Vector3::new(0.03, 0.0, -0.03),
    );
    let target = RigidTransform::new(RotationMatrix::rot_x(0.1), Vector3::new(0.15, 0.02, -0.14));
    let robot: Vec<_> = (0..n)
        .map(|i| {
            let a = i as f64;
            let r = RotationMatrix::rot_z(0.4 * a).compose(&RotationMatrix::rot_x(0.3 * (1.1 * a).sin() + 0.2));
            RigidTransform::new(r, Vector3::new(0.1 + 0.01 * a, 0.02 * a.cos(), 0.12))
        })
        .collect();
    let cam = robot.iter().map(|t| t.compose(&x).inverse().compose(&target)).collect();
    (robot, cam, x)
}

#[test]
fn handeye_from_station_poses() {
    let dir = scratch("handeye");
    let (robot, cam, x) = stations(7);
    fs::write(dir.join("robot.txt"), format_transforms(&robot)).unwrap();
    fs::write(dir.join("cam.txt"), format_transforms(&cam)).unwrap();
    let o = aggsort(&[
        "handeye",
        "--robot",
        s(&dir.join("robot.txt")),
        "--camera",
        s(&dir.join("cam.txt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"));
    let first = stdout(&o).lines().next().unwrap().to_string();
    let got = aggsort::geometry::parse_transform(&first, 1e-6).unwrap();
    let (dp, dr) = got.distance_to(&x);
    assert!(dp < 1e-6 && dr < 1e-6, "{dp} {dr}");

    // Three stations give two pairs, enough to solve but below the advice.
    let (robot, cam, _) = stations(3);
    fs::write(dir.join("robot.txt"), format_transforms(&robot)).unwrap();
    fs::write(dir.join("cam.txt"), format_transforms(&cam)).unwrap();
    let o = aggsort(&[
        "handeye",
        "--robot",
        s(&dir.join("robot.txt")),
        "--camera",
        s(&dir.join("cam.txt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: 2 motion pairs"));
}

fn hash_texture(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let mut v = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        v ^= v >> 29;
        v = v.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        (v >> 56) as u8
    })
    .unwrap()
}

#[test]
fn stereo_writes_disparity_and_depth() {
    let dir = scratch("stereo");
    let shift = 6;
    let base = hash_texture(80 + shift, 30);
    let left = GrayImage::from_fn(80, 30, |x, y| base.get(x, y)).unwrap();
    let right = GrayImage::from_fn(80, 30, |x, y| base.get(x + shift, y)).unwrap();
    fs::write(dir.join("l.pgm"), format_pgm_p5(&left)).unwrap();
    fs::write(dir.join("r.pgm"), format_pgm_p5(&right)).unwrap();
    let (disp, depth) = (dir.join("d.pgm"), dir.join("z.txt"));
    let o = aggsort(&[
        "stereo",
        s(&dir.join("l.pgm")),
        s(&dir.join("r.pgm")),
        "--d-max",
        "16",
        "--out",
        s(&disp),
        "--fx",
        "600",
        "--baseline",
        "0.04",
        "--depth-out",
        s(&depth),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let map = aggsort::stereo::parse_pgm(&fs::read(&disp).unwrap()).unwrap();
    assert_eq!((map.width(), map.height()), (80, 30));
    assert_eq!(map.get(40, 15), shift as u8);
    let z_at = |path: &Path| -> f64 {
        let text = fs::read_to_string(path).unwrap();
        text.lines()
            .nth(15)
            .unwrap()
            .split_whitespace()
            .nth(40)
            .unwrap()
            .parse()
            .unwrap()
    };
    // 4 m lies beyond the default range.
    assert!(z_at(&depth).is_nan());
    let o = aggsort(&[
        "stereo",
        s(&dir.join("l.pgm")),
        s(&dir.join("r.pgm")),
        "--d-max",
        "16",
        "--fx",
        "600",
        "--baseline",
        "0.04",
        "--depth-out",
        s(&depth),
        "--depth-range",
        "0.1",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((z_at(&depth) - 600.0 * 0.04 / shift as f64).abs() < 1e-9);
}

#[test]
fn size_prints_dimensions_and_grade() {
    let o = aggsort(&["size", "100", "100", "140", "130", "--depth", "0.3", "--fx", "600"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "a = 1.5000 cm\nb = 2.0000 cm\nc = 2.5000 cm\ngrade = 2\n");
}

#[test]
fn dataset_verify_exit_status() {
    let dir = scratch("dataset");
    let (img, lab) = (dir.join("images"), dir.join("labels"));
    fs::create_dir_all(&img).unwrap();
    fs::create_dir_all(&lab).unwrap();
    for n in ["S-1-001", "S-1-002"] {
        fs::write(img.join(format!("{n}.jpg")), b"").unwrap();
        fs::write(lab.join(format!("{n}.txt")), "3 0.5 0.5 0.2 0.2\n").unwrap();
    }
    let ok = aggsort(&["dataset", "verify", s(&img), s(&lab)]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).trim_end().ends_with("PASS"));

    fs::remove_file(lab.join("S-1-002.txt")).unwrap();
    let bad = aggsort(&["dataset", "verify", s(&img), s(&lab)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn calibrate_synthetic_and_from_file() {
    let o = aggsort(&["calibrate", "--synthetic", "12", "--noise", "0.3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("fx = "));
    assert!(stderr(&o).contains("PASS"));

    // A strict gate turns the same fit into a failure.
    let o = aggsort(&["calibrate", "--synthetic", "12", "--noise", "0.3", "--gate", "0.01"]);
    assert_eq!(o.status.code(), Some(3));

    let dir = scratch("calibrate");
    let file = dir.join("corr.txt");
    fs::write(&file, "# view X Y u v\n0 0 0 1 2 3\n").unwrap();
    let o = aggsort(&["calibrate", s(&file)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"));
}
