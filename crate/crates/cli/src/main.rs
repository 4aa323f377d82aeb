use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aggsort::camera::{
    calibrate_planar, format_calibration, synthesize_target_views, Correspondence, Distortion, Intrinsics,
    PlanarTarget, View, RMS_GATE_PX,
};
use aggsort::dataset::{parse_label_file, verify_dataset, ClassMap};
use aggsort::detection::{ConfusionSpec, DetectorConfig};
use aggsort::geometry::{parse_transforms, RigidTransform, RotationMatrix, INGESTED_RIGIDITY_TOL};
use aggsort::handeye::{
    collect_motion_pairs, format_solution, parse_motion_pairs, solve_hand_eye, RECOMMENDED_MIN_PAIRS,
};
use aggsort::kinematics::{forward_kinematics, inverse_kinematics_with, DhChain, IkOptions, JointVector};
use aggsort::simulator::{
    parse_config, parse_replay, parse_report_csv, render_report, run_experiments, run_replay, ExperimentConfig,
    ReportFormat,
};
use aggsort::sizing::{size_box, GradeBands};
use aggsort::stereo::{
    compute_disparity, depth_map, format_depth_grid, format_disparity_pgm, parse_pgm, DepthRange, MatchParams,
};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Point3, Vector3};

#[derive(Parser)]
#[command(name = "aggsort", version, about = "Vision-guided aggregate sorting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(clap::Args)]
struct ChainArgs {
    /// Built-in DH profile.
    #[arg(long, default_value = "jetarm")]
    profile: String,
    /// DH table file (`theta_offset_deg d_m a_m alpha_deg` per joint); overrides --profile.
    #[arg(long)]
    dh: Option<PathBuf>,
}

impl ChainArgs {
    fn chain(&self) -> Result<DhChain> {
        match &self.dh {
            Some(p) => Ok(DhChain::from_config_str(&read(p)?)?),
            None => Ok(DhChain::profile(&self.profile)?),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Forward kinematics from five joint angles in degrees.
    Fk {
        #[arg(num_args = 5, allow_negative_numbers = true)]
        joints_deg: Vec<f64>,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Inverse kinematics for a pose given as 16 row-major numbers.
    Ik {
        #[arg(num_args = 16, allow_negative_numbers = true)]
        pose: Vec<f64>,
        /// FK re-check bound in meters and radians; typed-in matrices need slack.
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Planar-target intrinsic calibration.
    Calibrate {
        /// Correspondence file: `view board_x board_y u v` per line (meters, pixels).
        #[arg(required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Generate this many synthetic views of the default board instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Pixel noise for synthetic views.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Acceptance gate on the rms reprojection error, pixels.
        #[arg(long, default_value_t = RMS_GATE_PX)]
        gate: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hand-eye calibration (camera pose in the effector frame).
    Handeye {
        /// Motion pairs file: alternating A and B transform lines.
        #[arg(long, conflicts_with_all = ["robot", "camera"])]
        pairs: Option<PathBuf>,
        /// Effector poses in the base frame, one per station.
        #[arg(long, requires = "camera")]
        robot: Option<PathBuf>,
        /// Target poses in the camera frame, one per station.
        #[arg(long, requires = "robot")]
        camera: Option<PathBuf>,
    },
    /// Disparity (and optionally depth) from a rectified PGM pair.
    Stereo {
        left: PathBuf,
        right: PathBuf,
        #[arg(long, default_value_t = 64)]
        d_max: usize,
        /// Disparity output as plain PGM, 255 marks invalid pixels.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Focal length in pixels, needed for depth output.
        #[arg(long, requires_all = ["baseline", "depth_out"])]
        fx: Option<f64>,
        /// Baseline in meters.
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long)]
        depth_out: Option<PathBuf>,
        /// Depths outside this range, in meters, are written as nan.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [0.25, 2.5])]
        depth_range: Vec<f64>,
    },
    /// Size and grade a detection box.
    Size {
        #[arg(num_args = 4, value_names = ["X1", "Y1", "X2", "Y2"])]
        corners: Vec<f64>,
        /// Depth in meters.
        #[arg(long)]
        depth: f64,
        /// Focal length in pixels.
        #[arg(long)]
        fx: f64,
        /// Grade band lower edges in centimeters.
        #[arg(long, num_args = 3, default_values_t = [1.0, 2.0, 3.0])]
        bands: Vec<f64>,
    },
    /// Dataset tools.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Run the sorting simulation.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Print the pipeline event log to stderr.
        #[arg(long)]
        log: bool,
    },
    /// Render a report from a replay file or a report CSV.
    Report {
        #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
        replay: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Check that images and labels pair up in order and labels parse.
    Verify {
        images: PathBuf,
        labels: PathBuf,
        /// Class list, one name per line; defaults to the built-in order.
        #[arg(long)]
        classes: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn print_matrix(t: &RigidTransform) {
    let m = t.to_matrix();
    for r in 0..4 {
        println!(
            "{:>13.9} {:>13.9} {:>13.9} {:>13.9}",
            m[(r, 0)],
            m[(r, 1)],
            m[(r, 2)],
            m[(r, 3)]
        );
    }
}

fn fk(joints_deg: &[f64], chain: &ChainArgs) -> Result<ExitCode> {
    let chain = chain.chain()?;
    let q = JointVector::from_degrees(joints_deg.try_into()?);
    let t = forward_kinematics(&chain, &q)?;
    print_matrix(&t);
    let p = t.translation();
    println!(
        "position = {:.6} {:.6} {:.6} m (|p| = {:.6} m)",
        p.x,
        p.y,
        p.z,
        p.norm()
    );
    Ok(ExitCode::SUCCESS)
}

fn ik(pose: &[f64], tolerance: f64, chain: &ChainArgs) -> Result<ExitCode> {
    let chain = chain.chain()?;
    let target = RigidTransform::from_row_major(pose, INGESTED_RIGIDITY_TOL)?;
    let set = inverse_kinematics_with(
        &chain,
        &target,
        &IkOptions {
            tolerance,
            ..IkOptions::default()
        },
    )?;
    if set.is_empty() {
        println!("unreachable: {:?}", set.reason.expect("empty sets carry a reason"));
        return Ok(ExitCode::from(2));
    }
    for s in &set.solutions {
        let d = s.joints.to_degrees();
        println!(
            "{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}  ({:?}, {:?})",
            d[0], d[1], d[2], d[3], d[4], s.base, s.elbow
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_correspondences(text: &str) -> Result<Vec<View>> {
    let mut views: Vec<View> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            bail!("line {}: expected `view board_x board_y u v`", i + 1);
        }
        let view: usize = f[0].parse().with_context(|| format!("line {}: view index", i + 1))?;
        let nums = f[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("line {}", i + 1))?;
        if view >= views.len() {
            views.resize_with(view + 1, Vec::new);
        }
        views[view].push(Correspondence {
            board: Point3::new(nums[0], nums[1], 0.0),
            pixel: nalgebra::Point2::new(nums[2], nums[3]),
        });
    }
    Ok(views.into_iter().filter(|v| !v.is_empty()).collect())
}

fn synthetic_views(n: usize, noise: f64, seed: u64) -> Result<Vec<View>> {
    let k = Intrinsics::new(800.0, 790.0, 640.0, 400.0)?;
    let d = Distortion {
        k1: -0.05,
        k2: 0.01,
        p1: 0.001,
        p2: -0.0005,
    };
    let poses: Vec<RigidTransform> = (0..n)
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
        .collect();
    let noise = (noise > 0.0).then_some((noise, seed));
    Ok(synthesize_target_views(
        &PlanarTarget::default(),
        &poses,
        &k,
        &d,
        noise,
    )?)
}

fn calibrate(
    input: Option<&Path>,
    synthetic: Option<usize>,
    noise: f64,
    seed: u64,
    gate: f64,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let views = match (synthetic, input) {
        (Some(n), _) => synthetic_views(n, noise, seed)?,
        (None, Some(p)) => parse_correspondences(&read(p)?)?,
        (None, None) => bail!("an input file or --synthetic is required"),
    };
    let result = calibrate_planar(&views)?;
    let text = format_calibration(&result);
    match out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    let pass = result.passes_gate(gate);
    eprintln!(
        "rms reprojection {:.4} px over {} views: {} (gate {gate} px)",
        result.rms_reprojection,
        views.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn handeye(pairs: Option<&Path>, robot: Option<&Path>, camera: Option<&Path>) -> Result<ExitCode> {
    let pairs = match (pairs, robot, camera) {
        (Some(p), _, _) => parse_motion_pairs(&read(p)?)?,
        (None, Some(r), Some(c)) => {
            let robot = parse_transforms(&read(r)?, INGESTED_RIGIDITY_TOL)?;
            let cam = parse_transforms(&read(c)?, INGESTED_RIGIDITY_TOL)?;
            collect_motion_pairs(&robot, &cam)?
        }
        _ => bail!("give --pairs, or both --robot and --camera"),
    };
    if pairs.len() < RECOMMENDED_MIN_PAIRS {
        eprintln!(
            "warning: {} motion pairs; at least {RECOMMENDED_MIN_PAIRS} are recommended",
            pairs.len()
        );
    }
    let solution = solve_hand_eye(&pairs)?;
    print!("{}", format_solution(&solution));
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn stereo(
    left: &Path,
    right: &Path,
    d_max: usize,
    out: Option<&Path>,
    fx: Option<f64>,
    baseline: Option<f64>,
    depth_out: Option<&Path>,
    depth_range: &[f64],
) -> Result<ExitCode> {
    let load = |p: &Path| -> Result<_> {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(parse_pgm(&bytes)?)
    };
    let (l, r) = (load(left)?, load(right)?);
    let disp = compute_disparity(&l, &r, &MatchParams::with_d_max(d_max))?;
    let valid = disp.valid_count();
    println!(
        "{}x{} pixels, {valid} valid disparities ({:.1}%)",
        disp.width,
        disp.height,
        100.0 * valid as f64 / (disp.width * disp.height) as f64
    );
    if let Some(p) = out {
        write(p, format_disparity_pgm(&disp)?)?;
    }
    if let (Some(fx), Some(b), Some(p)) = (fx, baseline, depth_out) {
        write(
            p,
            format_depth_grid(&depth_map(
                &disp,
                fx,
                b,
                &DepthRange {
                    min: depth_range[0],
                    max: depth_range[1],
                },
            )),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn size(corners: &[f64], depth: f64, fx: f64, bands: &[f64]) -> Result<ExitCode> {
    let bands = GradeBands::new(bands.try_into()?, GradeBands::default().sanity_max.max(bands[2]))?;
    let s = size_box((corners[0], corners[1]), (corners[2], corners[3]), depth, fx, &bands)?;
    let d = s.dimensions.scaled(100.0);
    println!("a = {:.4} cm\nb = {:.4} cm\nc = {:.4} cm", d.a, d.b, d.c);
    println!("grade = {}", s.assessment.grade);
    if s.assessment.oversize {
        eprintln!("warning: diagonal above {} cm", bands.sanity_max);
    }
    Ok(ExitCode::SUCCESS)
}

fn sorted_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn dataset_verify(images: &Path, labels: &Path, classes: Option<&Path>) -> Result<ExitCode> {
    let class_map = match classes {
        Some(p) => ClassMap::parse(&read(p)?)?,
        None => ClassMap::default(),
    };
    let image_names = sorted_names(images)?;
    let label_names = sorted_names(labels)?;
    let report = verify_dataset(&image_names, &label_names);
    println!("{report}");
    let mut bad_labels = 0;
    for name in &label_names {
        let parsed = parse_label_file(&read(&labels.join(name))?);
        let problem = match parsed {
            Err(e) => Some(e.to_string()),
            Ok(records) => records
                .iter()
                .find(|r| r.class_index >= class_map.len())
                .map(|r| format!("class {} outside the {}-class map", r.class_index, class_map.len())),
        };
        if let Some(p) = problem {
            println!("label {name}: {p}");
            bad_labels += 1;
        }
    }
    Ok(if report.passed() && bad_labels == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn resolve(base: Option<&Path>, rel: &str) -> PathBuf {
    let p = PathBuf::from(rel);
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

fn simulate(
    config: Option<&Path>,
    seed: Option<u64>,
    trials: Option<usize>,
    format: Format,
    log: bool,
) -> Result<ExitCode> {
    let (mut cfg, refs) = match config {
        Some(p) => parse_config(&read(p)?)?,
        None => (ExperimentConfig::default(), Default::default()),
    };
    if let Some(path) = &refs.replay {
        let records = parse_replay(&read(&resolve(config, path))?)?;
        print!("{}", render_report(&run_replay(&records), format.into()));
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(path) = &refs.confusion {
        cfg.confusion = ConfusionSpec::parse(&read(&resolve(config, path))?)?;
    }
    if let Some(path) = &refs.class_map {
        let map = ClassMap::parse(&read(&resolve(config, path))?)?;
        cfg.detector = DetectorConfig::new(map, cfg.detector.box_noise_px())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let trials = trials.unwrap_or(refs.trials).max(1);
    let cfgs: Vec<ExperimentConfig> = (0..trials as u64)
        .map(|k| ExperimentConfig {
            seed: cfg.seed.wrapping_add(k),
            ..cfg.clone()
        })
        .collect();
    for (c, outcome) in cfgs.iter().zip(run_experiments(&cfgs)) {
        let outcome = outcome?;
        if trials > 1 {
            println!("# seed {}", c.seed);
        }
        if log {
            for line in &outcome.state.log {
                eprintln!("{line}");
            }
        }
        print!("{}", render_report(&outcome.report, format.into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn report(replay: Option<&Path>, csv: Option<&Path>, format: Format) -> Result<ExitCode> {
    let report = match (replay, csv) {
        (Some(p), _) => run_replay(&parse_replay(&read(p)?)?),
        (None, Some(p)) => parse_report_csv(&read(p)?)?,
        (None, None) => bail!("give --replay or --csv"),
    };
    print!("{}", render_report(&report, format.into()));
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fk { joints_deg, chain } => fk(&joints_deg, &chain),
        Command::Ik { pose, tolerance, chain } => ik(&pose, tolerance, &chain),
        Command::Calibrate {
            input,
            synthetic,
            noise,
            seed,
            gate,
            out,
        } => calibrate(input.as_deref(), synthetic, noise, seed, gate, out.as_deref()),
        Command::Handeye { pairs, robot, camera } => handeye(pairs.as_deref(), robot.as_deref(), camera.as_deref()),
        Command::Stereo {
            left,
            right,
            d_max,
            out,
            fx,
            baseline,
            depth_out,
            depth_range,
        } => stereo(
            &left,
            &right,
            d_max,
            out.as_deref(),
            fx,
            baseline,
            depth_out.as_deref(),
            &depth_range,
        ),
        Command::Size {
            corners,
            depth,
            fx,
            bands,
        } => size(&corners, depth, fx, &bands),
        Command::Dataset {
            command:
                DatasetCommand::Verify {
                    images,
                    labels,
                    classes,
                },
        } => dataset_verify(&images, &labels, classes.as_deref()),
        Command::Simulate {
            config,
            seed,
            trials,
            format,
            log,
        } => simulate(config.as_deref(), seed, trials, format, log),
        Command::Report { replay, csv, format } => report(replay.as_deref(), csv.as_deref(), format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
