//! `key = value` experiment configuration files.

use super::experiment::ExperimentConfig;
use super::sensing::DepthFidelity;
use super::SimError;
use crate::dataset::Lithology;
use crate::detection::{ConfusionSpec, DetectorConfig};
use crate::geometry::{strip_comment, Point3};
use crate::kinematics::DhChain;
use crate::sizing::GradeBands;

/// Settings that name other files, left for the caller to resolve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigRefs {
    /// Confusion matrix file; `None` means identity.
    pub confusion: Option<String>,
    pub replay: Option<String>,
    pub class_map: Option<String>,
    /// Independent runs with seeds `seed, seed + 1, …`.
    pub trials: usize,
}

fn numbers<const N: usize>(value: &str) -> Option<[f64; N]> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .ok()?;
    v.try_into().ok()
}

/// Parses a configuration; unknown keys are errors, missing keys keep their
/// defaults.
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, ConfigRefs), SimError> {
    let mut cfg = ExperimentConfig::default();
    let mut refs = ConfigRefs {
        trials: 1,
        ..ConfigRefs::default()
    };
    let mut bands = (cfg.bands.lower, cfg.bands.sanity_max);
    let mut box_noise = cfg.detector.box_noise_px();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SimError::Config { line: i + 1, message };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let bad = || err(format!("bad value for `{key}`: `{value}`"));
        let float = || value.parse::<f64>().map_err(|_| bad());
        let int = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
            "trials" => refs.trials = int()?.max(1),
            "profile" => cfg.sensor.chain = DhChain::profile(value)?,
            "counts" => {
                let c: Vec<usize> = value
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                cfg.scene.counts = c.try_into().map_err(|_| bad())?;
            }
            "size_range_cm" => {
                let [lo, hi] = numbers(value).ok_or_else(bad)?;
                cfg.scene.size_range_cm = (lo, hi);
            }
            "plane_z" => cfg.scene.plane_z = float()?,
            "grade_bands" => bands.0 = numbers(value).ok_or_else(bad)?,
            "grade_sanity_max" => bands.1 = float()?,
            "confusion" => refs.confusion = (value != "identity").then(|| value.to_string()),
            "class_map" => refs.class_map = Some(value.to_string()),
            "replay" => refs.replay = Some(value.to_string()),
            "grasp" => cfg.grasp = value.parse().map_err(|e: SimError| err(e.to_string()))?,
            "fidelity" => {
                cfg.sensor.fidelity = match value {
                    "analytic" => DepthFidelity::Analytic,
                    "stereo" => DepthFidelity::Stereo,
                    _ => return Err(bad()),
                }
            }
            "depth_noise_m" => cfg.sensor.depth_noise_m = float()?.max(0.0),
            "box_noise_px" => box_noise = float()?,
            "max_idle_searches" => cfg.max_idle_searches = int()?,
            _ => {
                let Some(code) = key.strip_prefix("bin.") else {
                    return Err(err(format!("unknown key `{key}`")));
                };
                let lith: Lithology = code.parse().map_err(|_| err(format!("unknown lithology `{code}`")))?;
                let [x, y, z] = numbers(value).ok_or_else(bad)?;
                cfg.scene.bins[lith.index()].position = Point3::new(x, y, z);
            }
        }
    }
    cfg.bands = GradeBands::new(bands.0, bands.1)?;
    cfg.detector = DetectorConfig::new(cfg.detector.class_map().clone(), box_noise)?;
    if refs.confusion.is_none() {
        cfg.confusion = ConfusionSpec::identity();
    }
    Ok((cfg, refs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::GraspModel;

    #[test]
    fn full_config() {
        let text = "\
# sorting run
seed = 42
profile = jetarm
counts = 5 5 5 5
size_range_cm = 1.5 3.5
grade_bands = 1 2 3
grade_sanity_max = 4
confusion = confusion.txt
grasp = always
fidelity = stereo
box_noise_px = 0
bin.SH = -0.1 0.1 -0.1
trials = 4
";
        let (cfg, refs) = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.scene.counts, [5; 4]);
        assert_eq!(cfg.scene.size_range_cm, (1.5, 3.5));
        assert_eq!(cfg.grasp, GraspModel::Always);
        assert_eq!(cfg.sensor.fidelity, DepthFidelity::Stereo);
        assert_eq!(cfg.detector.box_noise_px(), 0.0);
        assert_eq!(cfg.scene.bins[0].position, Point3::new(-0.1, 0.1, -0.1));
        assert_eq!(refs.confusion.as_deref(), Some("confusion.txt"));
        assert_eq!(refs.trials, 4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            parse_config("seed = 1\nwhat = 2"),
            Err(SimError::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("counts = 1 2 3"),
            Err(SimError::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("grasp = step 1 0.9 0.1"),
            Err(SimError::Config { line: 1, .. })
        ));
        assert!(parse_config("grade_bands = 3 2 1").is_err());
        assert!(parse_config("bin.XX = 0 0 0").is_err());
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn defaults_when_empty() {
        let (cfg, refs) = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(refs.trials, 1);
    }
}
