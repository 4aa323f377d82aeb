//! Aggregates on the work plane and the four sorting bins.

use nalgebra::Vector3;
use rand::Rng;

use super::{SimError, Stream};
use crate::dataset::Lithology;
use crate::geometry::{Point3, RigidTransform, RotationMatrix};
use crate::kinematics::{inverse_kinematics, DhChain};
use crate::sizing::{Grade, GradeBands};

/// One aggregate, modeled as a world-axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateSpec {
    pub id: usize,
    pub lithology: Lithology,
    /// Edge lengths along base x, y, z in centimeters.
    pub size_cm: [f64; 3],
    /// Centroid pose in the base frame.
    pub pose: RigidTransform,
}

impl AggregateSpec {
    pub fn centroid(&self) -> Point3 {
        Point3::from(*self.pose.translation())
    }

    /// Half extents in meters.
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.size_cm[0], self.size_cm[1], self.size_cm[2]) * 0.005
    }

    pub fn corners(&self) -> [Point3; 8] {
        let h = self.half_extents();
        std::array::from_fn(|i| {
            let s = Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            self.pose.transform_point(&Point3::from(s))
        })
    }

    /// Diagonal of the footprint seen from above, centimeters.
    pub fn footprint_diagonal_cm(&self) -> f64 {
        self.size_cm[0].hypot(self.size_cm[1])
    }

    pub fn true_grade(&self, bands: &GradeBands) -> Grade {
        bands.grade(self.footprint_diagonal_cm())
    }

    /// Top-center point, where the gripper closes.
    pub fn top_center(&self) -> Point3 {
        self.centroid() + Vector3::new(0.0, 0.0, self.half_extents().z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lithology: Lithology,
    /// Drop point in the base frame.
    pub position: Point3,
}

/// Default bin drop points: radius 0.15 m, height −0.10 m, behind the base.
pub fn default_bins() -> [Bin; 4] {
    let angles = [150.0f64, 120.0, -120.0, -150.0];
    std::array::from_fn(|i| {
        let a = angles[i].to_radians();
        Bin {
            lithology: Lithology::ALL[i],
            position: Point3::new(0.15 * a.cos(), 0.15 * a.sin(), -0.10),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub aggregates: Vec<AggregateSpec>,
    pub plane_z: f64,
    /// Indexed by [`Lithology::index`].
    pub bins: [Bin; 4],
}

impl Scene {
    pub fn bin(&self, lithology: Lithology) -> &Bin {
        &self.bins[lithology.index()]
    }

    /// Bins must be within reach and admit a downward-pointing IK solution.
    pub fn validate_bins(&self, chain: &DhChain) -> Result<(), SimError> {
        for bin in &self.bins {
            if bin.position.coords.norm() > chain.reach() {
                return Err(SimError::BinUnreachable(bin.lithology));
            }
            let target = RigidTransform::new(grasp_orientation(), bin.position.coords);
            let set = inverse_kinematics(chain, &target)?;
            if set.is_empty() {
                return Err(SimError::BinUnreachable(bin.lithology));
            }
        }
        Ok(())
    }
}

/// Tool pointing straight down.
pub fn grasp_orientation() -> RotationMatrix {
    RotationMatrix::rot_x(std::f64::consts::PI)
}

/// Annular sector of the work plane where aggregates are placed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementRegion {
    pub r_min: f64,
    pub r_max: f64,
    pub x_min: f64,
}

impl Default for PlacementRegion {
    fn default() -> Self {
        Self {
            r_min: 0.07,
            r_max: 0.205,
            x_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    /// Aggregates per lithology, [`Lithology::ALL`] order.
    pub counts: [usize; 4],
    /// Footprint diagonal range, centimeters.
    pub size_range_cm: (f64, f64),
    /// Allowed size envelope; requests outside it are rejected.
    pub size_limits_cm: (f64, f64),
    pub plane_z: f64,
    pub region: PlacementRegion,
    /// Minimum clearance between footprints, meters.
    pub min_gap: f64,
    pub max_retries: usize,
    pub bins: [Bin; 4],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            counts: [10; 4],
            size_range_cm: (1.0, 4.0),
            size_limits_cm: (1.0, 4.0),
            plane_z: -0.15,
            region: PlacementRegion::default(),
            min_gap: 0.005,
            max_retries: 2000,
            bins: default_bins(),
        }
    }
}

/// Seeded scene: sizes uniform in the configured diagonal range, placed
/// without overlap by rejection sampling.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, SimError> {
    let (lo, hi) = cfg.size_range_cm;
    let (min, max) = cfg.size_limits_cm;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < min || hi > max {
        return Err(SimError::SizeRange { lo, hi, min, max });
    }
    let mut rng = Stream::Scene.rng(seed);
    let region = cfg.region;
    let mut placed: Vec<AggregateSpec> = Vec::new();
    let total: usize = cfg.counts.iter().sum();
    for (li, &count) in cfg.counts.iter().enumerate() {
        for _ in 0..count {
            let diag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let aspect: f64 = rng.random_range(0.6..=1.0);
            let sx = diag / (1.0 + aspect * aspect).sqrt();
            let sy = aspect * sx;
            let sz = rng.random_range(0.2..=0.4) * sy.min(sx);
            let (sx, sy) = if rng.random::<bool>() { (sx, sy) } else { (sy, sx) };
            let size_cm = [sx, sy, sz];
            let half = [sx * 0.005, sy * 0.005];
            let mut spot = None;
            for _ in 0..cfg.max_retries {
                let x = rng.random_range(region.x_min..=region.r_max);
                let y = rng.random_range(-region.r_max..=region.r_max);
                let r = x.hypot(y);
                if r < region.r_min || r > region.r_max {
                    continue;
                }
                let clear = placed.iter().all(|o| {
                    let oh = o.half_extents();
                    let c = o.centroid();
                    (x - c.x).abs() >= half[0] + oh.x + cfg.min_gap || (y - c.y).abs() >= half[1] + oh.y + cfg.min_gap
                });
                if clear {
                    spot = Some((x, y));
                    break;
                }
            }
            let (x, y) = spot.ok_or(SimError::Unplaceable {
                placed: placed.len(),
                requested: total,
            })?;
            placed.push(AggregateSpec {
                id: placed.len(),
                lithology: Lithology::ALL[li],
                size_cm,
                pose: RigidTransform::from_translation(x, y, cfg.plane_z + sz * 0.005),
            });
        }
    }
    Ok(Scene {
        aggregates: placed,
        plane_z: cfg.plane_z,
        bins: cfg.bins,
    })
}
