//! What the eye-in-hand camera sees from a given arm configuration.

use nalgebra::{Point2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::AggregateSpec;
use super::{SimError, Stream};
use crate::camera::{CameraModel, Distortion, Intrinsics, StereoRig};
use crate::detection::{detect, BoundingBox, ConfusionSpec, Detection, DetectorConfig, SceneView, Silhouette};
use crate::geometry::{Point3, RigidTransform, RotationMatrix};
use crate::kinematics::{forward_kinematics, DhChain, JointVector};
use crate::sizing::GradeBands;
use crate::stereo::{compute_disparity, DepthRange, GrayImage, MatchParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFidelity {
    /// True centroid depth plus Gaussian noise.
    Analytic,
    /// Median disparity of a rendered, textured stereo pair.
    Stereo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub chain: DhChain,
    /// Arm configuration from which the work plane is observed.
    pub search_pose: JointVector,
    /// Camera pose in the effector frame.
    pub t_ce: RigidTransform,
    pub rig: StereoRig,
    pub image_size: (usize, usize),
    pub fidelity: DepthFidelity,
    /// Standard deviation of analytic depth noise, meters.
    pub depth_noise_m: f64,
    pub depth_range: DepthRange,
}

impl Default for SensorConfig {
    fn default() -> Self {
        let intr = Intrinsics {
            fx: 600.0,
            fy: 600.0,
            cx: 640.0,
            cy: 400.0,
            skew: 0.0,
        };
        Self {
            chain: DhChain::jetarm(),
            search_pose: JointVector::from_degrees([0.0, -90.0, 90.0, 0.0, 0.0]),
            t_ce: RigidTransform::new(
                RotationMatrix::rot_z(std::f64::consts::FRAC_PI_2),
                Vector3::new(0.03, 0.0, -0.03),
            ),
            rig: StereoRig::rectified(CameraModel::new(intr, Distortion::none()), 0.04),
            image_size: (1280, 800),
            fidelity: DepthFidelity::Analytic,
            depth_noise_m: 0.0,
            depth_range: DepthRange::default(),
        }
    }
}

impl SensorConfig {
    pub fn camera(&self) -> &CameraModel {
        &self.rig.left
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.rig.left.intrinsics
    }

    /// Camera pose in the base frame at joint configuration `q`.
    pub fn camera_pose(&self, q: &JointVector) -> Result<RigidTransform, SimError> {
        Ok(forward_kinematics(&self.chain, q)?.compose(&self.t_ce))
    }

    /// Projected outline of one aggregate; `None` when any corner is behind
    /// the camera.
    pub fn silhouette(&self, agg: &AggregateSpec, t_cb: &RigidTransform, bands: &GradeBands) -> Option<Silhouette> {
        let to_cam = t_cb.inverse();
        let cam = self.camera();
        let points = agg
            .corners()
            .iter()
            .map(|c| {
                let p = to_cam.transform_point(c);
                (p.z > 0.0).then(|| cam.project(&p).ok()).flatten()
            })
            .collect::<Option<Vec<_>>>()?;
        let centroid = cam.project(&to_cam.transform_point(&agg.centroid())).ok()?;
        Some(Silhouette {
            source: agg.id,
            lithology: agg.lithology,
            grade: agg.true_grade(bands),
            points,
            centroid,
        })
    }

    pub fn view(&self, aggregates: &[AggregateSpec], t_cb: &RigidTransform, bands: &GradeBands) -> SceneView {
        SceneView {
            width: self.image_size.0 as f64,
            height: self.image_size.1 as f64,
            silhouettes: aggregates
                .iter()
                .filter_map(|a| self.silhouette(a, t_cb, bands))
                .collect(),
        }
    }

    /// Depth of the detected aggregate along the optical axis.
    ///
    /// `rng` is drawn from exactly once per call in analytic mode.
    pub(crate) fn depth_of(
        &self,
        det: &Detection,
        aggregates: &[AggregateSpec],
        plane_z: f64,
        t_cb: &RigidTransform,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>, SimError> {
        match self.fidelity {
            DepthFidelity::Analytic => {
                let noise = self.depth_noise_m;
                let z: f64 = if noise > 0.0 {
                    Normal::new(0.0, noise)
                        .map_err(|e| SimError::Config {
                            line: 0,
                            message: e.to_string(),
                        })?
                        .sample(rng)
                } else {
                    let _: f64 = rng.random();
                    0.0
                };
                let Some(agg) = aggregates.iter().find(|a| a.id == det.source) else {
                    return Ok(None);
                };
                let depth = t_cb.inverse().transform_point(&agg.centroid()).z + z;
                Ok(self.depth_range.check(depth).ok().map(|_| depth))
            }
            DepthFidelity::Stereo => stereo_depth(aggregates, plane_z, t_cb, self, &det.bbox),
        }
    }
}

/// A detection and the depth measured for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensedObject {
    pub detection: Detection,
    pub depth: Option<f64>,
}

/// Detections from configuration `q` with a depth for each.
#[allow(clippy::too_many_arguments)]
pub fn sense(
    aggregates: &[AggregateSpec],
    plane_z: f64,
    q: &JointVector,
    sensor: &SensorConfig,
    confusion: &ConfusionSpec,
    detector: &DetectorConfig,
    bands: &GradeBands,
    seed: u64,
) -> Result<Vec<SensedObject>, SimError> {
    let t_cb = sensor.camera_pose(q)?;
    let view = sensor.view(aggregates, &t_cb, bands);
    let mut depth_rng = Stream::Depth.rng(seed);
    detect(&view, confusion, detector, seed)
        .into_iter()
        .map(|detection| {
            let depth = sensor.depth_of(&detection, aggregates, plane_z, &t_cb, &mut depth_rng)?;
            Ok(SensedObject { detection, depth })
        })
        .collect()
}

/// Pixel window of a rendered stereo pair; both images cover the same
/// pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StereoRoi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

const TEXEL_M: f64 = 0.001;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// World-attached random texture; `axis` is the surface normal axis.
fn texel(p: &Point3, axis: usize) -> u8 {
    let (u, v) = match axis {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    let i = (u / TEXEL_M).floor() as i64 as u64;
    let j = (v / TEXEL_M).floor() as i64 as u64;
    (mix(mix(i ^ (axis as u64) << 56) ^ j) >> 56) as u8
}

/// Nearest hit of a base-frame ray with the aggregates and the work plane:
/// ray parameter and normal axis.
fn cast(origin: &Point3, dir: &Vector3<f64>, aggregates: &[AggregateSpec], plane_z: f64) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    if dir.z.abs() > 1e-12 {
        let t = (plane_z - origin.z) / dir.z;
        if t > 0.0 {
            best = Some((t, 2));
        }
    }
    for a in aggregates {
        let c = a.centroid();
        let h = a.half_extents();
        let (mut t_near, mut t_far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 2);
        let mut hit = true;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if (origin[k] - c[k]).abs() > h[k] {
                    hit = false;
                    break;
                }
                continue;
            }
            let t1 = (c[k] - h[k] - origin[k]) / dir[k];
            let t2 = (c[k] + h[k] - origin[k]) / dir[k];
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if lo > t_near {
                t_near = lo;
                axis = k;
            }
            t_far = t_far.min(hi);
        }
        if hit && t_near <= t_far && t_near > 0.0 && best.is_none_or(|b| t_near < b.0) {
            best = Some((t_near, axis));
        }
    }
    best
}

/// Optical-axis depth of the first surface seen through `pixel` of the left
/// camera, ignoring lens distortion.
pub fn surface_depth(
    aggregates: &[AggregateSpec],
    plane_z: f64,
    t_cb: &RigidTransform,
    intr: &Intrinsics,
    pixel: &Point2<f64>,
) -> Option<f64> {
    let d_cam = Vector3::new((pixel.x - intr.cx) / intr.fx, (pixel.y - intr.cy) / intr.fy, 1.0);
    let origin = Point3::from(*t_cb.translation());
    cast(&origin, &t_cb.transform_vector(&d_cam), aggregates, plane_z).map(|(t, _)| t)
}

/// Renders the left and right images of an ideal rectified pair over `roi`.
pub fn render_stereo_roi(
    aggregates: &[AggregateSpec],
    plane_z: f64,
    t_cb: &RigidTransform,
    sensor: &SensorConfig,
    roi: &StereoRoi,
) -> Result<(GrayImage, GrayImage), SimError> {
    let intr = sensor.intrinsics();
    let baseline = sensor.rig.baseline();
    let render = |offset: f64| {
        let origin = t_cb.transform_point(&Point3::new(offset, 0.0, 0.0));
        GrayImage::from_fn(roi.width, roi.height, |x, y| {
            let u = (roi.x0 + x) as f64;
            let v = (roi.y0 + y) as f64;
            let d = t_cb.transform_vector(&Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0));
            match cast(&origin, &d, aggregates, plane_z) {
                Some((t, axis)) => texel(&(origin + d * t), axis),
                None => 0,
            }
        })
    };
    Ok((render(0.0)?, render(baseline)?))
}

/// Depth of the surface inside `bbox` from a rendered stereo pair: median
/// valid disparity over the central half of the box.
pub fn stereo_depth(
    aggregates: &[AggregateSpec],
    plane_z: f64,
    t_cb: &RigidTransform,
    sensor: &SensorConfig,
    bbox: &BoundingBox,
) -> Result<Option<f64>, SimError> {
    let intr = sensor.intrinsics();
    let baseline = sensor.rig.baseline();
    let (w, h) = sensor.image_size;
    let d_max = (intr.fx * baseline / sensor.depth_range.min).ceil() as usize + 2;
    let margin = 8usize;
    let x0 = (bbox.x1.floor().max(0.0) as usize).saturating_sub(d_max + margin);
    let x1 = ((bbox.x2.ceil().max(0.0) as usize) + margin).min(w - 1);
    let y0 = (bbox.y1.floor().max(0.0) as usize).saturating_sub(margin);
    let y1 = ((bbox.y2.ceil().max(0.0) as usize) + margin).min(h - 1);
    if x1 <= x0 + d_max + 1 || y1 <= y0 + 4 {
        return Ok(None);
    }
    let roi = StereoRoi {
        x0,
        y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    };
    let (left, right) = render_stereo_roi(aggregates, plane_z, t_cb, sensor, &roi)?;
    let disp = compute_disparity(&left, &right, &MatchParams::with_d_max(d_max))?;
    let c = bbox.center();
    let (hw, hh) = (bbox.width() / 4.0, bbox.height() / 4.0);
    let mut values: Vec<u16> = Vec::new();
    for y in 0..roi.height {
        for x in 0..roi.width {
            let (u, v) = ((roi.x0 + x) as f64, (roi.y0 + y) as f64);
            if (u - c.x).abs() <= hw && (v - c.y).abs() <= hh {
                if let Some(d) = disp.get(x, y).filter(|&d| d > 0) {
                    values.push(d);
                }
            }
        }
    }
    if values.is_empty() {
        return Ok(None);
    }
    values.sort_unstable();
    let d = values[values.len() / 2] as f64;
    let depth = intr.fx * baseline / d;
    Ok(sensor.depth_range.check(depth).ok().map(|_| depth))
}
