//! Rectified stereo matching: Census + absolute difference + x-gradient
//! cost, winner-take-all with uniqueness and left-right checks, and
//! disparity-to-depth conversion.

mod pgm;

pub use pgm::{
    format_depth_grid, format_disparity_pgm, format_pgm_p2, format_pgm_p5, parse_depth_grid, parse_disparity_pgm,
    parse_pgm,
};

use nalgebra::Point2;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{undistort, CameraError, Distortion, Intrinsics};
use crate::geometry::Point3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StereoError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("census window {w}x{h} must have odd sides")]
    EvenWindow { w: usize, h: usize },
    #[error("census window {w}x{h} needs {bits} bits (max 64)")]
    WindowTooWide { w: usize, h: usize, bits: usize },
    #[error("census window {w}x{h} does not fit in a {width}x{height} image")]
    WindowTooLarge {
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("d_max {d_max} must be below the image width {width}")]
    DisparityRange { d_max: usize, width: usize },
    #[error("disparity {0} is not positive")]
    NonPositiveDisparity(f64),
    #[error("depth {depth} m outside working range [{min}, {max}] m")]
    DepthOutOfRange { depth: f64, min: f64, max: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, StereoError> {
        if width == 0 || height == 0 {
            return Err(StereoError::InvalidImage(format!("{width}x{height} has no pixels")));
        }
        if data.len() != width * height {
            return Err(StereoError::InvalidImage(format!(
                "{width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, StereoError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self, StereoError> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(u8) -> u8) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Central x-difference with replicated borders.
    fn gradient_x(&self) -> Vec<f64> {
        let w = self.width;
        let mut g = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..w {
                let l = self.get(x.saturating_sub(1), y) as f64;
                let r = self.get((x + 1).min(w - 1), y) as f64;
                g[y * w + x] = 0.5 * (r - l);
            }
        }
        g
    }
}

/// Census descriptors; `None` marks border pixels whose window leaves the
/// image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusImage {
    pub width: usize,
    pub height: usize,
    pub window: (usize, usize),
    pub data: Vec<Option<u64>>,
}

impl CensusImage {
    /// Descriptor width: window area minus the center.
    pub fn bits(&self) -> usize {
        self.window.0 * self.window.1 - 1
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u64> {
        self.data[y * self.width + x]
    }
}

pub const DEFAULT_CENSUS_WINDOW: (usize, usize) = (5, 5);

/// Census transform. Neighbors are visited in raster order, center
/// excluded; the first neighbor lands in the most significant used bit.
/// A bit is set iff the neighbor is strictly darker than the center.
pub fn census_transform(img: &GrayImage, window: (usize, usize)) -> Result<CensusImage, StereoError> {
    let (ww, wh) = window;
    if ww % 2 == 0 || wh % 2 == 0 {
        return Err(StereoError::EvenWindow { w: ww, h: wh });
    }
    let bits = ww * wh - 1;
    if bits > 64 {
        return Err(StereoError::WindowTooWide { w: ww, h: wh, bits });
    }
    if ww >= img.width || wh >= img.height {
        return Err(StereoError::WindowTooLarge {
            w: ww,
            h: wh,
            width: img.width,
            height: img.height,
        });
    }
    let (hx, hy) = (ww / 2, wh / 2);
    let mut data = vec![None; img.width * img.height];
    for y in hy..img.height - hy {
        for x in hx..img.width - hx {
            let c = img.get(x, y);
            let mut desc = 0u64;
            for ny in y - hy..=y + hy {
                for nx in x - hx..=x + hx {
                    if nx == x && ny == y {
                        continue;
                    }
                    desc = (desc << 1) | u64::from(img.get(nx, ny) < c);
                }
            }
            data[y * img.width + x] = Some(desc);
        }
    }
    Ok(CensusImage {
        width: img.width,
        height: img.height,
        window,
        data,
    })
}

/// Matching-cost blend, WTA and validation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub d_max: usize,
    pub w_ad: f64,
    pub w_census: f64,
    pub w_grad: f64,
    pub tau_ad: f64,
    pub tau_grad: f64,
    pub window: (usize, usize),
    /// Best cost must not exceed this fraction of the second best.
    pub uniqueness: f64,
    /// Minimum absolute gap between best and second best.
    pub min_margin: f64,
    pub lr_tolerance: usize,
    /// Box aggregation radius; `None` is pure per-pixel WTA.
    pub aggregation_radius: Option<usize>,
}

impl MatchParams {
    pub fn with_d_max(d_max: usize) -> Self {
        Self {
            d_max,
            ..Self::default()
        }
    }
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            d_max: 64,
            w_ad: 1.0,
            w_census: 2.0,
            w_grad: 1.0,
            tau_ad: 32.0,
            tau_grad: 16.0,
            window: DEFAULT_CENSUS_WINDOW,
            uniqueness: 0.95,
            min_margin: 1.0,
            lr_tolerance: 1,
            aggregation_radius: None,
        }
    }
}

/// Individual (unweighted, truncated) terms of one matching cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub ad: f64,
    pub census: u32,
    pub grad: f64,
}

/// Per-pixel integer disparities; `None` is invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub data: Vec<Option<u16>>,
}

impl DisparityMap {
    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_some()).count()
    }
}

/// Precomputed census and gradient images for a rectified pair.
#[derive(Debug, Clone)]
pub struct Matcher<'a> {
    left: &'a GrayImage,
    right: &'a GrayImage,
    census_l: CensusImage,
    census_r: CensusImage,
    grad_l: Vec<f64>,
    grad_r: Vec<f64>,
    params: MatchParams,
}

impl<'a> Matcher<'a> {
    pub fn new(left: &'a GrayImage, right: &'a GrayImage, params: MatchParams) -> Result<Self, StereoError> {
        if (left.width, left.height) != (right.width, right.height) {
            return Err(StereoError::DimensionMismatch {
                left: (left.width, left.height),
                right: (right.width, right.height),
            });
        }
        if params.d_max >= left.width {
            return Err(StereoError::DisparityRange {
                d_max: params.d_max,
                width: left.width,
            });
        }
        Ok(Self {
            census_l: census_transform(left, params.window)?,
            census_r: census_transform(right, params.window)?,
            grad_l: left.gradient_x(),
            grad_r: right.gradient_x(),
            left,
            right,
            params,
        })
    }

    /// Terms for left pixel `(x, y)` against right pixel `(x - d, y)`.
    pub fn cost_terms(&self, x: usize, y: usize, d: usize) -> Option<CostTerms> {
        let xr = x.checked_sub(d)?;
        let cl = self.census_l.get(x, y)?;
        let cr = self.census_r.get(xr, y)?;
        let w = self.left.width;
        let ad = (self.left.get(x, y) as f64 - self.right.get(xr, y) as f64).abs();
        let grad = (self.grad_l[y * w + x] - self.grad_r[y * w + xr]).abs();
        Some(CostTerms {
            ad: ad.min(self.params.tau_ad),
            census: (cl ^ cr).count_ones(),
            grad: grad.min(self.params.tau_grad),
        })
    }

    pub fn cost(&self, x: usize, y: usize, d: usize) -> Option<f64> {
        let p = &self.params;
        self.cost_terms(x, y, d)
            .map(|t| p.w_ad * t.ad + p.w_census * t.census as f64 + p.w_grad * t.grad)
    }

    /// Raw costs of row `y`, laid out `[x * (d_max + 1) + d]`; NaN is invalid.
    fn raw_row(&self, y: usize) -> Vec<f64> {
        let nd = self.params.d_max + 1;
        let mut row = vec![f64::NAN; self.left.width * nd];
        for x in 0..self.left.width {
            for d in 0..nd {
                if let Some(c) = self.cost(x, y, d) {
                    row[x * nd + d] = c;
                }
            }
        }
        row
    }

    /// Box-mean of valid costs around each valid entry.
    fn aggregated_row(&self, y: usize, r: usize) -> Vec<f64> {
        let nd = self.params.d_max + 1;
        let w = self.left.width;
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(self.left.height - 1);
        let rows: Vec<Vec<f64>> = (y0..=y1).map(|yy| self.raw_row(yy)).collect();
        let center = &rows[y - y0];
        let mut out = vec![f64::NAN; w * nd];
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            for d in 0..nd {
                if center[x * nd + d].is_nan() {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0u32;
                for row in &rows {
                    for xx in x0..=x1 {
                        let c = row[xx * nd + d];
                        if !c.is_nan() {
                            sum += c;
                            n += 1;
                        }
                    }
                }
                out[x * nd + d] = sum / n as f64;
            }
        }
        out
    }

    fn row_costs(&self, y: usize) -> Vec<f64> {
        match self.params.aggregation_radius {
            Some(r) if r > 0 => self.aggregated_row(y, r),
            _ => self.raw_row(y),
        }
    }

    /// Left disparity with uniqueness test, and raw right-reference WTA.
    fn match_row(&self, y: usize) -> (Vec<Option<u16>>, Vec<Option<u16>>) {
        let p = &self.params;
        let nd = p.d_max + 1;
        let w = self.left.width;
        let costs = self.row_costs(y);

        let right: Vec<Option<u16>> = (0..w)
            .map(|xr| {
                let candidates = (0..nd).filter(|&d| xr + d < w).map(|d| (d, costs[(xr + d) * nd + d]));
                argmin(candidates).map(|(d, _)| d as u16)
            })
            .collect();

        let left = (0..w)
            .map(|x| {
                let slice = &costs[x * nd..(x + 1) * nd];
                let (best_d, best) = argmin(slice.iter().copied().enumerate())?;
                let (_, second) = argmin(
                    slice
                        .iter()
                        .copied()
                        .enumerate()
                        .filter(|&(d, _)| d.abs_diff(best_d) > 1),
                )?;
                if second - best < p.min_margin || best > p.uniqueness * second {
                    return None;
                }
                let dr = right[x - best_d]?;
                if (dr as usize).abs_diff(best_d) > p.lr_tolerance {
                    return None;
                }
                Some(best_d as u16)
            })
            .collect();
        (left, right)
    }

    /// Left-reference disparity (checked) and right-reference WTA map.
    pub fn compute_pair(&self) -> (DisparityMap, DisparityMap) {
        let rows: Vec<_> = (0..self.left.height)
            .into_par_iter()
            .map(|y| self.match_row(y))
            .collect();
        let mut left = Vec::with_capacity(self.left.width * self.left.height);
        let mut right = Vec::with_capacity(left.capacity());
        for (l, r) in rows {
            left.extend(l);
            right.extend(r);
        }
        let make = |data| DisparityMap {
            width: self.left.width,
            height: self.left.height,
            d_max: self.params.d_max,
            data,
        };
        (make(left), make(right))
    }
}

/// First minimum over valid (non-NaN) costs, so ties go to the smallest
/// disparity.
fn argmin(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    it.filter(|(_, c)| !c.is_nan())
        .fold(None, |acc: Option<(usize, f64)>, (d, c)| match acc {
            Some((_, b)) if b <= c => acc,
            _ => Some((d, c)),
        })
}

pub fn compute_disparity(
    left: &GrayImage,
    right: &GrayImage,
    params: &MatchParams,
) -> Result<DisparityMap, StereoError> {
    Ok(Matcher::new(left, right, *params)?.compute_pair().0)
}

/// `Z = fx·B / d`.
pub fn disparity_to_depth(d: f64, fx: f64, baseline: f64) -> Result<f64, StereoError> {
    if !(d > 0.0) {
        return Err(StereoError::NonPositiveDisparity(d));
    }
    Ok(fx * baseline / d)
}

/// Accepted depth interval, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 0.25, max: 2.5 }
    }
}

impl DepthRange {
    pub fn check(&self, depth: f64) -> Result<(), StereoError> {
        if depth >= self.min && depth <= self.max {
            Ok(())
        } else {
            Err(StereoError::DepthOutOfRange {
                depth,
                min: self.min,
                max: self.max,
            })
        }
    }
}

/// Per-pixel depth in meters; `None` is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.data[y * self.width + x]
    }
}

/// Converts every valid disparity; zero or out-of-range depths become
/// invalid.
pub fn depth_map(disp: &DisparityMap, fx: f64, baseline: f64, range: &DepthRange) -> DepthMap {
    let data = disp
        .data
        .iter()
        .map(|d| {
            let z = disparity_to_depth((*d)? as f64, fx, baseline).ok()?;
            range.check(z).ok().map(|_| z)
        })
        .collect();
    DepthMap {
        width: disp.width,
        height: disp.height,
        data,
    }
}

/// Back-projects a pixel at known depth into the camera frame.
pub fn locate_3d(
    pixel: &Point2<f64>,
    depth: f64,
    intr: &Intrinsics,
    dist: &Distortion,
    range: &DepthRange,
) -> Result<Point3, StereoError> {
    range.check(depth)?;
    let n = undistort(intr, dist, pixel)?;
    Ok(Point3::new(n.x * depth, n.y * depth, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<u8>()).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    #[test]
    fn image_validation() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn census_uniform_and_peak() {
        let img = GrayImage::filled(9, 9, 77).unwrap();
        let c = census_transform(&img, (5, 5)).unwrap();
        assert_eq!(c.get(4, 4), Some(0));
        assert_eq!(c.get(0, 4), None);
        assert_eq!(c.bits(), 24);
        let peak = GrayImage::from_fn(9, 9, |x, y| if (x, y) == (4, 4) { 200 } else { 10 }).unwrap();
        let c = census_transform(&peak, (5, 5)).unwrap();
        assert_eq!(c.get(4, 4), Some((1u64 << 24) - 1));
    }

    #[test]
    fn census_bit_order() {
        // Only the first raster neighbor is darker.
        let img = GrayImage::from_fn(7, 7, |x, y| if (x, y) == (1, 1) { 0 } else { 50 }).unwrap();
        let c = census_transform(&img, (3, 3)).unwrap();
        assert_eq!(c.get(2, 2), Some(0b1000_0000));
    }

    #[test]
    fn census_window_errors() {
        let img = GrayImage::filled(5, 5, 0).unwrap();
        assert!(matches!(
            census_transform(&img, (4, 5)),
            Err(StereoError::EvenWindow { .. })
        ));
        assert!(matches!(
            census_transform(&img, (5, 3)),
            Err(StereoError::WindowTooLarge { .. })
        ));
        let big = GrayImage::filled(20, 20, 0).unwrap();
        assert!(matches!(
            census_transform(&big, (9, 9)),
            Err(StereoError::WindowTooWide { .. })
        ));
    }

    #[test]
    fn identical_images_give_zero() {
        let img = texture(48, 32, 3);
        let disp = compute_disparity(&img, &img, &MatchParams::with_d_max(8)).unwrap();
        assert!(disp.valid_count() > 0);
        assert!(disp.data.iter().flatten().all(|&d| d == 0));
    }

    #[test]
    fn self_cost_terms_vanish() {
        let img = texture(32, 24, 4);
        let m = Matcher::new(&img, &img, MatchParams::with_d_max(4)).unwrap();
        let t = m.cost_terms(10, 10, 0).unwrap();
        assert_eq!((t.ad, t.census, t.grad), (0.0, 0, 0.0));
        assert!(m.cost_terms(2, 10, 3).is_none());
    }

    #[test]
    fn uniform_pair_is_all_invalid() {
        let img = GrayImage::filled(40, 30, 128).unwrap();
        let disp = compute_disparity(&img, &img, &MatchParams::with_d_max(8)).unwrap();
        assert_eq!(disp.valid_count(), 0);
    }

    #[test]
    fn shift_seven_recovered() {
        let left = texture(80, 40, 9);
        let right = GrayImage::from_fn(80, 40, |x, y| left.get((x + 7).min(79), y)).unwrap();
        let disp = compute_disparity(&left, &right, &MatchParams::with_d_max(16)).unwrap();
        let valid: Vec<u16> = disp.data.iter().flatten().copied().collect();
        let hits = valid.iter().filter(|&&d| d == 7).count();
        assert!(hits as f64 >= 0.95 * valid.len() as f64);
    }

    #[test]
    fn aggregation_keeps_shift() {
        let left = texture(60, 30, 10);
        let right = GrayImage::from_fn(60, 30, |x, y| left.get((x + 3).min(59), y)).unwrap();
        let params = MatchParams {
            aggregation_radius: Some(2),
            ..MatchParams::with_d_max(8)
        };
        let disp = compute_disparity(&left, &right, &params).unwrap();
        let valid: Vec<u16> = disp.data.iter().flatten().copied().collect();
        assert!(!valid.is_empty());
        assert!(valid.iter().filter(|&&d| d == 3).count() as f64 >= 0.95 * valid.len() as f64);
    }

    #[test]
    fn matcher_preconditions() {
        let a = texture(20, 20, 1);
        let b = texture(21, 20, 1);
        assert!(matches!(
            compute_disparity(&a, &b, &MatchParams::with_d_max(4)),
            Err(StereoError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            compute_disparity(&a, &a, &MatchParams::with_d_max(20)),
            Err(StereoError::DisparityRange { .. })
        ));
    }

    #[test]
    fn depth_conversion() {
        assert_eq!(disparity_to_depth(100.0, 1000.0, 0.1).unwrap(), 1.0);
        assert_eq!(disparity_to_depth(200.0, 1000.0, 0.1).unwrap(), 0.5);
        assert!(disparity_to_depth(0.0, 1000.0, 0.1).is_err());
    }

    #[test]
    fn locate_examples() {
        let k = Intrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap();
        let r = DepthRange::default();
        let d = Distortion::none();
        assert_eq!(
            locate_3d(&Point2::new(320.0, 240.0), 1.0, &k, &d, &r).unwrap(),
            Point3::new(0.0, 0.0, 1.0)
        );
        assert_eq!(
            locate_3d(&Point2::new(920.0, 240.0), 1.0, &k, &d, &r).unwrap(),
            Point3::new(1.0, 0.0, 1.0)
        );
        assert!(matches!(
            locate_3d(&Point2::new(0.0, 0.0), 3.0, &k, &d, &r),
            Err(StereoError::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn locate_project_round_trip() {
        let k = Intrinsics::new(600.0, 610.0, 640.0, 400.0).unwrap();
        let d = Distortion {
            k1: -0.05,
            k2: 0.01,
            p1: 1e-3,
            p2: -5e-4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let px = Point2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..800.0));
            let z = rng.random_range(0.3..2.4);
            let p = locate_3d(&px, z, &k, &d, &DepthRange::default()).unwrap();
            assert!((project(&k, &d, &p).unwrap() - px).norm() < 1e-6);
        }
    }

    #[test]
    fn depth_map_drops_out_of_range() {
        let disp = DisparityMap {
            width: 3,
            height: 1,
            d_max: 200,
            data: vec![Some(24), None, Some(200)],
        };
        let dm = depth_map(&disp, 600.0, 0.04, &DepthRange::default());
        assert_eq!(dm.data, vec![Some(1.0), None, None]);
    }
}
