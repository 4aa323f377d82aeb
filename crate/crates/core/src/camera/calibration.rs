//! Planar-target calibration: homography-based intrinsics initialization
//! followed by Levenberg–Marquardt refinement of intrinsics, distortion and
//! per-view poses.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{project, CameraError, Distortion, Intrinsics};
use crate::geometry::{Point3, RigidTransform, RotationMatrix};

/// Acceptance gate on RMS reprojection error, pixels.
pub const RMS_GATE_PX: f64 = 1.5;

const MIN_VIEWS: usize = 3;
const INTRINSIC_PARAMS: usize = 8;
const POSE_PARAMS: usize = 6;

/// Chessboard described by its inner-corner grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarTarget {
    pub rows: usize,
    pub cols: usize,
    /// Meters.
    pub square_size: f64,
}

impl Default for PlanarTarget {
    /// 9×6 inner corners at 27 mm pitch.
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 9,
            square_size: 0.027,
        }
    }
}

impl PlanarTarget {
    pub fn new(rows: usize, cols: usize, square_size: f64) -> Result<Self, CameraError> {
        if rows < 2 || cols < 2 {
            return Err(CameraError::InvalidTarget(format!("{cols}x{rows} grid is too small")));
        }
        if !(square_size > 0.0) || !square_size.is_finite() {
            return Err(CameraError::InvalidTarget(format!("square size {square_size}")));
        }
        Ok(Self {
            rows,
            cols,
            square_size,
        })
    }

    /// Board-frame position of inner corner `(i, j)`: column `i`, row `j`.
    pub fn corner(&self, i: usize, j: usize) -> Point3 {
        Point3::new(i as f64 * self.square_size, j as f64 * self.square_size, 0.0)
    }

    /// All corners, row-major.
    pub fn corners(&self) -> Vec<Point3> {
        (0..self.rows)
            .flat_map(|j| (0..self.cols).map(move |i| (i, j)))
            .map(|(i, j)| self.corner(i, j))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Board-frame point, `z = 0`.
    pub board: Point3,
    pub pixel: Point2<f64>,
}

pub type View = Vec<Correspondence>;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    /// Board pose in the camera frame, one per view.
    pub extrinsics: Vec<RigidTransform>,
    pub rms_reprojection: f64,
}

impl CalibrationResult {
    pub fn passes_gate(&self, gate_px: f64) -> bool {
        self.rms_reprojection <= gate_px
    }
}

/// Projects every board corner through `poses` (board in camera frame).
///
/// With `noise = Some((sigma_px, seed))` each pixel gets independent
/// Gaussian noise from a stream seeded by `seed`.
pub fn synthesize_target_views(
    target: &PlanarTarget,
    poses: &[RigidTransform],
    intr: &Intrinsics,
    dist: &Distortion,
    noise: Option<(f64, u64)>,
) -> Result<Vec<View>, CameraError> {
    let mut rng = noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let normal = noise.map(|(sigma, _)| Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite"));
    let corners = target.corners();
    poses
        .iter()
        .enumerate()
        .map(|(v, pose)| {
            corners
                .iter()
                .map(|board| {
                    let p_cam = pose.transform_point(board);
                    if p_cam.z <= 0.0 {
                        return Err(CameraError::BoardBehindCamera(v));
                    }
                    let mut pixel = project(intr, dist, &p_cam)?;
                    if let (Some(rng), Some(normal)) = (rng.as_mut(), normal.as_ref()) {
                        pixel.x += normal.sample(rng);
                        pixel.y += normal.sample(rng);
                    }
                    Ok(Correspondence { board: *board, pixel })
                })
                .collect()
        })
        .collect()
}

/// RMS over all points of the pixel residual norm.
pub fn reprojection_error(result: &CalibrationResult, views: &[View]) -> Result<f64, CameraError> {
    if views.len() != result.extrinsics.len() {
        return Err(CameraError::ViewCountMismatch {
            expected: result.extrinsics.len(),
            got: views.len(),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (view, pose) in views.iter().zip(&result.extrinsics) {
        for c in view {
            let p = pose.transform_point(&c.board);
            let px = project(&result.intrinsics, &result.distortion, &p)?;
            sum += (px - c.pixel).norm_squared();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub max_iterations: usize,
    /// Refine k1, k2, p1, p2; otherwise they stay at zero.
    pub estimate_distortion: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            estimate_distortion: true,
        }
    }
}

pub fn calibrate_planar(views: &[View]) -> Result<CalibrationResult, CameraError> {
    calibrate_planar_with(views, &CalibrationOptions::default())
}

/// Zhang-style calibration from at least three planar views.
///
/// Skew is estimated by the closed-form step but held at zero during
/// refinement.
pub fn calibrate_planar_with(views: &[View], opts: &CalibrationOptions) -> Result<CalibrationResult, CameraError> {
    if views.len() < MIN_VIEWS {
        return Err(CameraError::InsufficientViews {
            needed: MIN_VIEWS,
            got: views.len(),
        });
    }
    for (i, v) in views.iter().enumerate() {
        if v.len() < 4 {
            return Err(CameraError::Degenerate(format!(
                "view {i} has {} points (< 4)",
                v.len()
            )));
        }
        if v.iter().any(|c| c.board.z != 0.0) {
            return Err(CameraError::Degenerate(format!("view {i} has non-planar board points")));
        }
    }

    let homographies = views
        .iter()
        .map(|v| {
            let board: Vec<Point2<f64>> = v.iter().map(|c| Point2::new(c.board.x, c.board.y)).collect();
            let pixels: Vec<Point2<f64>> = v.iter().map(|c| c.pixel).collect();
            estimate_homography(&board, &pixels)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let all_pixels: Vec<Point2<f64>> = views.iter().flatten().map(|c| c.pixel).collect();
    let k0 = intrinsics_from_homographies(&homographies, &all_pixels)?;
    let mut intrinsics = Intrinsics {
        fx: k0[(0, 0)],
        fy: k0[(1, 1)],
        cx: k0[(0, 2)],
        cy: k0[(1, 2)],
        skew: 0.0,
    };
    intrinsics
        .validate()
        .map_err(|e| CameraError::Degenerate(e.to_string()))?;

    let k_inv = intrinsics
        .matrix()
        .try_inverse()
        .expect("upper triangular with positive diagonal");
    let extrinsics: Vec<RigidTransform> = homographies.iter().map(|h| pose_from_homography(&k_inv, h)).collect();

    let mut params = DVector::zeros(INTRINSIC_PARAMS + POSE_PARAMS * views.len());
    params[0] = intrinsics.fx;
    params[1] = intrinsics.fy;
    params[2] = intrinsics.cx;
    params[3] = intrinsics.cy;
    for (v, pose) in extrinsics.iter().enumerate() {
        let base = INTRINSIC_PARAMS + POSE_PARAMS * v;
        let rv = pose.rotation().rotation_vector();
        let t = pose.translation();
        for k in 0..3 {
            params[base + k] = rv[k];
            params[base + 3 + k] = t[k];
        }
    }

    let problem = Problem {
        views,
        free_distortion: opts.estimate_distortion,
    };
    let params = problem.levenberg_marquardt(params, opts.max_iterations);

    intrinsics = Intrinsics {
        fx: params[0],
        fy: params[1],
        cx: params[2],
        cy: params[3],
        skew: 0.0,
    };
    intrinsics
        .validate()
        .map_err(|e| CameraError::Degenerate(format!("refinement diverged: {e}")))?;
    let distortion = Distortion {
        k1: params[4],
        k2: params[5],
        p1: params[6],
        p2: params[7],
    };
    let extrinsics = (0..views.len()).map(|v| pose_from_params(&params, v)).collect();
    let mut result = CalibrationResult {
        intrinsics,
        distortion,
        extrinsics,
        rms_reprojection: 0.0,
    };
    result.rms_reprojection = reprojection_error(&result, views)?;
    Ok(result)
}

fn pose_from_params(params: &DVector<f64>, view: usize) -> RigidTransform {
    let base = INTRINSIC_PARAMS + POSE_PARAMS * view;
    let rv = Vector3::new(params[base], params[base + 1], params[base + 2]);
    let t = Vector3::new(params[base + 3], params[base + 4], params[base + 5]);
    RigidTransform::new(RotationMatrix::from_rotation_vector(&rv), t)
}

/// Similarity that centers points at the origin with mean distance √2.
fn normalizing_transform(points: &[Point2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p.x, p.y, 0.0))
        / n;
    let spread = points
        .iter()
        .map(|p| ((p.x - mean.x).powi(2) + (p.y - mean.y).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if spread > 0.0 {
        std::f64::consts::SQRT_2 / spread
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Right singular vector of the smallest singular value, plus the singular
/// values in descending order.
fn null_vector(a: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    // Square up so the full right basis is always available.
    let ata = a.transpose() * a;
    let svd = ata.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let last = *order.last().expect("non-empty");
    let sv = order.iter().map(|&i| svd.singular_values[i].max(0.0).sqrt()).collect();
    (v_t.row(last).transpose().into_owned(), sv)
}

/// Normalized DLT homography mapping board-plane points to pixels.
pub fn estimate_homography(board: &[Point2<f64>], pixels: &[Point2<f64>]) -> Result<Matrix3<f64>, CameraError> {
    if board.len() != pixels.len() || board.len() < 4 {
        return Err(CameraError::Degenerate("homography needs >= 4 matched points".into()));
    }
    let tb = normalizing_transform(board);
    let tp = normalizing_transform(pixels);
    let mut a = DMatrix::zeros(2 * board.len(), 9);
    for (k, (b, p)) in board.iter().zip(pixels).enumerate() {
        let b = apply_h(&tb, b);
        let p = apply_h(&tp, p);
        let (x, y, u, v) = (b.x, b.y, p.x, p.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let (h, sv) = null_vector(&a);
    if sv.len() < 9 || sv[7] <= 1e-12 * sv[0] {
        return Err(CameraError::Degenerate("collinear board points".into()));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let tp_inv = tp.try_inverse().expect("similarity is invertible");
    let mut out = tp_inv * hn * tb;
    let scale = out[(2, 2)];
    if scale.abs() > 1e-300 {
        out /= scale;
    }
    Ok(out)
}

fn zhang_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Closed-form camera matrix from the image of the absolute conic.
fn intrinsics_from_homographies(hs: &[Matrix3<f64>], pixels: &[Point2<f64>]) -> Result<Matrix3<f64>, CameraError> {
    let norm = normalizing_transform(pixels);
    let mut v = DMatrix::zeros(2 * hs.len(), 6);
    for (k, h) in hs.iter().enumerate() {
        let mut hn = norm * h;
        hn /= hn.norm();
        let v12 = zhang_row(&hn, 0, 1);
        let v11 = zhang_row(&hn, 0, 0);
        let v22 = zhang_row(&hn, 1, 1);
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    let (b, sv) = null_vector(&v);
    if sv[4] <= 1e-9 * sv[0] {
        return Err(CameraError::Degenerate(format!(
            "board orientations do not constrain the intrinsics (singular value ratio {:.2e})",
            sv[4] / sv[0]
        )));
    }
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);
    let den = b11 * b22 - b12 * b12;
    let v0 = (b12 * b13 - b11 * b23) / den;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    let alpha2 = lambda / b11;
    let beta2 = lambda * b11 / den;
    if !(alpha2 > 0.0 && beta2 > 0.0) {
        return Err(CameraError::Degenerate(
            "absolute conic is not positive definite".into(),
        ));
    }
    let alpha = alpha2.sqrt();
    let beta = beta2.sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
    let k_norm = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let mut k = norm.try_inverse().expect("similarity is invertible") * k_norm;
    k /= k[(2, 2)];
    Ok(k)
}

fn pose_from_homography(k_inv: &Matrix3<f64>, h: &Matrix3<f64>) -> RigidTransform {
    let a = k_inv * h;
    let mut lambda = 1.0 / a.column(0).norm();
    if a[(2, 2)] * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = a.column(0) * lambda;
    let r2 = a.column(1) * lambda;
    let r3 = r1.cross(&r2);
    let t = a.column(2) * lambda;
    let r = Matrix3::from_columns(&[r1, r2, r3]);
    RigidTransform::new(RotationMatrix::nearest(&r), t.into_owned())
}

struct Problem<'a> {
    views: &'a [View],
    free_distortion: bool,
}

impl Problem<'_> {
    fn view_residuals(&self, intr: &SVector<f64, 8>, pose: &SVector<f64, 6>, view: &View, out: &mut [f64]) {
        let k = Intrinsics {
            fx: intr[0],
            fy: intr[1],
            cx: intr[2],
            cy: intr[3],
            skew: 0.0,
        };
        let d = Distortion {
            k1: intr[4],
            k2: intr[5],
            p1: intr[6],
            p2: intr[7],
        };
        let r = RotationMatrix::from_rotation_vector(&Vector3::new(pose[0], pose[1], pose[2]));
        let t = Vector3::new(pose[3], pose[4], pose[5]);
        for (n, c) in view.iter().enumerate() {
            let p = Point3::from(r.apply(&c.board.coords) + t);
            let (ex, ey) = match project(&k, &d, &p) {
                Ok(px) => (px.x - c.pixel.x, px.y - c.pixel.y),
                Err(_) => (1e6, 1e6),
            };
            out[2 * n] = ex;
            out[2 * n + 1] = ey;
        }
    }

    fn split(&self, params: &DVector<f64>, v: usize) -> (SVector<f64, 8>, SVector<f64, 6>) {
        let intr = SVector::<f64, 8>::from_iterator(params.rows(0, INTRINSIC_PARAMS).iter().copied());
        let base = INTRINSIC_PARAMS + POSE_PARAMS * v;
        let pose = SVector::<f64, 6>::from_iterator(params.rows(base, POSE_PARAMS).iter().copied());
        (intr, pose)
    }

    fn cost(&self, params: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (v, view) in self.views.iter().enumerate() {
            let (intr, pose) = self.split(params, v);
            let mut r = vec![0.0; 2 * view.len()];
            self.view_residuals(&intr, &pose, view, &mut r);
            total += r.iter().map(|e| e * e).sum::<f64>();
        }
        total
    }

    /// Normal equations `JᵀJ`, `Jᵀr` with a central-difference Jacobian.
    fn normal_equations(&self, params: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = params.len();
        let mut jtj = DMatrix::zeros(n, n);
        let mut jtr = DVector::zeros(n);
        let local = INTRINSIC_PARAMS + POSE_PARAMS;
        for (v, view) in self.views.iter().enumerate() {
            let (intr, pose) = self.split(params, v);
            let m = 2 * view.len();
            let mut r0 = vec![0.0; m];
            self.view_residuals(&intr, &pose, view, &mut r0);
            let mut jac = DMatrix::zeros(m, local);
            let mut plus = vec![0.0; m];
            let mut minus = vec![0.0; m];
            for p in 0..local {
                if !self.free_distortion && (4..8).contains(&p) {
                    continue;
                }
                let value = if p < INTRINSIC_PARAMS {
                    intr[p]
                } else {
                    pose[p - INTRINSIC_PARAMS]
                };
                let h = 1e-6 * value.abs().max(1e-2);
                let (mut ip, mut pp) = (intr, pose);
                let (mut im, mut pm) = (intr, pose);
                if p < INTRINSIC_PARAMS {
                    ip[p] += h;
                    im[p] -= h;
                } else {
                    pp[p - INTRINSIC_PARAMS] += h;
                    pm[p - INTRINSIC_PARAMS] -= h;
                }
                self.view_residuals(&ip, &pp, view, &mut plus);
                self.view_residuals(&im, &pm, view, &mut minus);
                for row in 0..m {
                    jac[(row, p)] = (plus[row] - minus[row]) / (2.0 * h);
                }
            }
            let r = DVector::from_vec(r0);
            let jt_j = jac.transpose() * &jac;
            let jt_r = jac.transpose() * r;
            let global = |l: usize| {
                if l < INTRINSIC_PARAMS {
                    l
                } else {
                    INTRINSIC_PARAMS + POSE_PARAMS * v + (l - INTRINSIC_PARAMS)
                }
            };
            for a in 0..local {
                jtr[global(a)] += jt_r[a];
                for b in 0..local {
                    jtj[(global(a), global(b))] += jt_j[(a, b)];
                }
            }
        }
        (jtj, jtr)
    }

    fn levenberg_marquardt(&self, mut params: DVector<f64>, max_iterations: usize) -> DVector<f64> {
        let n = params.len();
        let mut cost = self.cost(&params);
        let mut mu = 1e-3;
        for _ in 0..max_iterations {
            let (jtj, jtr) = self.normal_equations(&params);
            let mut improved = false;
            while mu < 1e16 {
                let mut a = jtj.clone();
                for i in 0..n {
                    let d = jtj[(i, i)];
                    a[(i, i)] = if d == 0.0 { 1.0 } else { d * (1.0 + mu) };
                }
                let Some(chol) = a.cholesky() else {
                    mu *= 10.0;
                    continue;
                };
                let delta = chol.solve(&(-&jtr));
                let candidate = &params + &delta;
                let new_cost = self.cost(&candidate);
                if new_cost.is_finite() && new_cost < cost {
                    let step = delta.norm() / (params.norm() + 1e-12);
                    let gain = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    params = candidate;
                    cost = new_cost;
                    mu = (mu / 10.0).max(1e-15);
                    improved = true;
                    if step < 1e-15 || gain < 1e-14 {
                        return params;
                    }
                    break;
                }
                mu *= 10.0;
            }
            if !improved || cost == 0.0 {
                break;
            }
        }
        params
    }
}
