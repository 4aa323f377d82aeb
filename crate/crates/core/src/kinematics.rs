//! Denavit–Hartenberg model of the five-revolute-joint sorting arm.
//!
//! Link transforms use the modified (Craig) convention:
//!
//! ```text
//! T_i = RotX(α_{i-1}) · TransX(a_{i-1}) · RotZ(θ_i) · TransZ(d_i)
//! ```
//!
//! A [`DhRow`] for joint `i` stores `θ` offset and `d` of joint `i` together
//! with the `a` and `α` of the preceding link, so the rows of the `jetarm`
//! profile read `a = (0, 0, 0.1294, 0.1294, 0)` and
//! `α = (0°, −90°, 0°, 0°, −90°)`.
//!
//! The analytic inverse keeps the tool axis at a fixed pitch by coupling the
//! wrist joint to shoulder and elbow: `θ₄ = −(θ₂ + θ₃)`. Targets outside that
//! family are reported as orientation-infeasible.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{strip_comment, RigidTransform, RotationMatrix};

pub const JOINT_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} = {value:.6} rad outside limits [{lower:.6}, {upper:.6}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite joint value at joint {0}")]
    NonFinite(usize),
    #[error("solution set is empty")]
    EmptySolutionSet,
    #[error("chain structure not supported by the closed-form solver: {0}")]
    UnsupportedChain(String),
    #[error("DH config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("unknown DH profile `{0}`")]
    UnknownProfile(String),
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    /// Home offset added to the joint variable, radians.
    pub theta_offset: f64,
    /// Link offset along this joint's z axis, meters.
    pub d: f64,
    /// Length of the preceding link, meters.
    pub a: f64,
    /// Twist of the preceding link, radians.
    pub alpha: f64,
}

impl DhRow {
    pub const fn new(theta_offset: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self {
            theta_offset,
            d,
            a,
            alpha,
        }
    }

    fn is_finite(&self) -> bool {
        self.theta_offset.is_finite() && self.d.is_finite() && self.a.is_finite() && self.alpha.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: [f64; JOINT_COUNT],
    pub upper: [f64; JOINT_COUNT],
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            lower: [-PI; JOINT_COUNT],
            upper: [PI; JOINT_COUNT],
        }
    }
}

/// Five joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointVector(pub [f64; JOINT_COUNT]);

impl JointVector {
    pub fn zeros() -> Self {
        Self([0.0; JOINT_COUNT])
    }

    pub fn from_degrees(deg: [f64; JOINT_COUNT]) -> Self {
        Self(deg.map(f64::to_radians))
    }

    pub fn to_degrees(&self) -> [f64; JOINT_COUNT] {
        self.0.map(f64::to_degrees)
    }

    /// Largest per-joint difference, with differences wrapped to (−π, π].
    pub fn max_wrapped_distance(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| wrap_angle(a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhChain {
    rows: [DhRow; JOINT_COUNT],
    limits: JointLimits,
}

impl DhChain {
    pub fn new(rows: [DhRow; JOINT_COUNT]) -> Result<Self, KinematicsError> {
        if let Some(i) = rows.iter().position(|r| !r.is_finite()) {
            return Err(KinematicsError::Config {
                line: i + 1,
                message: "non-finite DH parameter".into(),
            });
        }
        Ok(Self {
            rows,
            limits: JointLimits::default(),
        })
    }

    /// The built-in JetArm profile.
    pub fn jetarm() -> Self {
        let l = 0.1294;
        Self {
            rows: [
                DhRow::new(0.0, 0.0, 0.0, 0.0),
                DhRow::new(0.0, 0.0, 0.0, -FRAC_PI_2),
                DhRow::new(0.0, 0.0, l, 0.0),
                DhRow::new(0.0, 0.0, l, 0.0),
                DhRow::new(0.0, 0.0, 0.0, -FRAC_PI_2),
            ],
            limits: JointLimits::default(),
        }
    }

    pub fn profile(name: &str) -> Result<Self, KinematicsError> {
        match name {
            "jetarm" => Ok(Self::jetarm()),
            other => Err(KinematicsError::UnknownProfile(other.to_string())),
        }
    }

    /// Parses a DH config: five data lines of
    /// `theta_offset_deg d_m a_m alpha_deg`, `#` comments allowed.
    pub fn from_config_str(text: &str) -> Result<Self, KinematicsError> {
        let mut rows = Vec::with_capacity(JOINT_COUNT);
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|_| KinematicsError::Config {
                        line: i + 1,
                        message: format!("cannot parse `{t}`"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.len() != 4 {
                return Err(KinematicsError::Config {
                    line: i + 1,
                    message: format!("expected 4 fields, found {}", values.len()),
                });
            }
            rows.push(DhRow::new(
                values[0].to_radians(),
                values[1],
                values[2],
                values[3].to_radians(),
            ));
        }
        let rows: [DhRow; JOINT_COUNT] = rows.try_into().map_err(|v: Vec<DhRow>| KinematicsError::Config {
            line: 0,
            message: format!("expected {JOINT_COUNT} rows, found {}", v.len()),
        })?;
        Self::new(rows)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::from("# theta_offset_deg d_m a_m alpha_deg\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} {} {} {}\n",
                r.theta_offset.to_degrees(),
                r.d,
                r.a,
                r.alpha.to_degrees()
            ));
        }
        s
    }

    pub fn with_limits(mut self, limits: JointLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn rows(&self) -> &[DhRow; JOINT_COUNT] {
        &self.rows
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<(), KinematicsError> {
        for (i, &v) in q.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(KinematicsError::NonFinite(i + 1));
            }
            let (lower, upper) = (self.limits.lower[i], self.limits.upper[i]);
            if v < lower || v > upper {
                return Err(KinematicsError::JointLimit {
                    joint: i + 1,
                    value: v,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Upper bound on the distance of the flange from the shoulder axis.
    pub fn reach(&self) -> f64 {
        self.rows[2].a + self.rows[3].a + self.rows[4].a + self.rows[4].d.abs()
    }

    fn effective(&self, q: &JointVector) -> [f64; JOINT_COUNT] {
        std::array::from_fn(|i| q.0[i] + self.rows[i].theta_offset)
    }

    /// Checks the twist pattern `(0, −90°, 0, 0, −90°)` the closed forms
    /// are written for.
    fn check_structure(&self) -> Result<(), KinematicsError> {
        let expected = [0.0, -FRAC_PI_2, 0.0, 0.0, -FRAC_PI_2];
        for (i, (row, want)) in self.rows.iter().zip(expected).enumerate() {
            if (row.alpha - want).abs() > 1e-12 {
                return Err(KinematicsError::UnsupportedChain(format!(
                    "row {} twist {:.6}° (expected {:.0}°)",
                    i + 1,
                    row.alpha.to_degrees(),
                    want.to_degrees()
                )));
            }
        }
        Ok(())
    }
}

/// Link transform for one row at joint value `theta` (offset added here).
pub fn dh_link_transform(row: &DhRow, theta: f64) -> RigidTransform {
    let (st, ct) = (theta + row.theta_offset).sin_cos();
    let (sa, ca) = row.alpha.sin_cos();
    let r = nalgebra::Matrix3::new(ct, -st, 0.0, st * ca, ct * ca, -sa, st * sa, ct * sa, ca);
    let t = Vector3::new(row.a, -sa * row.d, ca * row.d);
    RigidTransform::new(RotationMatrix::from_matrix_unchecked(r), t)
}

/// Flange pose in the base frame: the product of the five link transforms.
pub fn forward_kinematics(chain: &DhChain, q: &JointVector) -> Result<RigidTransform, KinematicsError> {
    chain.check_limits(q)?;
    Ok(chain_product(chain, q))
}

fn chain_product(chain: &DhChain, q: &JointVector) -> RigidTransform {
    chain
        .rows
        .iter()
        .zip(q.0.iter())
        .fold(RigidTransform::identity(), |acc, (row, &theta)| {
            acc.compose(&dh_link_transform(row, theta))
        })
}

/// Flange position from the expanded closed form.
///
/// With `r = a₁ + c₂a₂ + c₂₃a₃ + c₂₃₄a₄ − s₂₃₄d₅` and `h = d₂ + d₃ + d₄`:
///
/// ```text
/// p_x = a₀ + c₁r − s₁h
/// p_y = s₁r + c₁h
/// p_z = d₁ − (s₂a₂ + s₂₃a₃ + s₂₃₄a₄ + c₂₃₄d₅)
/// ```
///
/// Under `θ₄ = −(θ₂ + θ₃)` this collapses to the familiar
/// `p_x = c₁(c₂₃a₃ + c₂a₂ + a₄)` shape.
pub fn closed_form_position(chain: &DhChain, q: &JointVector) -> Result<Vector3<f64>, KinematicsError> {
    chain.check_structure()?;
    chain.check_limits(q)?;
    let t = chain.effective(q);
    let rw = &chain.rows;
    let (a0, a1, a2, a3, a4) = (rw[0].a, rw[1].a, rw[2].a, rw[3].a, rw[4].a);
    let (d1, h, d5) = (rw[0].d, rw[1].d + rw[2].d + rw[3].d, rw[4].d);
    let (s1, c1) = t[0].sin_cos();
    let (s2, c2) = t[1].sin_cos();
    let (s23, c23) = (t[1] + t[2]).sin_cos();
    let (s234, c234) = (t[1] + t[2] + t[3]).sin_cos();
    let r = a1 + c2 * a2 + c23 * a3 + c234 * a4 - s234 * d5;
    Ok(Vector3::new(
        a0 + c1 * r - s1 * h,
        s1 * r + c1 * h,
        d1 - (s2 * a2 + s23 * a3 + s234 * a4 + c234 * d5),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElbowBranch {
    /// `θ₃ = +arccos(·)`.
    Positive,
    /// `θ₃ = −arccos(·)`.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseBranch {
    /// Arm reaches toward the target.
    Front,
    /// Base turned by π, arm folded back over the shoulder.
    Back,
    /// Target on the base axis; `θ₁` taken from the reference.
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unreachable {
    OutOfReach,
    OrientationInfeasible,
    JointLimits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    pub elbow: ElbowBranch,
    pub base: BaseBranch,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IkSolutionSet {
    pub solutions: Vec<IkSolution>,
    /// Set when `solutions` is empty.
    pub reason: Option<Unreachable>,
}

impl IkSolutionSet {
    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn contains(&self, q: &JointVector, tol: f64) -> bool {
        self.solutions.iter().any(|s| s.joints.max_wrapped_distance(q) <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    /// Used for `θ₁` when the target lies on the base axis.
    pub reference: Option<JointVector>,
    /// Acceptance bound on the FK re-check, meters and radians.
    pub tolerance: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            reference: None,
            tolerance: 1e-9,
        }
    }
}

pub fn inverse_kinematics(chain: &DhChain, target: &RigidTransform) -> Result<IkSolutionSet, KinematicsError> {
    inverse_kinematics_with(chain, target, &IkOptions::default())
}

/// All analytic solutions of the wrist-coupled family reaching `target`.
///
/// Every candidate is re-checked through [`forward_kinematics`]; anything
/// that misses by more than `opts.tolerance` is dropped.
pub fn inverse_kinematics_with(
    chain: &DhChain,
    target: &RigidTransform,
    opts: &IkOptions,
) -> Result<IkSolutionSet, KinematicsError> {
    chain.check_structure()?;
    let rw = &chain.rows;
    let (a2, a3) = (rw[2].a, rw[3].a);
    if a2 <= 0.0 || a3 <= 0.0 {
        return Err(KinematicsError::UnsupportedChain(
            "upper-arm and forearm lengths must be positive".into(),
        ));
    }
    let (a0, a1, a4) = (rw[0].a, rw[1].a, rw[4].a);
    let (d1, h, d5) = (rw[0].d, rw[1].d + rw[2].d + rw[3].d, rw[4].d);
    let offsets: [f64; JOINT_COUNT] = std::array::from_fn(|i| rw[i].theta_offset);
    // Effective wrist pitch sum fixed by the coupling θ₄ = −(θ₂ + θ₃).
    let phi = offsets[1] + offsets[2] + offsets[3];
    let (sphi, cphi) = phi.sin_cos();

    let p = target.translation();
    let (x, y) = (p.x - a0, p.y);
    let rho2 = x * x + y * y;

    // (effective θ₁, planar reach r, branch)
    let mut bases: Vec<(f64, f64, BaseBranch)> = Vec::new();
    if rho2.sqrt() < 1e-12 && h.abs() < 1e-12 {
        let q1 = opts.reference.map_or(0.0, |r| r.0[0]);
        bases.push((q1 + offsets[0], 0.0, BaseBranch::Singular));
    } else {
        let disc = rho2 - h * h;
        if disc < -1e-15 {
            return Ok(IkSolutionSet {
                solutions: vec![],
                reason: Some(Unreachable::OutOfReach),
            });
        }
        let r = disc.max(0.0).sqrt();
        let heading = y.atan2(x);
        bases.push((heading - h.atan2(r), r, BaseBranch::Front));
        if r > 0.0 {
            bases.push((heading - h.atan2(-r), -r, BaseBranch::Back));
        }
    }

    let mut any_position = false;
    let mut any_orientation = false;
    let mut solutions: Vec<IkSolution> = Vec::new();
    let mut limit_rejects = 0usize;

    for (t1, r, base) in bases {
        let u = r - a1 - cphi * a4 + sphi * d5;
        let w = d1 - p.z - sphi * a4 - cphi * d5;
        let cos3 = (u * u + w * w - a2 * a2 - a3 * a3) / (2.0 * a2 * a3);
        if cos3.abs() > 1.0 + 1e-12 {
            continue;
        }
        let mag3 = cos3.clamp(-1.0, 1.0).acos();
        let elbows: &[(f64, ElbowBranch)] = if mag3 == 0.0 || mag3 == PI {
            &[(1.0, ElbowBranch::Positive)]
        } else {
            &[(1.0, ElbowBranch::Positive), (-1.0, ElbowBranch::Negative)]
        };
        for &(sign, elbow) in elbows {
            let t3 = sign * mag3;
            let t2 = w.atan2(u) - (a3 * t3.sin()).atan2(a2 + a3 * t3.cos());
            let t4 = phi - t2 - t3;

            // R = Rz(t1) · W · Rz(t5) with W = RotX(−90°)·Rz(φ)·RotX(−90°).
            let wrist = RotationMatrix::rot_x(-FRAC_PI_2)
                .compose(&RotationMatrix::rot_z(phi))
                .compose(&RotationMatrix::rot_x(-FRAC_PI_2));
            let m = wrist.transpose().matrix() * RotationMatrix::rot_z(-t1).matrix() * target.rotation().matrix();
            let t5 = m[(1, 0)].atan2(m[(0, 0)]);

            let effective = [t1, t2, t3, t4, t5];
            let mut q = [0.0; JOINT_COUNT];
            for i in 0..JOINT_COUNT {
                q[i] = wrap_angle(effective[i] - offsets[i]);
            }
            // t₄ − o₄ = −((t₂ − o₂) + (t₃ − o₃)); taken from the wrapped
            // values so the coupling holds to rounding.
            q[3] = wrap_angle(-(q[1] + q[2]));
            let q = JointVector(q);

            let fk = chain_product(chain, &q);
            let (dp, dr) = fk.distance_to(target);
            if dp > opts.tolerance {
                continue;
            }
            any_position = true;
            if dr > opts.tolerance {
                continue;
            }
            any_orientation = true;
            if chain.check_limits(&q).is_err() {
                limit_rejects += 1;
                continue;
            }
            if !solutions.iter().any(|s| s.joints.max_wrapped_distance(&q) <= 1e-9) {
                solutions.push(IkSolution { joints: q, elbow, base });
            }
        }
    }

    let reason = if !solutions.is_empty() {
        None
    } else if !any_position {
        Some(Unreachable::OutOfReach)
    } else if !any_orientation {
        Some(Unreachable::OrientationInfeasible)
    } else {
        debug_assert!(limit_rejects > 0);
        Some(Unreachable::JointLimits)
    };
    Ok(IkSolutionSet { solutions, reason })
}

/// Checks `θ₄ = −(θ₂ + θ₃)` as an angle identity (modulo 2π).
pub fn wrist_coupling_residual(q: &JointVector) -> f64 {
    wrap_angle(q.0[3] + q.0[1] + q.0[2]).abs()
}

/// Member of `solutions` closest to `reference` in weighted squared joint
/// distance (differences wrapped). Ties keep the earlier member.
pub fn select_solution(
    solutions: &IkSolutionSet,
    reference: &JointVector,
    weights: Option<&[f64; JOINT_COUNT]>,
) -> Result<JointVector, KinematicsError> {
    let w = weights.copied().unwrap_or([1.0; JOINT_COUNT]);
    solutions
        .solutions
        .iter()
        .map(|s| {
            let cost: f64 = (0..JOINT_COUNT)
                .map(|i| w[i] * wrap_angle(s.joints.0[i] - reference.0[i]).powi(2))
                .sum();
            (cost, s.joints)
        })
        .fold(None::<(f64, JointVector)>, |best, cand| match best {
            Some(b) if b.0 <= cand.0 => Some(b),
            _ => Some(cand),
        })
        .map(|(_, q)| q)
        .ok_or(KinematicsError::EmptySolutionSet)
}
