//! Particle sizing from axis-aligned detection boxes and grade assignment.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizingError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("focal length must be positive, got {0}")]
    NonPositiveFocal(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("grade bands must be finite and strictly increasing: {0:?}")]
    InvalidBands([f64; 3]),
}

/// Vertical extent `a`, horizontal extent `b` and diagonal `c` of a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MerDimensions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MerDimensions {
    /// Same rectangle in different units.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a: self.a * factor,
            b: self.b * factor,
            c: self.c * factor,
        }
    }
}

/// Rectangle dimensions from two opposite corners `(x, y)`.
pub fn mer_dimensions(corner1: (f64, f64), corner2: (f64, f64)) -> MerDimensions {
    let a = (corner1.1 - corner2.1).abs();
    let b = (corner1.0 - corner2.0).abs();
    MerDimensions { a, b, c: a.hypot(b) }
}

/// Fronto-parallel pinhole scaling: `length_px · depth / fx`.
pub fn pixel_to_metric(length_px: f64, depth: f64, fx: f64) -> Result<f64, SizingError> {
    if !length_px.is_finite() || !depth.is_finite() || !fx.is_finite() {
        return Err(SizingError::NonFinite);
    }
    if depth <= 0.0 {
        return Err(SizingError::NonPositiveDepth(depth));
    }
    if fx <= 0.0 {
        return Err(SizingError::NonPositiveFocal(fx));
    }
    Ok(length_px * depth / fx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Grade {
    Rejected,
    One,
    Two,
    Three,
}

impl Grade {
    pub fn number(self) -> Option<u8> {
        match self {
            Grade::Rejected => None,
            Grade::One => Some(1),
            Grade::Two => Some(2),
            Grade::Three => Some(3),
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Grade::One),
            2 => Some(Grade::Two),
            3 => Some(Grade::Three),
            _ => None,
        }
    }

    pub const ACCEPTED: [Grade; 3] = [Grade::One, Grade::Two, Grade::Three];
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("rejected"),
        }
    }
}

/// Half-open grade bands in centimeters: `[lower[0], lower[1])` is grade 1,
/// `[lower[1], lower[2])` grade 2, `[lower[2], ∞)` grade 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradeBands {
    pub lower: [f64; 3],
    /// Diagonals above this are flagged, not rejected.
    pub sanity_max: f64,
}

impl Default for GradeBands {
    fn default() -> Self {
        Self {
            lower: [1.0, 2.0, 3.0],
            sanity_max: 4.0,
        }
    }
}

impl GradeBands {
    pub fn new(lower: [f64; 3], sanity_max: f64) -> Result<Self, SizingError> {
        let ok = lower.iter().all(|v| v.is_finite()) && lower[0] < lower[1] && lower[1] < lower[2];
        if !ok || !(sanity_max >= lower[2]) {
            return Err(SizingError::InvalidBands(lower));
        }
        Ok(Self { lower, sanity_max })
    }

    pub fn grade(&self, diagonal_cm: f64) -> Grade {
        if diagonal_cm >= self.lower[2] {
            Grade::Three
        } else if diagonal_cm >= self.lower[1] {
            Grade::Two
        } else if diagonal_cm >= self.lower[0] {
            Grade::One
        } else {
            Grade::Rejected
        }
    }

    pub fn assess(&self, diagonal_cm: f64) -> GradeAssessment {
        GradeAssessment {
            grade: self.grade(diagonal_cm),
            oversize: diagonal_cm > self.sanity_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradeAssessment {
    pub grade: Grade,
    pub oversize: bool,
}

/// Grade under the default bands.
pub fn grade(diagonal_cm: f64) -> Grade {
    GradeBands::default().grade(diagonal_cm)
}

/// Metric box size and grade for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeEstimate {
    /// Meters.
    pub dimensions: MerDimensions,
    pub assessment: GradeAssessment,
}

/// Sizes a pixel box at the given depth and grades its diagonal.
pub fn size_box(
    corner1: (f64, f64),
    corner2: (f64, f64),
    depth: f64,
    fx: f64,
    bands: &GradeBands,
) -> Result<SizeEstimate, SizingError> {
    let px = mer_dimensions(corner1, corner2);
    let scale = pixel_to_metric(1.0, depth, fx)?;
    let dimensions = px.scaled(scale);
    Ok(SizeEstimate {
        dimensions,
        assessment: bands.assess(dimensions.c * 100.0),
    })
}
