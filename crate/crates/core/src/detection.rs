//! Ground-truth detector: turns projected aggregate silhouettes into
//! detections with seeded misclassification and box noise.

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{ClassMap, Lithology};
use crate::sizing::Grade;

pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_BOX_NOISE_PX: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("confusion row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("confusion entry ({row}, {col}) = {value} is negative or non-finite")]
    Entry { row: usize, col: usize, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("class map has no entry for {0}")]
    MissingClass(String),
    #[error("box noise must be finite and non-negative, got {0}")]
    Noise(f64),
}

/// Axis-aligned pixel box, `x1 ≤ x2`, `y1 ≤ y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Tight bound of a point set; `None` when empty.
    pub fn bounding(points: &[Point2<f64>]) -> Option<Self> {
        let first = points.first()?;
        let init = Self {
            x1: first.x,
            y1: first.y,
            x2: first.x,
            y2: first.y,
        };
        Some(points.iter().fold(init, |b, p| Self {
            x1: b.x1.min(p.x),
            y1: b.y1.min(p.y),
            x2: b.x2.max(p.x),
            y2: b.y2.max(p.y),
        }))
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    /// Intersection with `[0, width] × [0, height]`; `None` if disjoint.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let b = Self {
            x1: self.x1.max(0.0),
            y1: self.y1.max(0.0),
            x2: self.x2.min(width),
            y2: self.y2.min(height),
        };
        (b.x1 <= b.x2 && b.y1 <= b.y2).then_some(b)
    }
}

/// Projected outline of one aggregate and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    /// Caller's identifier, carried through to the detection.
    pub source: usize,
    pub lithology: Lithology,
    pub grade: Grade,
    pub points: Vec<Point2<f64>>,
    /// Projection of the aggregate's centroid.
    pub centroid: Point2<f64>,
}

/// Everything the detector sees in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub width: f64,
    pub height: f64,
    pub silhouettes: Vec<Silhouette>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_index: usize,
    pub lithology: Lithology,
    pub grade: Grade,
    pub confidence: f64,
    pub bbox: BoundingBox,
    /// Reported object center in pixels.
    pub center: Point2<f64>,
    pub source: usize,
}

/// Row-stochastic misclassification model; rows are true classes, columns
/// reported classes, both in [`Lithology::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionSpec {
    lithology: [[f64; 4]; 4],
    grade: Option<[[f64; 3]; 3]>,
}

fn check_rows<const N: usize>(m: &[[f64; N]; N]) -> Result<(), DetectionError> {
    for (row, r) in m.iter().enumerate() {
        for (col, &value) in r.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(DetectionError::Entry { row, col, value });
            }
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(DetectionError::RowSum { row, sum });
        }
    }
    Ok(())
}

fn identity<const N: usize>() -> [[f64; N]; N] {
    let mut m = [[0.0; N]; N];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Draws an index from `weights` with one uniform sample.
fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl Default for ConfusionSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl ConfusionSpec {
    pub fn identity() -> Self {
        Self {
            lithology: identity(),
            grade: None,
        }
    }

    pub fn new(lithology: [[f64; 4]; 4], grade: Option<[[f64; 3]; 3]>) -> Result<Self, DetectionError> {
        check_rows(&lithology)?;
        if let Some(g) = &grade {
            check_rows(g)?;
        }
        Ok(Self { lithology, grade })
    }

    /// Identity except that `from` is reported as `to` with probability `p`.
    pub fn single_confusion(from: Lithology, to: Lithology, p: f64) -> Result<Self, DetectionError> {
        let mut m = identity::<4>();
        m[from.index()][from.index()] -= p;
        m[from.index()][to.index()] += p;
        Self::new(m, None)
    }

    pub fn lithology_matrix(&self) -> &[[f64; 4]; 4] {
        &self.lithology
    }

    pub fn grade_matrix(&self) -> Option<&[[f64; 3]; 3]> {
        self.grade.as_ref()
    }

    /// Probability of reporting `(lithology, grade)` for the given truth.
    pub fn probability(&self, truth: (Lithology, Grade), reported: (Lithology, Grade)) -> f64 {
        let pl = self.lithology[truth.0.index()][reported.0.index()];
        let pg = match (&self.grade, truth.1.number(), reported.1.number()) {
            (Some(g), Some(t), Some(r)) => g[t as usize - 1][r as usize - 1],
            (None, _, _) => f64::from(u8::from(truth.1 == reported.1)),
            _ => 0.0,
        };
        pl * pg
    }

    /// Matrix file: optional `codes` header naming the row/column order,
    /// four lithology rows, then optionally `grade` and three grade rows.
    pub fn parse(text: &str) -> Result<Self, DetectionError> {
        let mut order = Lithology::ALL;
        let mut lith_rows: Vec<Vec<f64>> = Vec::new();
        let mut grade_rows: Vec<Vec<f64>> = Vec::new();
        let mut in_grade = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| DetectionError::Parse { line: i + 1, message };
            let mut tokens = line.split_whitespace().peekable();
            match tokens.peek().copied() {
                Some("codes") => {
                    tokens.next();
                    let codes: Vec<&str> = tokens.collect();
                    if codes.len() != 4 {
                        return Err(err("codes header needs 4 lithology codes".into()));
                    }
                    for (k, c) in codes.iter().enumerate() {
                        order[k] = Lithology::from_code(c).map_err(|e| err(e.to_string()))?;
                    }
                    let mut seen = order.to_vec();
                    seen.sort();
                    seen.dedup();
                    if seen.len() != 4 {
                        return Err(err("codes header repeats a lithology".into()));
                    }
                }
                Some("grade") => in_grade = true,
                _ => {
                    let row = tokens
                        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    let (target, width) = if in_grade {
                        (&mut grade_rows, 3)
                    } else {
                        (&mut lith_rows, 4)
                    };
                    if row.len() != width {
                        return Err(err(format!("expected {width} columns, got {}", row.len())));
                    }
                    target.push(row);
                }
            }
        }
        if lith_rows.len() != 4 {
            return Err(DetectionError::Parse {
                line: 0,
                message: format!("expected 4 lithology rows, got {}", lith_rows.len()),
            });
        }
        let mut lithology = [[0.0; 4]; 4];
        for (r, row) in lith_rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                lithology[order[r].index()][order[c].index()] = v;
            }
        }
        let grade = match grade_rows.len() {
            0 => None,
            3 => {
                let mut g = [[0.0; 3]; 3];
                for (r, row) in grade_rows.iter().enumerate() {
                    g[r].copy_from_slice(row);
                }
                Some(g)
            }
            n => {
                return Err(DetectionError::Parse {
                    line: 0,
                    message: format!("expected 3 grade rows, got {n}"),
                })
            }
        };
        Self::new(lithology, grade)
    }

    pub fn to_text(&self) -> String {
        let codes: Vec<&str> = Lithology::ALL.iter().map(|l| l.code()).collect();
        let mut s = format!("codes {}\n", codes.join(" "));
        let fmt_row = |r: &[f64]| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ") + "\n";
        for r in &self.lithology {
            s.push_str(&fmt_row(r));
        }
        if let Some(g) = &self.grade {
            s.push_str("grade\n");
            for r in g {
                s.push_str(&fmt_row(r));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    class_map: ClassMap,
    box_noise_px: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            class_map: ClassMap::default(),
            box_noise_px: DEFAULT_BOX_NOISE_PX,
        }
    }
}

impl DetectorConfig {
    /// The map must name every lithology-grade pair.
    pub fn new(class_map: ClassMap, box_noise_px: f64) -> Result<Self, DetectionError> {
        if !(box_noise_px >= 0.0) || !box_noise_px.is_finite() {
            return Err(DetectionError::Noise(box_noise_px));
        }
        for l in Lithology::ALL {
            for g in Grade::ACCEPTED {
                if class_map.class_index(l, g).is_none() {
                    return Err(DetectionError::MissingClass(format!("{}-{g}", l.code())));
                }
            }
        }
        Ok(Self {
            class_map,
            box_noise_px,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            box_noise_px: 0.0,
            ..Self::default()
        }
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn box_noise_px(&self) -> f64 {
        self.box_noise_px
    }
}

/// One detection per silhouette that overlaps the image, in input order.
///
/// Every silhouette consumes the same number of draws so that changing the
/// noise level never changes the sampled classes.
pub fn detect(view: &SceneView, confusion: &ConfusionSpec, config: &DetectorConfig, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in &view.silhouettes {
        let u_lith: f64 = rng.random();
        let u_grade: f64 = rng.random();
        let jitter: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));

        let Some(tight) = BoundingBox::bounding(&s.points) else {
            continue;
        };
        let Some(clipped) = tight.clip(view.width, view.height) else {
            continue;
        };
        let lithology = Lithology::ALL[categorical(&confusion.lithology[s.lithology.index()], u_lith)];
        let grade = match (&confusion.grade, s.grade.number()) {
            (Some(g), Some(t)) => Grade::ACCEPTED[categorical(&g[t as usize - 1], u_grade)],
            _ => s.grade,
        };
        let n = config.box_noise_px;
        let mut bbox = BoundingBox {
            x1: clipped.x1 + n * jitter[0],
            y1: clipped.y1 + n * jitter[1],
            x2: clipped.x2 + n * jitter[2],
            y2: clipped.y2 + n * jitter[3],
        };
        if bbox.x1 > bbox.x2 {
            std::mem::swap(&mut bbox.x1, &mut bbox.x2);
        }
        if bbox.y1 > bbox.y2 {
            std::mem::swap(&mut bbox.y1, &mut bbox.y2);
        }
        let class_index = config
            .class_map
            .class_index(lithology, grade)
            .or_else(|| config.class_map.class_index(lithology, Grade::One))
            .unwrap_or(0);
        out.push(Detection {
            class_index,
            lithology,
            grade,
            confidence: confusion.probability((s.lithology, s.grade), (lithology, grade)),
            bbox,
            center: s.centroid,
            source: s.source,
        });
    }
    out
}
