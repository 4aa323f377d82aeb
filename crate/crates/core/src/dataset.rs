//! YOLO label lines, lithology-grade class maps, canonical sample names and
//! image/label listing checks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sizing::Grade;

/// Slack allowed when a box edge lands just outside `[0, 1]` after
/// 6-decimal rounding.
pub const FIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("expected 5 fields, got {0}")]
    FieldCount(usize),
    #[error("bad class index `{0}`")]
    ClassIndex(String),
    #[error("bad number `{0}`")]
    Number(String),
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("box does not fit the image along {axis}: center {center}, size {size}")]
    BoxOverflow { axis: char, center: f64, size: f64 },
    #[error("line {line}: {source}")]
    Line { line: usize, source: Box<DatasetError> },
    #[error("unknown lithology code `{0}`")]
    UnknownCode(String),
    #[error("grade must be 1, 2 or 3, got {0}")]
    InvalidGrade(u32),
    #[error("sequence must be positive")]
    InvalidSequence,
    #[error("malformed sample name `{0}`")]
    SampleName(String),
    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("class map is empty")]
    EmptyClassMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lithology {
    Limestone,
    Granite,
    Sandstone,
    Marble,
}

impl Lithology {
    /// Report order.
    pub const ALL: [Lithology; 4] = [
        Lithology::Limestone,
        Lithology::Granite,
        Lithology::Sandstone,
        Lithology::Marble,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Lithology::Limestone => "SH",
            Lithology::Granite => "H",
            Lithology::Sandstone => "S",
            Lithology::Marble => "D",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Lithology::Limestone => "limestone",
            Lithology::Granite => "granite",
            Lithology::Sandstone => "sandstone",
            Lithology::Marble => "marble",
        }
    }

    /// Position in [`Lithology::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: &str) -> Result<Self, DatasetError> {
        match code {
            "SH" => Ok(Lithology::Limestone),
            "H" => Ok(Lithology::Granite),
            "S" => Ok(Lithology::Sandstone),
            "D" => Ok(Lithology::Marble),
            other => Err(DatasetError::UnknownCode(other.to_string())),
        }
    }
}

impl fmt::Display for Lithology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lithology {
    type Err = DatasetError;

    /// Accepts a code (`SH`) or a name (`limestone`), case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        if let Ok(l) = Lithology::from_code(&upper) {
            return Ok(l);
        }
        Lithology::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DatasetError::UnknownCode(s.to_string()))
    }
}

/// One YOLO annotation, geometry normalized to image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRecord {
    pub class_index: usize,
    pub x_center: f64,
    pub y_center: f64,
    pub w0: f64,
    pub h0: f64,
}

impl LabelRecord {
    pub fn new(class_index: usize, x_center: f64, y_center: f64, w0: f64, h0: f64) -> Result<Self, DatasetError> {
        let r = Self {
            class_index,
            x_center,
            y_center,
            w0,
            h0,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (field, value) in [
            ("x_center", self.x_center),
            ("y_center", self.y_center),
            ("w0", self.w0),
            ("h0", self.h0),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DatasetError::OutOfRange { field, value });
            }
        }
        for (axis, center, size) in [('x', self.x_center, self.w0), ('y', self.y_center, self.h0)] {
            if center - size / 2.0 < -FIT_TOLERANCE || center + size / 2.0 > 1.0 + FIT_TOLERANCE {
                return Err(DatasetError::BoxOverflow { axis, center, size });
            }
        }
        Ok(())
    }
}

pub fn parse_label_line(text: &str) -> Result<LabelRecord, DatasetError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(DatasetError::FieldCount(fields.len()));
    }
    let class_index = fields[0]
        .parse::<usize>()
        .map_err(|_| DatasetError::ClassIndex(fields[0].to_string()))?;
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DatasetError::Number(s.to_string()))
    };
    LabelRecord::new(
        class_index,
        num(fields[1])?,
        num(fields[2])?,
        num(fields[3])?,
        num(fields[4])?,
    )
}

/// `class x y w h` with six decimals on the geometry.
pub fn serialize_label(r: &LabelRecord) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        r.class_index, r.x_center, r.y_center, r.w0, r.h0
    )
}

/// Parses a label file; blank lines are skipped.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_label_line(l).map_err(|e| DatasetError::Line {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn serialize_label_file(records: &[LabelRecord]) -> String {
    records.iter().map(|r| serialize_label(r) + "\n").collect()
}

/// Ordered class names; a name's index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl Default for ClassMap {
    /// H-1..3, S-1..3, SH-1..3, D-1..3.
    fn default() -> Self {
        let order = [
            Lithology::Granite,
            Lithology::Sandstone,
            Lithology::Limestone,
            Lithology::Marble,
        ];
        let names = order
            .iter()
            .flat_map(|l| (1..=3).map(move |g| format!("{}-{g}", l.code())))
            .collect();
        Self { names }
    }
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        if names.is_empty() {
            return Err(DatasetError::EmptyClassMap);
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::DuplicateClass(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// One class name per non-blank line.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn class_index(&self, lithology: Lithology, grade: Grade) -> Option<usize> {
        let g = grade.number()?;
        self.index_of(&format!("{}-{g}", lithology.code()))
    }

    /// Splits `CODE-g` into its lithology and grade.
    pub fn decode(&self, index: usize) -> Option<(Lithology, Grade)> {
        let (code, g) = self.name(index)?.rsplit_once('-')?;
        let grade = Grade::from_number(g.parse().ok()?)?;
        Some((Lithology::from_code(code).ok()?, grade))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleName {
    pub lithology: Lithology,
    pub grade: u32,
    pub sequence: u32,
}

/// `<code>-<grade>-<sequence padded to 4>`.
pub fn canonical_name(s: &SampleName) -> Result<String, DatasetError> {
    if !(1..=3).contains(&s.grade) {
        return Err(DatasetError::InvalidGrade(s.grade));
    }
    if s.sequence == 0 {
        return Err(DatasetError::InvalidSequence);
    }
    Ok(format!("{}-{}-{:04}", s.lithology.code(), s.grade, s.sequence))
}

/// Inverse of [`canonical_name`]; an extension, if any, is ignored.
pub fn parse_sample_name(name: &str) -> Result<SampleName, DatasetError> {
    let stem = file_stem(name);
    let bad = || DatasetError::SampleName(name.to_string());
    let mut parts = stem.split('-');
    let (Some(code), Some(grade), Some(seq), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let lithology = Lithology::from_code(code)?;
    let grade: u32 = grade.parse().map_err(|_| bad())?;
    let sequence: u32 = seq.parse().map_err(|_| bad())?;
    let s = SampleName {
        lithology,
        grade,
        sequence,
    };
    canonical_name(&s)?;
    Ok(s)
}

/// Name with the final extension stripped.
pub fn file_stem(name: &str) -> &str {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    match base.rfind('.') {
        Some(i) if i > 0 => &base[..i],
        _ => base,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrityStatus {
    Matched,
    MissingLabel { image: String },
    MissingImage { label: String },
    OrderMismatch { image: String, label: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityEntry {
    pub position: usize,
    pub status: IntegrityStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityReport {
    pub entries: Vec<IntegrityEntry>,
}

impl IntegrityReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status == IntegrityStatus::Matched)
    }

    pub fn count(&self, pred: impl Fn(&IntegrityStatus) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.status)).count()
    }
}

impl fmt::Display for IntegrityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            match &e.status {
                IntegrityStatus::Matched => continue,
                IntegrityStatus::MissingLabel { image } => writeln!(f, "{:>6}  missing label  {image}", e.position)?,
                IntegrityStatus::MissingImage { label } => writeln!(f, "{:>6}  missing image  {label}", e.position)?,
                IntegrityStatus::OrderMismatch { image, label } => {
                    writeln!(f, "{:>6}  order mismatch {image} vs {label}", e.position)?
                }
            }
        }
        let matched = self.count(|s| *s == IntegrityStatus::Matched);
        write!(
            f,
            "{matched}/{} matched: {}",
            self.entries.len(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares ordered image and label listings position by position, by stem.
pub fn verify_dataset(image_names: &[String], label_names: &[String]) -> IntegrityReport {
    fn count(names: &[String]) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for n in names {
            *m.entry(file_stem(n)).or_default() += 1;
        }
        m
    }
    let image_stems = count(image_names);
    let label_stems = count(label_names);
    let mut entries = Vec::new();
    for position in 0..image_names.len().max(label_names.len()) {
        let img = image_names.get(position).map(|n| file_stem(n));
        let lab = label_names.get(position).map(|n| file_stem(n));
        let mut push = |status| entries.push(IntegrityEntry { position, status });
        if let (Some(i), Some(l)) = (img, lab) {
            if i == l {
                push(IntegrityStatus::Matched);
                continue;
            }
        }
        let img_orphan = img.filter(|i| !label_stems.contains_key(i));
        let lab_orphan = lab.filter(|l| !image_stems.contains_key(l));
        if let Some(i) = img_orphan {
            push(IntegrityStatus::MissingLabel { image: i.to_string() });
        }
        if let Some(l) = lab_orphan {
            push(IntegrityStatus::MissingImage { label: l.to_string() });
        }
        if img_orphan.is_none() && lab_orphan.is_none() {
            if let (Some(i), Some(l)) = (img, lab) {
                push(IntegrityStatus::OrderMismatch {
                    image: i.to_string(),
                    label: l.to_string(),
                });
            }
        }
    }
    IntegrityReport { entries }
}
