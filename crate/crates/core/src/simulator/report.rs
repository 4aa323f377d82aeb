//! Per-lithology grasp and classification tallies, as a table or CSV.

use std::fmt::Write as _;

use super::SimError;
use crate::dataset::Lithology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LithologyRow {
    pub lithology: Lithology,
    pub attempted: usize,
    pub grasped: usize,
    pub correct: usize,
}

impl LithologyRow {
    pub fn grasp_rate(&self) -> f64 {
        100.0 * self.grasped as f64 / self.attempted as f64
    }

    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct as f64 / self.attempted as f64
    }

    /// `sandstone (S)`.
    pub fn label(&self) -> String {
        format!("{} ({})", self.lithology.name(), self.lithology.code())
    }
}

/// Rows in [`Lithology::ALL`] order; lithologies never attempted are absent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SortReport {
    pub rows: Vec<LithologyRow>,
}

impl SortReport {
    /// Tallies `(true lithology, grasp ok, reported lithology)` attempts.
    pub fn from_attempts(attempts: impl IntoIterator<Item = (Lithology, bool, Lithology)>) -> Self {
        let mut rows = Lithology::ALL.map(|lithology| LithologyRow {
            lithology,
            attempted: 0,
            grasped: 0,
            correct: 0,
        });
        for (truth, ok, reported) in attempts {
            let r = &mut rows[truth.index()];
            r.attempted += 1;
            r.grasped += usize::from(ok);
            r.correct += usize::from(reported == truth);
        }
        Self {
            rows: rows.into_iter().filter(|r| r.attempted > 0).collect(),
        }
    }

    pub fn row(&self, lithology: Lithology) -> Option<&LithologyRow> {
        self.rows.iter().find(|r| r.lithology == lithology)
    }

    /// Unweighted mean of the per-lithology grasp rates.
    pub fn mean_grasp_rate(&self) -> Option<f64> {
        mean(self.rows.iter().map(LithologyRow::grasp_rate))
    }

    /// Unweighted mean of the per-lithology accuracies.
    pub fn mean_accuracy(&self) -> Option<f64> {
        mean(self.rows.iter().map(LithologyRow::accuracy))
    }

    fn totals(&self) -> (usize, usize, usize) {
        self.rows
            .iter()
            .fold((0, 0, 0), |t, r| (t.0 + r.attempted, t.1 + r.grasped, t.2 + r.correct))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `100·num/den`: an integer when exact, else one decimal.
fn percent(num: usize, den: usize) -> String {
    if (100 * num).is_multiple_of(den) {
        format!("{}", 100 * num / den)
    } else {
        format!("{:.1}", 100.0 * num as f64 / den as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

const TABLE_HEADERS: [&str; 6] = [
    "category",
    "attempted",
    "grasp successes",
    "success rate/%",
    "correct",
    "accuracy/%",
];
const CSV_HEADER: &str = "category,attempted,grasp_successes,success_rate_pct,correct,accuracy_pct";
const OVERALL: &str = "overall";

fn cells(report: &SortReport) -> Vec<[String; 6]> {
    let mut out: Vec<[String; 6]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.label(),
                r.attempted.to_string(),
                r.grasped.to_string(),
                percent(r.grasped, r.attempted),
                r.correct.to_string(),
                percent(r.correct, r.attempted),
            ]
        })
        .collect();
    if let (Some(g), Some(a)) = (report.mean_grasp_rate(), report.mean_accuracy()) {
        let (att, gr, co) = report.totals();
        out.push([
            OVERALL.to_string(),
            att.to_string(),
            gr.to_string(),
            format!("{g:.1}"),
            co.to_string(),
            format!("{a:.1}"),
        ]);
    }
    out
}

pub fn render_report(report: &SortReport, format: ReportFormat) -> String {
    let rows = cells(report);
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            s.push_str(CSV_HEADER);
            s.push('\n');
            for r in rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
        }
        ReportFormat::Table => {
            let widths: Vec<usize> = (0..6)
                .map(|i| {
                    rows.iter()
                        .map(|r| r[i].len())
                        .chain([TABLE_HEADERS[i].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |s: &mut String, r: [&str; 6]| {
                let _ = write!(s, "{:<w$}", r[0], w = widths[0]);
                for i in 1..6 {
                    let _ = write!(s, "  {:>w$}", r[i], w = widths[i]);
                }
                s.push('\n');
            };
            line(&mut s, TABLE_HEADERS);
            for r in &rows {
                line(&mut s, std::array::from_fn(|i| r[i].as_str()));
            }
        }
    }
    s
}

/// Reads a CSV rendered by [`render_report`]; the overall row is checked
/// against the parsed rows.
pub fn parse_report_csv(text: &str) -> Result<SortReport, SimError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(SimError::Report {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    let mut overall = None;
    for (i, line) in lines {
        let err = |message: String| SimError::Report { line: i + 1, message };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", f.len())));
        }
        let count = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad count `{s}`")));
        let (attempted, grasped, correct) = (count(f[1])?, count(f[2])?, count(f[4])?);
        if f[0] == OVERALL {
            overall = Some((i, f[3].to_string(), f[5].to_string()));
            continue;
        }
        let name = f[0].split_once(" (").map_or(f[0], |(n, _)| n);
        let lithology: Lithology = name.parse().map_err(|_| err(format!("unknown category `{}`", f[0])))?;
        if attempted == 0 || grasped > attempted || correct > attempted {
            return Err(err("counts out of range".into()));
        }
        if f[3] != percent(grasped, attempted) || f[5] != percent(correct, attempted) {
            return Err(err("rates disagree with counts".into()));
        }
        rows.push(LithologyRow {
            lithology,
            attempted,
            grasped,
            correct,
        });
    }
    let report = SortReport { rows };
    if let Some((i, g, a)) = overall {
        let expect = cells(&report).pop().expect("non-empty report has an overall row");
        if g != expect[3] || a != expect[5] {
            return Err(SimError::Report {
                line: i + 1,
                message: "overall row disagrees with rows".into(),
            });
        }
    }
    Ok(report)
}
