//! Room accuracy, position error and latency summaries, per lighting
//! condition plus a pooled "global" column over every query.
//!
//! Position error of a query is the planar Euclidean distance between the
//! estimated and true capture points, in meters; MAE is its mean.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_file, Condition, Manifest, Pose};
use crate::error::{Error, Result};
use crate::localization::ResultRow;

/// A localized query joined with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub id: String,
    pub condition: Condition,
    pub true_room: String,
    pub pred_room: String,
    pub truth: Pose,
    pub estimate: Pose,
    pub elapsed_ms: f64,
}

impl QueryOutcome {
    pub fn room_correct(&self) -> bool {
        self.true_room == self.pred_room
    }

    pub fn error(&self) -> f64 {
        self.truth.distance(&self.estimate)
    }
}

/// Joins result rows with the truth manifest by query id. Room, pose and
/// condition come from the manifest.
pub fn join(rows: &[ResultRow], truth: &Manifest) -> Result<Vec<QueryOutcome>> {
    let index: HashMap<&str, usize> = truth
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    rows.iter()
        .map(|row| {
            let rec = &truth.records()[*index
                .get(row.query_id.as_str())
                .ok_or_else(|| Error::Alignment(row.query_id.clone()))?];
            Ok(QueryOutcome {
                id: row.query_id.clone(),
                condition: rec.condition,
                true_room: rec.room.clone(),
                pred_room: row.pred_room.clone(),
                truth: rec.pose,
                estimate: Pose::new(row.x_est, row.y_est),
                elapsed_ms: row.elapsed_ms,
            })
        })
        .collect()
}

/// A value per lighting condition (absent when no query had it) and pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerCondition<T> {
    pub cloudy: Option<T>,
    pub night: Option<T>,
    pub sunny: Option<T>,
    pub global: T,
}

impl<T> PerCondition<T> {
    pub fn get(&self, c: Condition) -> Option<&T> {
        match c {
            Condition::Cloudy => self.cloudy.as_ref(),
            Condition::Night => self.night.as_ref(),
            Condition::Sunny => self.sunny.as_ref(),
        }
    }

    /// Applies `f` to each condition's subset and to the whole set.
    fn compute<'a>(
        outcomes: &'a [QueryOutcome],
        mut f: impl FnMut(&[&'a QueryOutcome]) -> Result<T>,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut part = |c: Condition| -> Result<Option<T>> {
            let subset: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.condition == c).collect();
            if subset.is_empty() {
                Ok(None)
            } else {
                f(&subset).map(Some)
            }
        };
        let cloudy = part(Condition::Cloudy)?;
        let night = part(Condition::Night)?;
        let sunny = part(Condition::Sunny)?;
        let all: Vec<&QueryOutcome> = outcomes.iter().collect();
        Ok(Self {
            cloudy,
            night,
            sunny,
            global: f(&all)?,
        })
    }
}

fn accuracy_of(subset: &[&QueryOutcome]) -> f64 {
    let correct = subset.iter().filter(|o| o.room_correct()).count();
    100.0 * correct as f64 / subset.len() as f64
}

fn mae_of(subset: &[&QueryOutcome]) -> f64 {
    subset.iter().map(|o| o.error()).sum::<f64>() / subset.len() as f64
}

/// Percentage of queries whose room was predicted correctly.
pub fn room_accuracy(outcomes: &[QueryOutcome]) -> Result<PerCondition<f64>> {
    PerCondition::compute(outcomes, |s| Ok(accuracy_of(s)))
}

/// Mean planar position error over all queries, in meters.
pub fn mae(outcomes: &[QueryOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(outcomes.iter().map(QueryOutcome::error).sum::<f64>() / outcomes.len() as f64)
}

pub fn mae_by_condition(outcomes: &[QueryOutcome]) -> Result<PerCondition<f64>> {
    PerCondition::compute(outcomes, |s| Ok(mae_of(s)))
}

/// Linearly interpolated quantile of ascending data (`p` in `[0, 1]`),
/// position `p·(n−1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Whiskers {
    pub lower: f64,
    pub upper: f64,
}

/// Box-plot summary of a set of errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub max: f64,
    pub quartiles: Quartiles,
    /// Most extreme data within 1.5·IQR of the box.
    pub whiskers: Whiskers,
    pub outliers: usize,
}

pub fn error_distribution(errors: &[f64]) -> Result<BoxStats> {
    if errors.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || {
        sorted
            .iter()
            .copied()
            .filter(|&e| e >= lo_fence && e <= hi_fence)
    };
    let lower = inside().next().unwrap_or(q1);
    let upper = inside().next_back().unwrap_or(q3);
    Ok(BoxStats {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        quartiles: Quartiles { q1, median, q3 },
        whiskers: Whiskers { lower, upper },
        outliers: sorted.len() - inside().count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub n: usize,
    /// Percent.
    pub room_accuracy: f64,
    /// Meters.
    pub mae: f64,
    pub quartiles: Quartiles,
    pub whiskers: Whiskers,
    pub min: f64,
    pub max: f64,
    pub outliers: usize,
    /// Milliseconds per query; only filled by [`evaluate_with_timing`] since
    /// wall-clock figures differ between otherwise identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_elapsed: Option<f64>,
}

pub type EvalReport = PerCondition<ConditionStats>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_elapsed_ms: f64,
}

/// Wall-clock figures are kept apart from [`EvalReport`], which is a pure
/// function of the localization output and therefore reproducible bit for bit.
pub type LatencyReport = PerCondition<LatencyStats>;

pub fn evaluate(outcomes: &[QueryOutcome]) -> Result<EvalReport> {
    PerCondition::compute(outcomes, |s| {
        let errors: Vec<f64> = s.iter().map(|o| o.error()).collect();
        let dist = error_distribution(&errors)?;
        Ok(ConditionStats {
            n: s.len(),
            room_accuracy: accuracy_of(s),
            mae: mae_of(s),
            quartiles: dist.quartiles,
            whiskers: dist.whiskers,
            min: dist.min,
            max: dist.max,
            outliers: dist.outliers,
            mean_elapsed: None,
        })
    })
}

/// Like [`evaluate`], also recording the mean per-query elapsed time.
pub fn evaluate_with_timing(outcomes: &[QueryOutcome]) -> Result<EvalReport> {
    let mut report = evaluate(outcomes)?;
    let lat = latency(outcomes)?;
    for (stats, l) in [
        (report.cloudy.as_mut(), lat.cloudy),
        (report.night.as_mut(), lat.night),
        (report.sunny.as_mut(), lat.sunny),
        (Some(&mut report.global), Some(lat.global)),
    ] {
        if let (Some(s), Some(l)) = (stats, l) {
            s.mean_elapsed = Some(l.mean_elapsed_ms);
        }
    }
    Ok(report)
}

pub fn latency(outcomes: &[QueryOutcome]) -> Result<LatencyReport> {
    PerCondition::compute(outcomes, |s| {
        Ok(LatencyStats {
            n: s.len(),
            mean_elapsed_ms: s.iter().map(|o| o.elapsed_ms).sum::<f64>() / s.len() as f64,
        })
    })
}

const COLUMNS: [Condition; 3] = [Condition::Cloudy, Condition::Night, Condition::Sunny];

fn title(c: Condition) -> &'static str {
    match c {
        Condition::Cloudy => "Cloudy",
        Condition::Night => "Night",
        Condition::Sunny => "Sunny",
    }
}

fn cell(v: Option<f64>, unit: &str) -> String {
    match v {
        Some(v) => format!("{v:.2}{unit}"),
        None => "-".into(),
    }
}

/// Room-retrieval accuracy table: one row per labelled report, columns
/// Cloudy / Night / Sunny / Global in percent.
pub fn render_accuracy_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::new();
    let width = label_width(rows.iter().map(|r| r.0), "Training Dataset");
    let _ = writeln!(
        out,
        "{:<width$} | {:>7} | {:>7} | {:>7} | {:>7}",
        "Training Dataset", "Cloudy", "Night", "Sunny", "Global"
    );
    for (label, report) in rows {
        let cols: Vec<String> = COLUMNS
            .iter()
            .map(|&c| cell(report.get(c).map(|s| s.room_accuracy), ""))
            .collect();
        let _ = writeln!(
            out,
            "{:<width$} | {:>7} | {:>7} | {:>7} | {:>7}",
            label,
            cols[0],
            cols[1],
            cols[2],
            cell(Some(report.global.room_accuracy), "")
        );
    }
    out
}

/// Localization-error table: one row per labelled report, MAE per condition.
pub fn render_error_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::new();
    let width = label_width(rows.iter().map(|r| r.0), "Descriptor");
    let _ = writeln!(
        out,
        "{:<width$} | {:>12} | {:>12} | {:>12}",
        "Descriptor", "Cloudy Error", "Night Error", "Sunny Error"
    );
    for (label, report) in rows {
        let cols: Vec<String> = COLUMNS
            .iter()
            .map(|&c| cell(report.get(c).map(|s| s.mae), " m"))
            .collect();
        let _ = writeln!(
            out,
            "{:<width$} | {:>12} | {:>12} | {:>12}",
            label, cols[0], cols[1], cols[2]
        );
    }
    out
}

/// Mean localization time per query, one row per method.
pub fn render_latency_table(rows: &[(&str, f64)]) -> String {
    let mut out = String::new();
    let width = label_width(rows.iter().map(|r| r.0), "Method");
    let _ = writeln!(out, "{:<width$} | {:>10}", "Method", "Mean Time");
    for (label, ms) in rows {
        let t = if *ms >= 1.0 {
            format!("{ms:.1} ms")
        } else {
            format!("{ms:.4} ms")
        };
        let _ = writeln!(out, "{label:<width$} | {t:>10}");
    }
    out
}

fn label_width<'a>(labels: impl Iterator<Item = &'a str>, header: &str) -> usize {
    labels
        .map(str::len)
        .chain([header.len()])
        .max()
        .unwrap_or(0)
}

/// Box-plot source data, one line per condition plus global.
pub fn render_distribution(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<7} | {:>6} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8} | {:>8}",
        "Set", "n", "MAE", "min", "w_low", "q1", "median", "q3", "w_high", "max", "outliers"
    );
    let rows = COLUMNS
        .iter()
        .map(|&c| (title(c), report.get(c)))
        .chain([("Global", Some(&report.global))]);
    for (name, stats) in rows {
        let Some(s) = stats else { continue };
        let _ = writeln!(
            out,
            "{:<7} | {:>6} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8}",
            name,
            s.n,
            s.mae,
            s.min,
            s.whiskers.lower,
            s.quartiles.q1,
            s.quartiles.median,
            s.quartiles.q3,
            s.whiskers.upper,
            s.max,
            s.outliers
        );
    }
    out
}

/// Parses a table produced by [`render_accuracy_table`] or
/// [`render_error_table`] back into labelled numeric rows (`None` for `-`).
pub fn parse_table(text: &str) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::NoRecords)?;
    let ncols = header.split('|').count() - 1;
    lines
        .map(|line| {
            let mut fields = line.split('|').map(str::trim);
            let label = fields.next().unwrap_or_default().to_owned();
            let values = fields
                .map(|f| {
                    let f = f.trim_end_matches('m').trim();
                    if f == "-" {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Invalid(format!("bad table cell {f:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != ncols {
                return Err(Error::Invalid(format!(
                    "row {label:?} has {} columns, expected {ncols}",
                    values.len()
                )));
            }
            Ok((label, values))
        })
        .collect()
}

/// Writes the JSON report to `path` and its text rendering next to it with a
/// `.txt` extension.
pub fn write_report(report: &EvalReport, label: &str, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    write_file(path, &json)?;
    let mut text = String::new();
    text.push_str("Room retrieval accuracy (%)\n");
    text.push_str(&render_accuracy_table(&[(label, report)]));
    text.push_str("\nLocalization error (MAE)\n");
    text.push_str(&render_error_table(&[(label, report)]));
    text.push_str("\nError distribution (m)\n");
    text.push_str(&render_distribution(report));
    write_file(&path.with_extension("txt"), text.as_bytes())
}

/// Writes the latency JSON to `path` and the table next to it as `.txt`.
pub fn write_latency(report: &LatencyReport, label: &str, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report).expect("latency serializes");
    json.push(b'\n');
    write_file(path, &json)?;
    let text = render_latency_table(&[(label, report.global.mean_elapsed_ms)]);
    write_file(&path.with_extension("txt"), text.as_bytes())
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
