//! Report serialization: the per-pair metrics CSV, the structured JSON
//! evaluation report, and the ROI description JSON. Everything here is
//! deterministic given the same inputs (fixed field order, fixed row
//! order, no timestamps), so reruns produce byte-identical files.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CaseMetrics, GroupSummary, Phase, SummaryStat, View, WilcoxonTest};
use crate::transition::{RoiSpec, TransitionParams};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// One CSV row: a single phase/view comparison of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub case_id: String,
    pub pathology: String,
    pub phase: Phase,
    pub view: View,
    pub dice: f64,
    pub hd_mm: Option<f64>,
}

/// Flattens cases into rows in a fixed order: manifest order, then ED
/// before ES, then SA before LA. Missing entries produce no row.
pub fn metric_rows(cases: &[CaseMetrics]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for case in cases {
        for phase in Phase::ALL {
            for view in View::ALL {
                if let Some(pair) = case.get(phase, view) {
                    rows.push(MetricRow {
                        case_id: case.case_id.clone(),
                        pathology: case.pathology.to_string(),
                        phase,
                        view,
                        dice: pair.dice,
                        hd_mm: pair.hd_mm,
                    });
                }
            }
        }
    }
    rows
}

/// Writes the six-column metrics CSV. Hausdorff cells are empty when the
/// distance was undefined for that pair.
pub fn write_metrics_csv<W: io::Write>(writer: W, rows: &[MetricRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["case_id", "pathology", "phase", "view", "dice", "hd_mm"])?;
    for row in rows {
        let hd = row.hd_mm.map(|v| format!("{v:.6}")).unwrap_or_default();
        w.write_record([
            row.case_id.as_str(),
            row.pathology.as_str(),
            &row.phase.to_string(),
            &row.view.to_string(),
            &format!("{:.6}", row.dice),
            &hd,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation knobs echoed into the JSON report. Worker counts are left
/// out on purpose: they change timing, never results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParameters {
    pub label_layout: String,
    pub evaluated_label: u8,
    pub post_mask: bool,
    /// Full slab width in mm for the LA transfer behind post-masking;
    /// absent means the source slice thickness was used.
    pub slab_mm: Option<f64>,
    pub margin_mm: f64,
    pub rv_slice_threshold: usize,
}

/// One phase/view entry of a case in the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub phase: Phase,
    pub view: View,
    pub dice: f64,
    pub hd_mm: Option<f64>,
}

/// One case in the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub pathology: String,
    pub complete: bool,
    pub entries: Vec<CaseEntry>,
    /// Composite challenge score; present only when every entry has both
    /// metrics.
    pub score: Option<f64>,
}

/// Mean and spread of one metric inside a group, with the human-readable
/// rendering used by results tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub formatted: String,
}

impl StatRow {
    fn dice(stat: &SummaryStat) -> Self {
        Self {
            mean: stat.mean,
            std: stat.std,
            count: stat.count,
            formatted: stat.format_ds(),
        }
    }

    fn distance(stat: &SummaryStat) -> Self {
        Self {
            mean: stat.mean,
            std: stat.std,
            count: stat.count,
            formatted: stat.format_hd(),
        }
    }
}

/// One aggregated row (a pathology, a phase, or the pooled average).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub cases: usize,
    pub ds_sa: Option<StatRow>,
    pub hd_sa: Option<StatRow>,
    pub ds_la: Option<StatRow>,
    pub hd_la: Option<StatRow>,
}

impl From<&GroupSummary> for GroupRow {
    fn from(s: &GroupSummary) -> Self {
        Self {
            key: s.key.clone(),
            cases: s.cases,
            ds_sa: s.ds_sa.as_ref().map(StatRow::dice),
            hd_sa: s.hd_sa.as_ref().map(StatRow::distance),
            ds_la: s.ds_la.as_ref().map(StatRow::dice),
            hd_la: s.hd_la.as_ref().map(StatRow::distance),
        }
    }
}

pub fn group_rows(summaries: &[GroupSummary]) -> Vec<GroupRow> {
    summaries.iter().map(GroupRow::from).collect()
}

/// Paired ED-versus-ES comparison of Dice scores for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub view: View,
    pub metric: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub exact: bool,
}

impl PhaseComparison {
    pub fn from_test(view: View, metric: &str, test: WilcoxonTest) -> Self {
        Self {
            view,
            metric: metric.to_string(),
            statistic: test.statistic,
            p_value: test.p_value,
            n: test.n,
            exact: test.exact,
        }
    }
}

/// The full JSON evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub parameters: EvalParameters,
    pub cases: Vec<CaseReport>,
    pub pathology_groups: Vec<GroupRow>,
    pub phase_groups: Vec<GroupRow>,
    /// Mean of the per-case composite scores that exist.
    pub average_score: Option<f64>,
    pub phase_comparisons: Vec<PhaseComparison>,
    pub warnings: Vec<String>,
}

pub fn average_score(cases: &[CaseReport]) -> Option<f64> {
    let scores: Vec<f64> = cases.iter().filter_map(|c| c.score).collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// ROI description written by the region-extraction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub version: String,
    /// Inclusive bounds `[i0, i1, j0, j1, k0, k1]` in target voxel indices.
    pub bbox: [usize; 6],
    /// Inclusive slice range that met the foreground threshold.
    pub rv_slices: [usize; 2],
    pub margin_mm: f64,
    pub params: TransitionParams,
}

impl RoiReport {
    pub fn new(roi: &RoiSpec, params: TransitionParams) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            bbox: roi.bbox(),
            rv_slices: [roi.rv_slice_range.0, roi.rv_slice_range.1],
            margin_mm: roi.margin_mm,
            params,
        }
    }
}

/// Serializes any report as stable pretty JSON with a trailing newline.
pub fn write_json_pretty<W: io::Write, T: Serialize>(
    mut writer: W,
    value: &T,
) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}
