//! Segmentation quality metrics and their aggregation: Dice overlap,
//! boundary Hausdorff distance in millimetres, per-case phase averaging,
//! the composite challenge score, grouped mean/std tables, and a paired
//! Wilcoxon signed-rank test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::geom::LabelVolume;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("volumes live on different grids: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("grids share dims but their affines disagree beyond tolerance")]
    GridMismatch,
    #[error("mask empty for label {label} (first: {a_empty}, second: {b_empty})")]
    EmptyMask {
        label: u8,
        a_empty: bool,
        b_empty: bool,
    },
    #[error("case {case_id} is missing the {phase} {view} entry")]
    MissingPhase {
        case_id: String,
        phase: Phase,
        view: View,
    },
    #[error("no cases to aggregate")]
    EmptyInput,
    #[error("paired samples have different lengths: {x} vs {y}")]
    MismatchedLengths { x: usize, y: usize },
    #[error("only {n} nonzero paired differences, need at least {min}")]
    TooFewPairs { n: usize, min: usize },
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
}

/// Cardiac phase of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    ED,
    ES,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::ED, Phase::ES];

    fn index(self) -> usize {
        match self {
            Phase::ED => 0,
            Phase::ES => 1,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::ED => "ED",
            Phase::ES => "ES",
        })
    }
}

/// Acquisition view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    SA,
    LA,
}

impl View {
    pub const ALL: [View; 2] = [View::SA, View::LA];

    fn index(self) -> usize {
        match self {
            View::SA => 0,
            View::LA => 1,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::SA => "SA",
            View::LA => "LA",
        })
    }
}

/// Disease group of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pathology {
    Normal,
    DilatedLV,
    HCM,
    CAM,
    TOF,
    IC,
    DilatedRV,
    TR,
}

impl Pathology {
    pub const ALL: [Pathology; 8] = [
        Pathology::Normal,
        Pathology::DilatedLV,
        Pathology::HCM,
        Pathology::CAM,
        Pathology::TOF,
        Pathology::IC,
        Pathology::DilatedRV,
        Pathology::TR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pathology::Normal => "Normal",
            Pathology::DilatedLV => "DilatedLV",
            Pathology::HCM => "HCM",
            Pathology::CAM => "CAM",
            Pathology::TOF => "TOF",
            Pathology::IC => "IC",
            Pathology::DilatedRV => "DilatedRV",
            Pathology::TR => "TR",
        }
    }
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pathology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pathology::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown pathology {s:?}"))
    }
}

/// Dice and Hausdorff for one phase/view pair. Hausdorff is absent when a
/// mask was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub dice: f64,
    pub hd_mm: Option<f64>,
}

/// All metric entries for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub case_id: String,
    pub pathology: Pathology,
    entries: [[Option<MetricPair>; 2]; 2],
}

impl CaseMetrics {
    pub fn new(case_id: impl Into<String>, pathology: Pathology) -> Self {
        Self {
            case_id: case_id.into(),
            pathology,
            entries: [[None; 2]; 2],
        }
    }

    pub fn set(&mut self, phase: Phase, view: View, pair: MetricPair) {
        self.entries[phase.index()][view.index()] = Some(pair);
    }

    pub fn get(&self, phase: Phase, view: View) -> Option<MetricPair> {
        self.entries[phase.index()][view.index()]
    }

    pub fn is_complete(&self) -> bool {
        Phase::ALL
            .iter()
            .all(|&p| View::ALL.iter().all(|&v| self.get(p, v).is_some()))
    }
}

const AFFINE_MATCH_TOL: f64 = 1e-3;

fn check_same_grid(a: &LabelVolume, b: &LabelVolume) -> Result<(), MetricsError> {
    let (ga, gb) = (a.grid(), b.grid());
    if ga.dims() != gb.dims() {
        return Err(MetricsError::ShapeMismatch {
            a: ga.dims(),
            b: gb.dims(),
        });
    }
    let (ma, mb) = (ga.affine().matrix(), gb.affine().matrix());
    for r in 0..4 {
        for c in 0..4 {
            if (ma[r][c] - mb[r][c]).abs() > AFFINE_MATCH_TOL {
                return Err(MetricsError::GridMismatch);
            }
        }
    }
    Ok(())
}

/// Dice overlap of one label: `2|A n B| / (|A| + |B|)`. Two empty masks are
/// in perfect agreement and score 1.
pub fn dice_score(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64, MetricsError> {
    check_same_grid(a, b)?;
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        let in_a = va == label;
        let in_b = vb == label;
        na += in_a as usize;
        nb += in_b as usize;
        inter += (in_a && in_b) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Boundary voxels of a label: labeled voxels with a face neighbor that is
/// not the label (grid edges count as background). Single-slice volumes use
/// the in-plane 4-neighborhood; stacks use the full 6-neighborhood.
fn boundary_voxels(v: &LabelVolume, label: u8) -> Vec<(usize, usize, usize)> {
    let (nx, ny, nz) = v.grid().dims();
    let in_plane_only = nz == 1;
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if v.get(i, j, k) != label {
                    continue;
                }
                let mut neighbors: Vec<(i64, i64, i64)> = vec![
                    (i as i64 - 1, j as i64, k as i64),
                    (i as i64 + 1, j as i64, k as i64),
                    (i as i64, j as i64 - 1, k as i64),
                    (i as i64, j as i64 + 1, k as i64),
                ];
                if !in_plane_only {
                    neighbors.push((i as i64, j as i64, k as i64 - 1));
                    neighbors.push((i as i64, j as i64, k as i64 + 1));
                }
                let is_boundary = neighbors.into_iter().any(|(ni, nj, nk)| {
                    if ni < 0
                        || nj < 0
                        || nk < 0
                        || ni >= nx as i64
                        || nj >= ny as i64
                        || nk >= nz as i64
                    {
                        true
                    } else {
                        v.get(ni as usize, nj as usize, nk as usize) != label
                    }
                });
                if is_boundary {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

fn boundary_points_mm(v: &LabelVolume, label: u8) -> Vec<[f64; 3]> {
    boundary_voxels(v, label)
        .into_iter()
        .map(|(i, j, k)| v.grid().voxel_center(i, j, k).to_array())
        .collect()
}

fn nearest_distances(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let dz = p[2] - q[2];
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

type BoundaryPair = (Vec<[f64; 3]>, Vec<[f64; 3]>);

fn hausdorff_boundaries(
    a: &LabelVolume,
    b: &LabelVolume,
    label: u8,
) -> Result<BoundaryPair, MetricsError> {
    check_same_grid(a, b)?;
    let pa = boundary_points_mm(a, label);
    let pb = boundary_points_mm(b, label);
    if pa.is_empty() || pb.is_empty() {
        return Err(MetricsError::EmptyMask {
            label,
            a_empty: pa.is_empty(),
            b_empty: pb.is_empty(),
        });
    }
    Ok((pa, pb))
}

/// Symmetric Hausdorff distance between the label's boundaries, in mm:
/// the worst nearest-boundary distance in either direction.
pub fn hausdorff_mm(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<f64, MetricsError> {
    let (pa, pb) = hausdorff_boundaries(a, b, label)?;
    let d_ab = nearest_distances(&pa, &pb);
    let d_ba = nearest_distances(&pb, &pa);
    let max_ab = d_ab.into_iter().fold(0.0, f64::max);
    let max_ba = d_ba.into_iter().fold(0.0, f64::max);
    Ok(max_ab.max(max_ba))
}

/// Percentile Hausdorff (e.g. 95 for HD95): the nearest-rank percentile of
/// each directed distance set, symmetrized by max. Not part of the
/// challenge score, offered for robustness studies.
pub fn hausdorff_percentile_mm(
    a: &LabelVolume,
    b: &LabelVolume,
    label: u8,
    percentile: f64,
) -> Result<f64, MetricsError> {
    if !(0.0..=100.0).contains(&percentile) || percentile == 0.0 {
        return Err(MetricsError::BadPercentile(percentile));
    }
    let (pa, pb) = hausdorff_boundaries(a, b, label)?;
    let rank = |mut d: Vec<f64>| -> f64 {
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let idx = ((percentile / 100.0) * d.len() as f64).ceil() as usize;
        d[idx.clamp(1, d.len()) - 1]
    };
    let q_ab = rank(nearest_distances(&pa, &pb));
    let q_ba = rank(nearest_distances(&pb, &pa));
    Ok(q_ab.max(q_ba))
}

/// Per-view metrics averaged over the two phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseViewAverages {
    pub ds_sa: f64,
    pub hd_sa: Option<f64>,
    pub ds_la: f64,
    pub hd_la: Option<f64>,
}

/// Averages each view's metrics over ED and ES. Dice requires all four
/// entries; a Hausdorff average is only reported when both phases have one.
pub fn phase_view_average(case: &CaseMetrics) -> Result<PhaseViewAverages, MetricsError> {
    let mut pairs = [[None; 2]; 2];
    for phase in Phase::ALL {
        for view in View::ALL {
            pairs[phase.index()][view.index()] =
                Some(case.get(phase, view).ok_or(MetricsError::MissingPhase {
                    case_id: case.case_id.clone(),
                    phase,
                    view,
                })?);
        }
    }
    let view_avg = |view: View| -> (f64, Option<f64>) {
        let ed: MetricPair = pairs[0][view.index()].unwrap();
        let es: MetricPair = pairs[1][view.index()].unwrap();
        let ds = (ed.dice + es.dice) / 2.0;
        let hd = match (ed.hd_mm, es.hd_mm) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        (ds, hd)
    };
    let (ds_sa, hd_sa) = view_avg(View::SA);
    let (ds_la, hd_la) = view_avg(View::LA);
    Ok(PhaseViewAverages {
        ds_sa,
        hd_sa,
        ds_la,
        hd_la,
    })
}

/// The composite challenge score
/// `(0.75 (DS_SA + HD_SA) + 0.25 (DS_LA + HD_LA)) / 2`, exactly as the
/// ranking defines it. Dice is unitless while Hausdorff is in mm, so the
/// distance terms dominate numerically; the formula is reproduced verbatim
/// rather than rescaled.
pub fn challenge_score(ds_sa: f64, hd_sa: f64, ds_la: f64, hd_la: f64) -> f64 {
    (0.75 * (ds_sa + hd_sa) + 0.25 * (ds_la + hd_la)) / 2.0
}

/// Mean and sample standard deviation of a metric within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single sample.
    pub std: f64,
    pub count: usize,
}

impl SummaryStat {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() < 2 {
            0.0
        } else {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        Some(Self {
            mean,
            std,
            count: samples.len(),
        })
    }

    /// Dice-style formatting, three decimals: `0.920 ± 0.020`.
    pub fn format_ds(&self) -> String {
        format!("{:.3} \u{b1} {:.3}", self.mean, self.std)
    }

    /// Distance-style formatting, three significant figures: `10.3 ± 4.67`.
    pub fn format_hd(&self) -> String {
        format!("{} \u{b1} {}", sig3(self.mean), sig3(self.std))
    }
}

fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// How to group cases for a summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    /// One row per disease group; each case contributes its phase-averaged
    /// metrics once.
    Pathology,
    /// One row per phase plus an `Average` row pooling all phase samples.
    Phase,
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: String,
    /// Cases that contributed at least one sample.
    pub cases: usize,
    pub ds_sa: Option<SummaryStat>,
    pub hd_sa: Option<SummaryStat>,
    pub ds_la: Option<SummaryStat>,
    pub hd_la: Option<SummaryStat>,
}

#[derive(Default)]
struct SampleSet {
    cases: usize,
    ds_sa: Vec<f64>,
    hd_sa: Vec<f64>,
    ds_la: Vec<f64>,
    hd_la: Vec<f64>,
}

impl SampleSet {
    fn summarize(&self, key: String) -> GroupSummary {
        GroupSummary {
            key,
            cases: self.cases,
            ds_sa: SummaryStat::from_samples(&self.ds_sa),
            hd_sa: SummaryStat::from_samples(&self.hd_sa),
            ds_la: SummaryStat::from_samples(&self.ds_la),
            hd_la: SummaryStat::from_samples(&self.hd_la),
        }
    }
}

/// Builds grouped mean/std rows over complete cases.
///
/// Pathology grouping mirrors the per-disease tables: a case contributes
/// its phase-averaged Dice and Hausdorff once, rows appear in the canonical
/// pathology order, and empty groups are dropped. Phase grouping mirrors
/// the ED/ES tables: each case contributes one sample per phase, and a
/// final `Average` row pools everything. Cases with missing Dice entries
/// are skipped; missing Hausdorff values are simply absent from the
/// distance columns.
pub fn aggregate_group(
    cases: &[CaseMetrics],
    key: GroupKey,
) -> Result<Vec<GroupSummary>, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    match key {
        GroupKey::Pathology => {
            let mut groups: BTreeMap<Pathology, SampleSet> = BTreeMap::new();
            for case in cases {
                let Ok(avg) = phase_view_average(case) else {
                    continue;
                };
                let set = groups.entry(case.pathology).or_default();
                set.cases += 1;
                set.ds_sa.push(avg.ds_sa);
                set.ds_la.push(avg.ds_la);
                if let Some(hd) = avg.hd_sa {
                    set.hd_sa.push(hd);
                }
                if let Some(hd) = avg.hd_la {
                    set.hd_la.push(hd);
                }
            }
            Ok(Pathology::ALL
                .iter()
                .filter_map(|p| groups.get(p).map(|s| s.summarize(p.to_string())))
                .collect())
        }
        GroupKey::Phase => {
            let mut by_phase: BTreeMap<Phase, SampleSet> = BTreeMap::new();
            let mut pooled = SampleSet::default();
            for case in cases {
                if !case.is_complete() {
                    continue;
                }
                pooled.cases += 1;
                for phase in Phase::ALL {
                    let set = by_phase.entry(phase).or_default();
                    set.cases += 1;
                    for view in View::ALL {
                        let pair = case.get(phase, view).unwrap();
                        match view {
                            View::SA => {
                                set.ds_sa.push(pair.dice);
                                pooled.ds_sa.push(pair.dice);
                                if let Some(hd) = pair.hd_mm {
                                    set.hd_sa.push(hd);
                                    pooled.hd_sa.push(hd);
                                }
                            }
                            View::LA => {
                                set.ds_la.push(pair.dice);
                                pooled.ds_la.push(pair.dice);
                                if let Some(hd) = pair.hd_mm {
                                    set.hd_la.push(hd);
                                    pooled.hd_la.push(hd);
                                }
                            }
                        }
                    }
                }
            }
            let mut rows: Vec<GroupSummary> = Phase::ALL
                .iter()
                .filter_map(|p| by_phase.get(p).map(|s| s.summarize(p.to_string())))
                .collect();
            if pooled.cases > 0 {
                rows.push(pooled.summarize("Average".to_string()));
            }
            Ok(rows)
        }
    }
}

/// Result of the paired signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonTest {
    /// `min(W+, W-)`, the smaller signed-rank sum.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Pairs remaining after dropping zero differences.
    pub n: usize,
    /// Whether the p-value came from full enumeration.
    pub exact: bool,
}

/// Largest n for which the exact null distribution is enumerated.
pub const WILCOXON_EXACT_LIMIT: usize = 12;

/// Fewest usable pairs for the test to run.
pub const WILCOXON_MIN_PAIRS: usize = 5;

/// Paired two-sided Wilcoxon signed-rank test.
///
/// Zero differences are dropped, tied magnitudes share mid-ranks, and the
/// statistic is the smaller rank sum, which makes it symmetric in the two
/// inputs. Identical inputs short-circuit to p = 1. Up to
/// [`WILCOXON_EXACT_LIMIT`] usable pairs the p-value enumerates all sign
/// assignments; beyond that a normal approximation with tie and continuity
/// corrections is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonTest, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::MismatchedLengths {
            x: x.len(),
            y: y.len(),
        });
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonTest {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
        });
    }
    let n = diffs.len();
    if n < WILCOXON_MIN_PAIRS {
        return Err(MetricsError::TooFewPairs {
            n,
            min: WILCOXON_MIN_PAIRS,
        });
    }

    // mid-ranks over |d|
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut tie_sizes = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && diffs[order[end + 1]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = mid;
        }
        tie_sizes.push(end - start + 1);
        start = end + 1;
    }

    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let p_value = if n <= WILCOXON_EXACT_LIMIT {
        // P(W+ <= statistic) under random signs, doubled for two sides.
        // Rank sums are multiples of 1/2, so exact comparison is safe.
        let mut at_most = 0u64;
        for mask in 0u64..(1u64 << n) {
            let w: f64 = (0..n)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| ranks[i])
                .sum();
            if w <= statistic + 1e-9 {
                at_most += 1;
            }
        }
        (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = (statistic - mean + 0.5) / variance.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * normal.cdf(z)).min(1.0)
    };

    Ok(WilcoxonTest {
        statistic,
        p_value,
        n,
        exact: n <= WILCOXON_EXACT_LIMIT,
    })
}
