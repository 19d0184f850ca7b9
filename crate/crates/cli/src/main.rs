//! Command-line front end: label transfer between views, ROI extraction,
//! batch evaluation, and synthetic phantom generation.
//!
//! Exit codes: 0 success, 2 unreadable or malformed input, 3 geometry
//! failure (singular affine, no overlap, no usable slices), 4 internal
//! error. Batch evaluation parallelizes across cases; set
//! `RAYON_NUM_THREADS` to cap the worker count. All outputs are
//! deterministic for fixed inputs and flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crossview::geom::{GeomError, LabelVolume, VoxelGrid, LABEL_RV};
use crossview::metrics::{
    aggregate_group, challenge_score, dice_score, hausdorff_mm, phase_view_average,
    wilcoxon_signed_rank, CaseMetrics, GroupKey, MetricPair, MetricsError, Pathology, Phase, View,
};
use crossview::nifti::{
    header_grid, read_header, read_intensity, read_label, resolve_affine, write_intensity,
    write_label, AffineSource, Datatype, LabelLayout, NiftiError, NiftiHeader,
};
use crossview::phantom::{
    default_la_grid, default_sa_grid, sample_intensity, sample_labels, PhantomSpec,
};
use crossview::report::{
    average_score, group_rows, metric_rows, write_json_pretty, write_metrics_csv, CaseEntry,
    CaseReport, EvalParameters, EvalReport, PhaseComparison, ReportError, RoiReport,
};
use crossview::transition::{
    crop_to_roi, derive_roi, mask_non_rv, transform_label, TransitionError, TransitionParams,
};

#[derive(Parser)]
#[command(
    name = "crossview",
    version = crossview::VERSION,
    about = "Cross-view cardiac MR label transfer, ROI extraction, and evaluation",
    long_about = "Carries segmentations between short-axis and long-axis acquisitions \
                  through their header geometry, derives right-ventricle regions of \
                  interest, scores predictions, and generates synthetic phantom cases.\n\
                  Set RAYON_NUM_THREADS to cap evaluation parallelism."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample a label volume onto another file's voxel grid
    Transform(TransformArgs),
    /// Derive a right-ventricle region of interest on a short-axis grid
    Roi(RoiArgs),
    /// Score predictions against ground truth for a manifest of cases
    Eval(EvalArgs),
    /// Generate synthetic phantom cases with exact ground truth
    Phantom(PhantomArgs),
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum LayoutArg {
    /// Stored labels 0/1/2/3 with LV cavity and myocardium kept separate
    Challenge,
    /// Stored labels 0/1/2 as used internally
    Internal,
}

impl LayoutArg {
    fn name(self) -> &'static str {
        match self {
            LayoutArg::Challenge => "challenge",
            LayoutArg::Internal => "internal",
        }
    }
}

impl From<LayoutArg> for LabelLayout {
    fn from(a: LayoutArg) -> Self {
        match a {
            LayoutArg::Challenge => LabelLayout::Challenge,
            LayoutArg::Internal => LabelLayout::Internal,
        }
    }
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum Direction {
    /// Long-axis slice into a short-axis stack (slab semantics apply)
    La2sa,
    /// Short-axis stack into a long-axis grid
    Sa2la,
}

#[derive(Args)]
struct TransformArgs {
    /// Source label volume (NIfTI, optionally gzipped)
    #[arg(long)]
    src: PathBuf,
    /// File whose header defines the destination grid
    #[arg(long)]
    dst_grid: PathBuf,
    /// Output label volume
    #[arg(long)]
    out: PathBuf,
    /// Full slab width in mm around a single-slice source; defaults to the
    /// slice thickness of the view named by --direction
    #[arg(long)]
    slab_mm: Option<f64>,
    #[arg(long, value_enum, default_value_t = Direction::La2sa)]
    direction: Direction,
    #[arg(long, value_enum, default_value_t = LayoutArg::Challenge)]
    labels: LayoutArg,
}

#[derive(Args)]
struct RoiArgs {
    /// Long-axis label volume carrying the prior
    #[arg(long)]
    la_label: PathBuf,
    /// Short-axis image whose grid receives the region
    #[arg(long)]
    sa_image: PathBuf,
    /// Safety margin around the tight bounding box, in mm
    #[arg(long, default_value_t = crossview::transition::DEFAULT_MARGIN_MM)]
    margin_mm: f64,
    /// Region description output
    #[arg(long)]
    out_json: PathBuf,
    /// Optional cropped copy of the short-axis image
    #[arg(long)]
    crop_out: Option<PathBuf>,
    /// Full slab width in mm; defaults to the long-axis slice thickness
    #[arg(long)]
    slab_mm: Option<f64>,
    /// Minimum RV voxels for a slice to count as RV-bearing
    #[arg(long, default_value_t = crossview::transition::DEFAULT_SLICE_RV_THRESHOLD_VOX)]
    rv_threshold: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::Challenge)]
    labels: LayoutArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Case manifest (JSON; paths are relative to its directory)
    #[arg(long)]
    manifest: PathBuf,
    /// Per-pair metrics CSV output
    #[arg(long)]
    out_csv: PathBuf,
    /// Aggregate report JSON output
    #[arg(long)]
    out_json: PathBuf,
    /// Mask short-axis RV predictions outside the slice range the
    /// long-axis prior supports
    #[arg(long)]
    post_mask: bool,
    /// Full slab width in mm for the prior transfer behind --post-mask
    #[arg(long)]
    slab_mm: Option<f64>,
    #[arg(long, default_value_t = crossview::transition::DEFAULT_MARGIN_MM)]
    margin_mm: f64,
    #[arg(long, default_value_t = crossview::transition::DEFAULT_SLICE_RV_THRESHOLD_VOX)]
    rv_threshold: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::Challenge)]
    labels: LayoutArg,
}

#[derive(Args)]
struct PhantomArgs {
    /// Directory receiving the cases and their manifest
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..=999))]
    n_cases: u16,
    /// Seed for randomized anatomy
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit phantom geometry; every case reuses it
    #[arg(long, conflicts_with = "random")]
    spec_json: Option<PathBuf>,
    /// Randomize anatomy per case (the default when no spec is given)
    #[arg(long)]
    random: bool,
}

/// Errors carry the exit code they map to.
enum CliError {
    Input(String),
    Geometry(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Geometry(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn input(context: &str, err: impl fmt::Display) -> Self {
        CliError::Input(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Geometry(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

fn classify_geom(e: &GeomError) -> u8 {
    match e {
        GeomError::SingularAffine { .. }
        | GeomError::ZeroSpacing { .. }
        | GeomError::BadBottomRow(_)
        | GeomError::NonFiniteAffine { .. } => 3,
        _ => 2,
    }
}

impl From<NiftiError> for CliError {
    fn from(e: NiftiError) -> Self {
        match &e {
            NiftiError::Geometry(g) if classify_geom(g) == 3 => CliError::Geometry(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        if classify_geom(&e) == 3 {
            CliError::Geometry(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<TransitionError> for CliError {
    fn from(e: TransitionError) -> Self {
        let code = match &e {
            TransitionError::NoOverlap | TransitionError::NoRvSlices { .. } => 3,
            TransitionError::Geometry(g) => classify_geom(g),
            _ => 4,
        };
        let msg = e.to_string();
        match code {
            3 => CliError::Geometry(msg),
            2 => CliError::Input(msg),
            _ => CliError::Internal(msg),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Transform(a) => cmd_transform(a),
        Command::Roi(a) => cmd_roi(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Phantom(a) => cmd_phantom(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Flags grids whose headers carried no orientation, only voxel sizes.
fn warn_pixdim_fallback(path: &Path, header: &NiftiHeader) -> Option<String> {
    match resolve_affine(header) {
        Ok((_, AffineSource::PixdimFallback)) => {
            let msg = format!(
                "{}: header has neither sform nor qform, using voxel sizes only",
                path.display()
            );
            eprintln!("warning: {msg}");
            Some(msg)
        }
        _ => None,
    }
}

fn read_label_cli(path: &Path, layout: LabelLayout) -> Result<(NiftiHeader, LabelVolume), CliError> {
    read_label(path, layout, None).map_err(|e| match e {
        NiftiError::Io(io) => CliError::input(&path.display().to_string(), io),
        other => match CliError::from(other) {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            CliError::Geometry(m) => CliError::Geometry(format!("{}: {m}", path.display())),
            CliError::Internal(m) => CliError::Internal(format!("{}: {m}", path.display())),
        },
    })
}

fn slab_halfwidth(override_full_mm: Option<f64>, source_grid: &VoxelGrid) -> f64 {
    match override_full_mm {
        Some(w) => w / 2.0,
        None => TransitionParams::for_source_slice_thickness(source_grid.spacing()[2])
            .slab_halfwidth_mm,
    }
}

fn cmd_transform(a: TransformArgs) -> Result<(), CliError> {
    let layout: LabelLayout = a.labels.into();
    let (src_header, src) = read_label_cli(&a.src, layout)?;
    warn_pixdim_fallback(&a.src, &src_header);
    let dst_header =
        read_header(&a.dst_grid).map_err(|e| CliError::input(&a.dst_grid.display().to_string(), e))?;
    warn_pixdim_fallback(&a.dst_grid, &dst_header);
    let dst_grid = header_grid(&dst_header)?;

    let slab_source = match a.direction {
        Direction::La2sa => src.grid(),
        Direction::Sa2la => &dst_grid,
    };
    let params = TransitionParams {
        slab_halfwidth_mm: slab_halfwidth(a.slab_mm, slab_source),
        ..TransitionParams::default()
    };
    let out = transform_label(&src, &dst_grid, &params)?;
    write_label(&a.out, &out, layout)?;
    Ok(())
}

fn cmd_roi(a: RoiArgs) -> Result<(), CliError> {
    let layout: LabelLayout = a.labels.into();
    let (la_header, la) = read_label_cli(&a.la_label, layout)?;
    warn_pixdim_fallback(&a.la_label, &la_header);
    let sa_header =
        read_header(&a.sa_image).map_err(|e| CliError::input(&a.sa_image.display().to_string(), e))?;
    warn_pixdim_fallback(&a.sa_image, &sa_header);
    let sa_grid = header_grid(&sa_header)?;

    let params = TransitionParams {
        slab_halfwidth_mm: slab_halfwidth(a.slab_mm, la.grid()),
        slice_rv_threshold_vox: a.rv_threshold,
        margin_mm: a.margin_mm,
    };
    let transferred = transform_label(&la, &sa_grid, &params)?;
    let roi = derive_roi(&transferred, &params)?;

    let file = fs::File::create(&a.out_json)
        .map_err(|e| CliError::input(&a.out_json.display().to_string(), e))?;
    write_json_pretty(file, &RoiReport::new(&roi, params.clone()))?;

    if let Some(crop_path) = &a.crop_out {
        let (_, image) = read_intensity(&a.sa_image, None)
            .map_err(|e| CliError::input(&a.sa_image.display().to_string(), e))?;
        let cropped = crop_to_roi(&image, &roi)?;
        write_intensity(crop_path, &cropped, sa_header.datatype)?;
    }
    Ok(())
}

// ---- eval ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    cases: Vec<ManifestCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestCase {
    case_id: String,
    pathology: String,
    paths: CasePaths,
}

/// Per-case file paths, relative to the manifest's directory. Images are
/// informational; evaluation reads labels only.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CasePaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sa_image_ed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sa_image_es: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    la_image_ed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    la_image_es: Option<String>,
    sa_gt_ed: String,
    sa_gt_es: String,
    la_gt_ed: String,
    la_gt_es: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sa_pred_ed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sa_pred_es: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    la_pred_ed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    la_pred_es: Option<String>,
}

impl CasePaths {
    fn gt(&self, phase: Phase, view: View) -> &str {
        match (phase, view) {
            (Phase::ED, View::SA) => &self.sa_gt_ed,
            (Phase::ES, View::SA) => &self.sa_gt_es,
            (Phase::ED, View::LA) => &self.la_gt_ed,
            (Phase::ES, View::LA) => &self.la_gt_es,
        }
    }

    fn pred(&self, phase: Phase, view: View) -> Option<&str> {
        match (phase, view) {
            (Phase::ED, View::SA) => self.sa_pred_ed.as_deref(),
            (Phase::ES, View::SA) => self.sa_pred_es.as_deref(),
            (Phase::ED, View::LA) => self.la_pred_ed.as_deref(),
            (Phase::ES, View::LA) => self.la_pred_es.as_deref(),
        }
    }
}

fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::input(&path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::input(&path.display().to_string(), e))?;
    if manifest.cases.is_empty() {
        return Err(CliError::Input(format!(
            "{}: manifest lists no cases",
            path.display()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for case in &manifest.cases {
        if !seen.insert(case.case_id.as_str()) {
            return Err(CliError::Input(format!(
                "{}: duplicate case_id {:?}",
                path.display(),
                case.case_id
            )));
        }
        case.pathology
            .parse::<Pathology>()
            .map_err(|e| CliError::Input(format!("{}: case {}: {e}", path.display(), case.case_id)))?;
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((manifest, base))
}

struct CaseOutcome {
    metrics: CaseMetrics,
    warnings: Vec<String>,
}

/// Scores one case. Failures never abort the run: they surface as
/// warnings and missing entries.
fn evaluate_case(
    case: &ManifestCase,
    base: &Path,
    layout: LabelLayout,
    post_mask: bool,
    slab_mm: Option<f64>,
    margin_mm: f64,
    rv_threshold: usize,
) -> CaseOutcome {
    let pathology = case.pathology.parse::<Pathology>().expect("validated at load");
    let mut metrics = CaseMetrics::new(case.case_id.clone(), pathology);
    let mut warnings = Vec::new();
    let mut warn = |w: String| warnings.push(format!("case {}: {w}", case.case_id));

    let read = |rel: &str| -> Result<LabelVolume, String> {
        let path = base.join(rel);
        read_label(&path, layout, None)
            .map(|(_, v)| v)
            .map_err(|e| format!("{}: {e}", path.display()))
    };

    // ground truth for all four entries first; a missing one sinks only
    // the pairs that need it
    let mut gt = std::collections::BTreeMap::new();
    for phase in Phase::ALL {
        for view in View::ALL {
            match read(case.paths.gt(phase, view)) {
                Ok(v) => {
                    gt.insert((phase, view), v);
                }
                Err(e) => warn(format!("ground truth unreadable, {e}")),
            }
        }
    }

    for phase in Phase::ALL {
        // the prior used for post-masking: the LA prediction when it
        // exists, otherwise LA ground truth
        let roi_for_phase = if post_mask {
            let la_source = match case.paths.pred(phase, View::LA) {
                Some(rel) => read(rel).ok(),
                None => None,
            }
            .or_else(|| gt.get(&(phase, View::LA)).cloned());
            match (la_source, gt.get(&(phase, View::SA))) {
                (Some(la), Some(sa_gt)) => {
                    let params = TransitionParams {
                        slab_halfwidth_mm: slab_halfwidth(slab_mm, la.grid()),
                        slice_rv_threshold_vox: rv_threshold,
                        margin_mm,
                    };
                    match transform_label(&la, sa_gt.grid(), &params)
                        .and_then(|t| derive_roi(&t, &params))
                    {
                        Ok(roi) => Some(roi),
                        Err(e) => {
                            warn(format!("{phase} post-mask prior failed ({e}), scoring unmasked"));
                            None
                        }
                    }
                }
                _ => None,
            }
        } else {
            None
        };

        for view in View::ALL {
            let Some(gt_vol) = gt.get(&(phase, view)) else {
                continue;
            };
            let Some(pred_rel) = case.paths.pred(phase, view) else {
                warn(format!("{phase} {view} prediction missing"));
                continue;
            };
            let pred = match read(pred_rel) {
                Ok(v) => v,
                Err(e) => {
                    warn(format!("prediction unreadable, {e}"));
                    continue;
                }
            };
            let pred = match (&roi_for_phase, view) {
                (Some(roi), View::SA) => mask_non_rv(&pred, roi),
                _ => pred,
            };
            let dice = match dice_score(gt_vol, &pred, LABEL_RV) {
                Ok(d) => d,
                Err(e) => {
                    warn(format!("{phase} {view}: {e}"));
                    continue;
                }
            };
            let hd_mm = match hausdorff_mm(gt_vol, &pred, LABEL_RV) {
                Ok(h) => Some(h),
                Err(MetricsError::EmptyMask { a_empty, b_empty, .. }) => {
                    warn(format!(
                        "{phase} {view}: empty RV mask (truth empty: {a_empty}, prediction empty: {b_empty}), no surface distance"
                    ));
                    None
                }
                Err(e) => {
                    warn(format!("{phase} {view}: {e}"));
                    None
                }
            };
            metrics.set(phase, view, MetricPair { dice, hd_mm });
        }
    }

    CaseOutcome { metrics, warnings }
}

fn case_report(metrics: &CaseMetrics) -> CaseReport {
    let mut entries = Vec::new();
    for phase in Phase::ALL {
        for view in View::ALL {
            if let Some(pair) = metrics.get(phase, view) {
                entries.push(CaseEntry {
                    phase,
                    view,
                    dice: pair.dice,
                    hd_mm: pair.hd_mm,
                });
            }
        }
    }
    let score = phase_view_average(metrics).ok().and_then(|avg| {
        Some(challenge_score(
            avg.ds_sa,
            avg.hd_sa?,
            avg.ds_la,
            avg.hd_la?,
        ))
    });
    CaseReport {
        case_id: metrics.case_id.clone(),
        pathology: metrics.pathology.to_string(),
        complete: metrics.is_complete(),
        entries,
        score,
    }
}

fn phase_comparisons(cases: &[CaseMetrics], warnings: &mut Vec<String>) -> Vec<PhaseComparison> {
    let mut out = Vec::new();
    for view in View::ALL {
        let mut ed = Vec::new();
        let mut es = Vec::new();
        for case in cases {
            if let (Some(a), Some(b)) = (case.get(Phase::ED, view), case.get(Phase::ES, view)) {
                ed.push(a.dice);
                es.push(b.dice);
            }
        }
        match wilcoxon_signed_rank(&ed, &es) {
            Ok(test) => out.push(PhaseComparison::from_test(view, "dice", test)),
            Err(e) => warnings.push(format!("{view} phase comparison skipped: {e}")),
        }
    }
    out
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (manifest, base) = load_manifest(&a.manifest)?;
    let layout: LabelLayout = a.labels.into();

    let outcomes: Vec<CaseOutcome> = manifest
        .cases
        .par_iter()
        .map(|case| {
            evaluate_case(
                case,
                &base,
                layout,
                a.post_mask,
                a.slab_mm,
                a.margin_mm,
                a.rv_threshold,
            )
        })
        .collect();

    let mut warnings = Vec::new();
    let mut cases = Vec::new();
    for outcome in outcomes {
        warnings.extend(outcome.warnings);
        cases.push(outcome.metrics);
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let rows = metric_rows(&cases);
    let csv_file = fs::File::create(&a.out_csv)
        .map_err(|e| CliError::input(&a.out_csv.display().to_string(), e))?;
    write_metrics_csv(csv_file, &rows)?;

    let case_reports: Vec<CaseReport> = cases.iter().map(case_report).collect();
    let pathology_groups = match aggregate_group(&cases, GroupKey::Pathology) {
        Ok(s) => group_rows(&s),
        Err(e) => {
            warnings.push(format!("pathology grouping skipped: {e}"));
            Vec::new()
        }
    };
    let phase_groups = match aggregate_group(&cases, GroupKey::Phase) {
        Ok(s) => group_rows(&s),
        Err(e) => {
            warnings.push(format!("phase grouping skipped: {e}"));
            Vec::new()
        }
    };
    let comparisons = phase_comparisons(&cases, &mut warnings);

    let report = EvalReport {
        version: crossview::VERSION.to_string(),
        parameters: EvalParameters {
            label_layout: a.labels.name().to_string(),
            evaluated_label: LABEL_RV,
            post_mask: a.post_mask,
            slab_mm: a.slab_mm,
            margin_mm: a.margin_mm,
            rv_slice_threshold: a.rv_threshold,
        },
        average_score: average_score(&case_reports),
        cases: case_reports,
        pathology_groups,
        phase_groups,
        phase_comparisons: comparisons,
        warnings,
    };
    let json_file = fs::File::create(&a.out_json)
        .map_err(|e| CliError::input(&a.out_json.display().to_string(), e))?;
    write_json_pretty(json_file, &report)?;
    Ok(())
}

// ---- phantom ----

fn cmd_phantom(a: PhantomArgs) -> Result<(), CliError> {
    let explicit = match &a.spec_json {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(&path.display().to_string(), e))?;
            let spec: PhantomSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::input(&path.display().to_string(), e))?;
            spec.validate()
                .map_err(|e| CliError::input(&path.display().to_string(), e))?;
            Some(spec)
        }
        None => None,
    };

    fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::input(&a.out_dir.display().to_string(), e))?;

    let write_err =
        |path: &Path, e: NiftiError| CliError::Input(format!("{}: {e}", path.display()));

    let mut cases = Vec::new();
    for index in 0..a.n_cases {
        let case_id = format!("case_{:03}", index + 1);
        let pathology = Pathology::ALL[index as usize % Pathology::ALL.len()];
        let ed = explicit.unwrap_or_else(|| PhantomSpec::randomized(a.seed + index as u64));
        let es = ed.end_systole();
        let sa_grid = default_sa_grid(&ed);
        let la_grid = default_la_grid(&ed);

        let case_dir = a.out_dir.join(&case_id);
        fs::create_dir_all(&case_dir)
            .map_err(|e| CliError::input(&case_dir.display().to_string(), e))?;

        let spec_path = case_dir.join("spec.json");
        let spec_file = fs::File::create(&spec_path)
            .map_err(|e| CliError::input(&spec_path.display().to_string(), e))?;
        write_json_pretty(spec_file, &serde_json::json!({ "ed": ed, "es": es }))?;

        let mut paths = CasePaths::default();
        for (phase, spec) in [(Phase::ED, &ed), (Phase::ES, &es)] {
            let suffix = phase.to_string().to_lowercase();
            for (view, grid) in [(View::SA, &sa_grid), (View::LA, &la_grid)] {
                let prefix = view.to_string().to_lowercase();
                let labels = sample_labels(spec, grid);
                let image = sample_intensity(spec, grid);

                let gt_rel = format!("{case_id}/{prefix}_gt_{suffix}.nii.gz");
                let gt_path = a.out_dir.join(&gt_rel);
                write_label(&gt_path, &labels, LabelLayout::Challenge)
                    .map_err(|e| write_err(&gt_path, e))?;

                let img_rel = format!("{case_id}/{prefix}_img_{suffix}.nii.gz");
                let img_path = a.out_dir.join(&img_rel);
                write_intensity(&img_path, &image, Datatype::Float32)
                    .map_err(|e| write_err(&img_path, e))?;

                match (phase, view) {
                    (Phase::ED, View::SA) => {
                        paths.sa_gt_ed = gt_rel.clone();
                        paths.sa_pred_ed = Some(gt_rel);
                        paths.sa_image_ed = Some(img_rel);
                    }
                    (Phase::ES, View::SA) => {
                        paths.sa_gt_es = gt_rel.clone();
                        paths.sa_pred_es = Some(gt_rel);
                        paths.sa_image_es = Some(img_rel);
                    }
                    (Phase::ED, View::LA) => {
                        paths.la_gt_ed = gt_rel.clone();
                        paths.la_pred_ed = Some(gt_rel);
                        paths.la_image_ed = Some(img_rel);
                    }
                    (Phase::ES, View::LA) => {
                        paths.la_gt_es = gt_rel.clone();
                        paths.la_pred_es = Some(gt_rel);
                        paths.la_image_es = Some(img_rel);
                    }
                }
            }
        }
        cases.push(ManifestCase {
            case_id,
            pathology: pathology.to_string(),
            paths,
        });
    }

    let manifest_path = a.out_dir.join("manifest.json");
    let manifest_file = fs::File::create(&manifest_path)
        .map_err(|e| CliError::input(&manifest_path.display().to_string(), e))?;
    write_json_pretty(manifest_file, &Manifest { cases })?;
    Ok(())
}
