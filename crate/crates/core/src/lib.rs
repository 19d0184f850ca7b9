//! Geometry, I/O, and evaluation routines for cross-view cardiac MR
//! segmentation pipelines.
//!
//! Short-axis (SA) stacks and long-axis (LA) slices of the same subject are
//! related through their header affines. This crate implements that link:
//! label volumes can be carried from one view's voxel lattice to the other,
//! a right-ventricle region of interest can be derived from the transferred
//! labels, and segmentations can be scored with the usual overlap and
//! surface metrics plus the composite challenge score.

pub mod geom;
pub mod losses;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod report;
pub mod transition;

pub use geom::{
    Affine4, GeomError, GridVolume, IntensityVolume, LabelVolume, PhysicalPoint, VoxelGrid,
    LABEL_BACKGROUND, LABEL_LV, LABEL_RV,
};
pub use metrics::{CaseMetrics, Pathology, Phase, View};
pub use phantom::PhantomSpec;
pub use transition::{RoiSpec, TransitionParams};

/// Crate version, stamped into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
