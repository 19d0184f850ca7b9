//! Carrying labels between views and deriving the RV region of interest.
//!
//! Both views image the same physical heart, so a label from one view can be
//! looked up from the other by chaining header affines: destination voxel
//! index, to world mm, to continuous source index. Sampling is nearest
//! neighbor; labels must never be interpolated.
//!
//! A long-axis segmentation is a single oblique slice, so its transfer into
//! a short-axis stack only populates voxels near the LA plane. That slab of
//! agreement is exactly what makes the transferred labels useful: the slices
//! it touches tell us where the right ventricle lives in the stack, and the
//! in-plane footprint bounds it laterally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    voxel_to_world, Affine4, GeomError, GridVolume, LabelVolume, VoxelGrid, LABEL_RV,
};

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("transferred labels contain no foreground, the views do not overlap")]
    NoOverlap,
    #[error("no slice holds at least {threshold} RV voxels")]
    NoRvSlices { threshold: usize },
    #[error("ROI box {bbox:?} exceeds grid dims {dims:?}")]
    RoiOutOfBounds {
        bbox: [usize; 6],
        dims: (usize, usize, usize),
    },
    #[error("cropped volume dims {got:?} do not match ROI box extents {expected:?}")]
    ShapeMismatch {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
}

/// Tuning knobs for label transfer and ROI derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// Half-thickness of the slab around a single-slice source plane, in mm.
    /// Destination voxels farther than this from the plane stay background.
    pub slab_halfwidth_mm: f64,
    /// Minimum RV voxel count for a slice to count as RV-bearing.
    pub slice_rv_threshold_vox: usize,
    /// Safety margin added around the tight label bounding box, in mm.
    pub margin_mm: f64,
}

/// Fallback slab half-thickness when the source header reports no slice
/// thickness.
pub const DEFAULT_SLAB_HALFWIDTH_MM: f64 = 5.0;
pub const DEFAULT_SLICE_RV_THRESHOLD_VOX: usize = 1;
pub const DEFAULT_MARGIN_MM: f64 = 10.0;

impl TransitionParams {
    /// Defaults with the slab half-thickness taken from the source slice
    /// thickness (half of it), or 5 mm when the header reports none.
    pub fn for_source_slice_thickness(thickness_mm: f64) -> Self {
        let slab_halfwidth_mm = if thickness_mm > 0.0 {
            thickness_mm / 2.0
        } else {
            DEFAULT_SLAB_HALFWIDTH_MM
        };
        Self {
            slab_halfwidth_mm,
            slice_rv_threshold_vox: DEFAULT_SLICE_RV_THRESHOLD_VOX,
            margin_mm: DEFAULT_MARGIN_MM,
        }
    }
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            slab_halfwidth_mm: DEFAULT_SLAB_HALFWIDTH_MM,
            slice_rv_threshold_vox: DEFAULT_SLICE_RV_THRESHOLD_VOX,
            margin_mm: DEFAULT_MARGIN_MM,
        }
    }
}

/// A region of interest on a short-axis grid: an inclusive index box plus
/// the inclusive range of slices that carry RV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    /// Inclusive bounds per axis.
    pub i_range: (usize, usize),
    pub j_range: (usize, usize),
    pub k_range: (usize, usize),
    /// Inclusive slice range where RV was seen (before margin dilation).
    pub rv_slice_range: (usize, usize),
    /// The margin that produced the box, kept for reporting.
    pub margin_mm: f64,
}

impl RoiSpec {
    /// Box extents as (ni, nj, nk).
    pub fn extents(&self) -> (usize, usize, usize) {
        (
            self.i_range.1 - self.i_range.0 + 1,
            self.j_range.1 - self.j_range.0 + 1,
            self.k_range.1 - self.k_range.0 + 1,
        )
    }

    /// Flat `[i0, i1, j0, j1, k0, k1]` form.
    pub fn bbox(&self) -> [usize; 6] {
        [
            self.i_range.0,
            self.i_range.1,
            self.j_range.0,
            self.j_range.1,
            self.k_range.0,
            self.k_range.1,
        ]
    }

    fn fits(&self, dims: (usize, usize, usize)) -> bool {
        self.i_range.0 <= self.i_range.1
            && self.j_range.0 <= self.j_range.1
            && self.k_range.0 <= self.k_range.1
            && self.i_range.1 < dims.0
            && self.j_range.1 < dims.1
            && self.k_range.1 < dims.2
    }
}

/// Round half up: ties at `.5` go toward positive infinity, so every
/// coordinate has exactly one nearest voxel.
fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// The plane of a single-slice grid: a point on it and the unit normal.
struct SlicePlane {
    origin: [f64; 3],
    normal: [f64; 3],
}

impl SlicePlane {
    fn of(grid: &VoxelGrid) -> Self {
        let a = grid.affine();
        let u = a.column(0);
        let v = a.column(1);
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        Self {
            origin: a.offset(),
            normal: [n[0] / len, n[1] / len, n[2] / len],
        }
    }

    fn distance_mm(&self, p: [f64; 3]) -> f64 {
        ((p[0] - self.origin[0]) * self.normal[0]
            + (p[1] - self.origin[1]) * self.normal[1]
            + (p[2] - self.origin[2]) * self.normal[2])
            .abs()
    }
}

/// Resamples a segmentation onto another grid by nearest neighbor.
///
/// Every destination voxel center is mapped through world space into
/// continuous source coordinates. In-plane (and through-plane, for stack
/// sources) the center must land within half a voxel of the lattice;
/// a coordinate of exactly `dim - 0.5` rounds outside and stays background.
///
/// Single-slice sources are treated as a plane with thickness: the
/// through-plane bound is replaced by a perpendicular-distance test against
/// `slab_halfwidth_mm`, and the lookup projects onto the one slice that
/// exists. A literal half-voxel bound there would cap the slab at the slice
/// thickness and make the parameter dead.
pub fn transform_label(
    src: &LabelVolume,
    dst_grid: &VoxelGrid,
    params: &TransitionParams,
) -> Result<LabelVolume, TransitionError> {
    let src_grid = src.grid();
    let src_inv = src_grid.affine().invert()?;
    dst_grid.affine().invert()?; // both views must be well posed
    let (snx, sny, snz) = src_grid.dims();
    let (dnx, dny, dnz) = dst_grid.dims();
    let single_slice = snz == 1;
    let plane = if single_slice {
        Some(SlicePlane::of(src_grid))
    } else {
        None
    };

    let mut out = vec![0u8; dst_grid.num_voxels()];
    let mut idx = 0;
    for k in 0..dnz {
        for j in 0..dny {
            for i in 0..dnx {
                let w = voxel_to_world([i as f64, j as f64, k as f64], dst_grid).to_array();
                if let Some(plane) = &plane {
                    if plane.distance_mm(w) > params.slab_halfwidth_mm {
                        idx += 1;
                        continue;
                    }
                }
                let c = src_inv.apply(w);
                let si = round_half_up(c[0]);
                let sj = round_half_up(c[1]);
                if si < 0.0 || si >= snx as f64 || sj < 0.0 || sj >= sny as f64 {
                    idx += 1;
                    continue;
                }
                let sk = if single_slice {
                    0.0
                } else {
                    let sk = round_half_up(c[2]);
                    if sk < 0.0 || sk >= snz as f64 {
                        idx += 1;
                        continue;
                    }
                    sk
                };
                out[idx] = src.get(si as usize, sj as usize, sk as usize);
                idx += 1;
            }
        }
    }
    Ok(LabelVolume::new(dst_grid.clone(), out)?)
}

/// Derives the RV region of interest from a segmentation already living on
/// the target grid (typically the transferred LA labels).
///
/// The box is the tight bounding box of all foreground, dilated by
/// `ceil(margin_mm / spacing)` voxels per axis (with a small backoff so an
/// exact multiple survives float32 header noise) and clipped to the grid;
/// its slice range is further clipped to the RV-bearing slice range dilated
/// by the same slice margin.
pub fn derive_roi(
    transferred: &LabelVolume,
    params: &TransitionParams,
) -> Result<RoiSpec, TransitionError> {
    let grid = transferred.grid();
    let (nx, ny, nz) = grid.dims();

    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut rv_per_slice = vec![0usize; nz];
    let mut any = false;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = transferred.get(i, j, k);
                if v == 0 {
                    continue;
                }
                any = true;
                let p = [i, j, k];
                for axis in 0..3 {
                    lo[axis] = lo[axis].min(p[axis]);
                    hi[axis] = hi[axis].max(p[axis]);
                }
                if v == LABEL_RV {
                    rv_per_slice[k] += 1;
                }
            }
        }
    }
    if !any {
        return Err(TransitionError::NoOverlap);
    }

    let threshold = params.slice_rv_threshold_vox;
    let rv_slices: Vec<usize> = (0..nz).filter(|&k| rv_per_slice[k] >= threshold).collect();
    let (rv_low, rv_high) = match (rv_slices.first(), rv_slices.last()) {
        (Some(&low), Some(&high)) => (low, high),
        _ => return Err(TransitionError::NoRvSlices { threshold }),
    };

    let spacing = grid.spacing();
    let dilation = |axis: usize| -> usize {
        let q = params.margin_mm / spacing[axis];
        // spacings reconstructed from float32 headers carry relative noise
        // around 1e-7; back off before the ceil so an exact multiple does
        // not gain a voxel
        let d = (q - q.abs() * 1e-6 - 1e-9).ceil();
        if d.is_finite() && d > 0.0 {
            d as usize
        } else {
            0
        }
    };
    let dims = [nx, ny, nz];
    let mut lo_d = [0usize; 3];
    let mut hi_d = [0usize; 3];
    for axis in 0..3 {
        let d = dilation(axis);
        lo_d[axis] = lo[axis].saturating_sub(d);
        hi_d[axis] = (hi[axis] + d).min(dims[axis] - 1);
    }
    let dk = dilation(2);
    let k_lo = lo_d[2].max(rv_low.saturating_sub(dk));
    let k_hi = hi_d[2].min((rv_high + dk).min(nz - 1));

    Ok(RoiSpec {
        i_range: (lo_d[0], hi_d[0]),
        j_range: (lo_d[1], hi_d[1]),
        k_range: (k_lo, k_hi),
        rv_slice_range: (rv_low, rv_high),
        margin_mm: params.margin_mm,
    })
}

/// Extracts the ROI box from a volume. The output affine is the input
/// affine composed with the index translation to the box corner, so every
/// surviving voxel keeps its physical position.
pub fn crop_to_roi<V: GridVolume>(volume: &V, roi: &RoiSpec) -> Result<V, TransitionError> {
    let grid = volume.grid();
    let dims = grid.dims();
    if !roi.fits(dims) {
        return Err(TransitionError::RoiOutOfBounds {
            bbox: roi.bbox(),
            dims,
        });
    }
    let (ni, nj, nk) = roi.extents();
    let corner = Affine4::translation([
        roi.i_range.0 as f64,
        roi.j_range.0 as f64,
        roi.k_range.0 as f64,
    ]);
    let cropped_affine = grid.affine().compose(&corner);
    let cropped_grid = VoxelGrid::new((ni, nj, nk), cropped_affine)?;

    let mut data = Vec::with_capacity(ni * nj * nk);
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                data.push(volume.get(
                    roi.i_range.0 + i,
                    roi.j_range.0 + j,
                    roi.k_range.0 + k,
                ));
            }
        }
    }
    Ok(V::from_parts(cropped_grid, data)?)
}

/// Puts a cropped segmentation back into a full grid, zero elsewhere.
pub fn embed_from_roi(
    cropped: &LabelVolume,
    roi: &RoiSpec,
    full_grid: &VoxelGrid,
) -> Result<LabelVolume, TransitionError> {
    if !roi.fits(full_grid.dims()) {
        return Err(TransitionError::RoiOutOfBounds {
            bbox: roi.bbox(),
            dims: full_grid.dims(),
        });
    }
    let (ni, nj, nk) = roi.extents();
    if cropped.grid().dims() != (ni, nj, nk) {
        return Err(TransitionError::ShapeMismatch {
            got: cropped.grid().dims(),
            expected: (ni, nj, nk),
        });
    }
    let mut out = LabelVolume::zeros(full_grid.clone());
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                let v = cropped.get(i, j, k);
                if v != 0 {
                    out.set(roi.i_range.0 + i, roi.j_range.0 + j, roi.k_range.0 + k, v);
                }
            }
        }
    }
    Ok(out)
}

/// Removes RV labels from slices outside the RV-bearing range. Other labels
/// and in-range RV are untouched.
pub fn mask_non_rv(prediction: &LabelVolume, roi: &RoiSpec) -> LabelVolume {
    let (nx, ny, nz) = prediction.grid().dims();
    let mut out = prediction.clone();
    for k in 0..nz {
        if k >= roi.rv_slice_range.0 && k <= roi.rv_slice_range.1 {
            continue;
        }
        for j in 0..ny {
            for i in 0..nx {
                if out.get(i, j, k) == LABEL_RV {
                    out.set(i, j, k, 0);
                }
            }
        }
    }
    out
}
