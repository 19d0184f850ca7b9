//! Analytic two-ellipsoid heart phantom. Both chambers have closed-form
//! membership tests, so sampled label volumes come with exact ground truth
//! for any grid, including oblique and single-slice ones. Voxel counts can
//! be checked against analytic volumes, and every geometric routine in the
//! pipeline can be exercised end to end without real images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    Affine4, IntensityVolume, LabelVolume, VoxelGrid, LABEL_BACKGROUND, LABEL_LV, LABEL_RV,
};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("semi-axis {axis} is {value}, must be positive and finite")]
    BadSemiAxis { axis: usize, value: f64 },
    #[error("rotation matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("ellipsoid centers coincide")]
    CoincidentCenters,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn mat_vec(m: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn transpose(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[c][r] = m[r][c];
        }
    }
    t
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

fn identity_rotation() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotation by `angle_rad` about `axis` (normalized internally), via the
/// Rodrigues formula.
pub fn rotation_about_axis(axis: [f64; 3], angle_rad: f64) -> [[f64; 3]; 3] {
    let n = normalize(axis);
    let (s, c) = angle_rad.sin_cos();
    let one_c = 1.0 - c;
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            m[r][col] = one_c * n[r] * n[col];
        }
        m[r][r] += c;
    }
    m[0][1] -= s * n[2];
    m[0][2] += s * n[1];
    m[1][0] += s * n[2];
    m[1][2] -= s * n[0];
    m[2][0] -= s * n[1];
    m[2][1] += s * n[0];
    m
}

/// A rotated ellipsoid in world (mm) coordinates. `rotation` carries local
/// axes to world; membership is tested in the local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    #[serde(default = "identity_rotation")]
    pub rotation: [[f64; 3]; 3],
}

impl Ellipsoid {
    pub fn axis_aligned(center: [f64; 3], semi_axes: [f64; 3]) -> Self {
        Self {
            center,
            semi_axes,
            rotation: identity_rotation(),
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        for (axis, &value) in self.semi_axes.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(PhantomError::BadSemiAxis { axis, value });
            }
        }
        // R^T R = I catches both non-unit columns and non-orthogonal ones;
        // reflections (det -1) pass, which is fine for a symmetric shape.
        let product = mat_mul(transpose(self.rotation), self.rotation);
        let mut deviation: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let expected = if r == c { 1.0 } else { 0.0 };
                deviation = deviation.max((product[r][c] - expected).abs());
            }
        }
        if deviation > ORTHONORMAL_TOL {
            return Err(PhantomError::NotOrthonormal { deviation });
        }
        Ok(())
    }

    /// Closed membership: boundary points belong to the ellipsoid.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        self.quadratic_form(d) <= 1.0
    }

    fn quadratic_form(&self, world_offset: [f64; 3]) -> f64 {
        let local = mat_vec(transpose(self.rotation), world_offset);
        let mut sum = 0.0;
        for i in 0..3 {
            let t = local[i] / self.semi_axes[i];
            sum += t * t;
        }
        sum
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            semi_axes: [
                self.semi_axes[0] * factor,
                self.semi_axes[1] * factor,
                self.semi_axes[2] * factor,
            ],
            ..*self
        }
    }

    pub fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI
            * self.semi_axes[0]
            * self.semi_axes[1]
            * self.semi_axes[2]
    }
}

/// Two-chamber phantom: where the chambers overlap the LV wins, modeling
/// the shared septal wall belonging to the LV label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub lv: Ellipsoid,
    pub rv: Ellipsoid,
}

impl PhantomSpec {
    /// Hand-tuned chamber geometry: an upright LV at the origin and a
    /// thinner RV beside it, close enough to share a wall.
    pub fn default_heart() -> Self {
        Self {
            lv: Ellipsoid::axis_aligned([0.0, 0.0, 0.0], [28.0, 28.0, 42.0]),
            rv: Ellipsoid::axis_aligned([38.0, 6.0, 2.0], [22.0, 16.0, 38.0]),
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        self.lv.validate()?;
        self.rv.validate()?;
        let d = [
            self.lv.center[0] - self.rv.center[0],
            self.lv.center[1] - self.rv.center[1],
            self.lv.center[2] - self.rv.center[2],
        ];
        if norm(d) < 1e-9 {
            return Err(PhantomError::CoincidentCenters);
        }
        Ok(())
    }

    pub fn label_at(&self, p: [f64; 3]) -> u8 {
        if self.lv.contains(p) {
            LABEL_LV
        } else if self.rv.contains(p) {
            LABEL_RV
        } else {
            LABEL_BACKGROUND
        }
    }

    /// Midpoint of the two chamber centers; grids are centered on it.
    pub fn centroid(&self) -> [f64; 3] {
        [
            (self.lv.center[0] + self.rv.center[0]) / 2.0,
            (self.lv.center[1] + self.rv.center[1]) / 2.0,
            (self.lv.center[2] + self.rv.center[2]) / 2.0,
        ]
    }

    /// Contracted variant: both chambers shrunk to 85 percent of their
    /// semi-axes, centers unchanged.
    pub fn end_systole(&self) -> Self {
        Self {
            lv: self.lv.scaled(0.85),
            rv: self.rv.scaled(0.85),
        }
    }

    /// Reproducible random variation of the default heart: centers moved
    /// by up to 6 mm per axis, semi-axes rescaled by up to 10 percent, and
    /// both chambers given a small common rotation.
    pub fn randomized(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Self::default_heart();
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        let axis = [r * phi.cos(), r * phi.sin(), z];
        let angle = rng.gen_range(-0.2..0.2);
        let rotation = rotation_about_axis(axis, angle);
        let mut jitter = |e: &Ellipsoid| -> Ellipsoid {
            let center = [
                e.center[0] + rng.gen_range(-6.0..6.0),
                e.center[1] + rng.gen_range(-6.0..6.0),
                e.center[2] + rng.gen_range(-6.0..6.0),
            ];
            let semi_axes = [
                e.semi_axes[0] * rng.gen_range(0.9..1.1),
                e.semi_axes[1] * rng.gen_range(0.9..1.1),
                e.semi_axes[2] * rng.gen_range(0.9..1.1),
            ];
            Ellipsoid {
                center,
                semi_axes,
                rotation,
            }
        };
        Self {
            lv: jitter(&base.lv),
            rv: jitter(&base.rv),
        }
    }
}

pub const SA_DIMS: (usize, usize, usize) = (96, 96, 12);
pub const SA_SPACING: [f64; 3] = [1.25, 1.25, 10.0];
pub const SA_TILT_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const LA_DIMS: (usize, usize, usize) = (96, 96, 1);
pub const LA_SPACING: [f64; 3] = [1.25, 1.25, 8.0];

fn grid_from_frame(
    dims: (usize, usize, usize),
    spacing: [f64; 3],
    axes: [[f64; 3]; 3],
    center_world: [f64; 3],
    center_index: [f64; 3],
) -> VoxelGrid {
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = axes[c][r] * spacing[c];
        }
    }
    for r in 0..3 {
        let advance =
            m[r][0] * center_index[0] + m[r][1] * center_index[1] + m[r][2] * center_index[2];
        m[r][3] = center_world[r] - advance;
    }
    m[3][3] = 1.0;
    let affine = Affine4::from_matrix(m).expect("frame affine is finite");
    VoxelGrid::new(dims, affine).expect("phantom grid dims and spacing are valid")
}

/// Stack of thick slices tilted 15 degrees about the in-plane diagonal,
/// centered on the phantom.
pub fn default_sa_grid(spec: &PhantomSpec) -> VoxelGrid {
    let rot = rotation_about_axis([1.0, 1.0, 0.0], SA_TILT_RAD);
    let axes = [
        mat_vec(rot, [1.0, 0.0, 0.0]),
        mat_vec(rot, [0.0, 1.0, 0.0]),
        mat_vec(rot, [0.0, 0.0, 1.0]),
    ];
    let (nx, ny, nz) = SA_DIMS;
    grid_from_frame(
        SA_DIMS,
        SA_SPACING,
        axes,
        spec.centroid(),
        [
            (nx as f64 - 1.0) / 2.0,
            (ny as f64 - 1.0) / 2.0,
            (nz as f64 - 1.0) / 2.0,
        ],
    )
}

/// Single thick slice whose plane contains both chamber centers: the first
/// in-plane axis points from the LV center to the RV center, the second is
/// the world z axis orthogonalized against it.
pub fn default_la_grid(spec: &PhantomSpec) -> VoxelGrid {
    let u = normalize([
        spec.rv.center[0] - spec.lv.center[0],
        spec.rv.center[1] - spec.lv.center[1],
        spec.rv.center[2] - spec.lv.center[2],
    ]);
    let z = [0.0, 0.0, 1.0];
    let along = dot(z, u);
    let mut v = [z[0] - along * u[0], z[1] - along * u[1], z[2] - along * u[2]];
    if norm(v) < 1e-6 {
        // chambers stacked along z: fall back to the world y axis
        let y = [0.0, 1.0, 0.0];
        let along = dot(y, u);
        v = [y[0] - along * u[0], y[1] - along * u[1], y[2] - along * u[2]];
    }
    let v = normalize(v);
    let n = cross(u, v);
    let (nx, ny, _) = LA_DIMS;
    grid_from_frame(
        LA_DIMS,
        LA_SPACING,
        [u, v, n],
        spec.centroid(),
        [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0, 0.0],
    )
}

/// Evaluates the exact membership test at every voxel center.
pub fn sample_labels(spec: &PhantomSpec, grid: &VoxelGrid) -> LabelVolume {
    let (nx, ny, nz) = grid.dims();
    let mut out = LabelVolume::zeros(grid.clone());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = grid.voxel_center(i, j, k).to_array();
                out.set(i, j, k, spec.label_at(p));
            }
        }
    }
    out
}

/// Smooth synthetic image: a dim background plus one bell per chamber,
/// shaped by the same quadratic forms as the labels. Deterministic by
/// construction, so repeated runs produce identical bytes.
pub fn sample_intensity(spec: &PhantomSpec, grid: &VoxelGrid) -> IntensityVolume {
    const BACKGROUND: f64 = 0.1;
    const LV_AMPLITUDE: f64 = 0.8;
    const RV_AMPLITUDE: f64 = 0.6;
    let (nx, ny, nz) = grid.dims();
    let mut data = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = grid.voxel_center(i, j, k).to_array();
                let d_lv = [
                    p[0] - spec.lv.center[0],
                    p[1] - spec.lv.center[1],
                    p[2] - spec.lv.center[2],
                ];
                let d_rv = [
                    p[0] - spec.rv.center[0],
                    p[1] - spec.rv.center[1],
                    p[2] - spec.rv.center[2],
                ];
                let value = BACKGROUND
                    + LV_AMPLITUDE * (-spec.lv.quadratic_form(d_lv)).exp()
                    + RV_AMPLITUDE * (-spec.rv.quadratic_form(d_rv)).exp();
                data.push(value);
            }
        }
    }
    IntensityVolume::new(grid.clone(), data).expect("intensities are finite")
}
