//! Voxel-lattice geometry: homogeneous affines, grids, and the volume types
//! that live on them.
//!
//! All coordinates follow the usual medical-imaging convention: a voxel's
//! center sits at its integer index, and the grid affine maps continuous
//! voxel coordinates to physical millimetres. Volumes are kept in the
//! orientation their header describes; nothing is ever re-sliced to a
//! canonical axis order. Everything is `f64`.

use thiserror::Error;

/// Background voxels.
pub const LABEL_BACKGROUND: u8 = 0;
/// Left ventricle (cavity and myocardium merged).
pub const LABEL_LV: u8 = 1;
/// Right ventricle.
pub const LABEL_RV: u8 = 2;

/// Largest label value a [`LabelVolume`] may hold.
pub const MAX_LABEL: u8 = LABEL_RV;

/// A 3x3 determinant below this magnitude is treated as singular.
pub const SINGULARITY_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("affine bottom row must be (0, 0, 0, 1), got {0:?}")]
    BadBottomRow([f64; 4]),
    #[error("singular affine: |det| = {det:.3e}")]
    SingularAffine { det: f64 },
    #[error("non-finite affine entry at row {row}, column {col}")]
    NonFiniteAffine { row: usize, col: usize },
    #[error("grid dims must all be at least 1, got {0:?}")]
    EmptyDims((usize, usize, usize)),
    #[error("affine column {axis} has zero norm, grid spacing would be 0")]
    ZeroSpacing { axis: usize },
    #[error("data length {got} does not match grid voxel count {expected}")]
    DataLengthMismatch { got: usize, expected: usize },
    #[error("label value {value} at linear index {index} is outside 0..={MAX_LABEL}")]
    InvalidLabel { value: u8, index: usize },
    #[error("non-finite intensity at linear index {0}")]
    NonFiniteValue(usize),
}

/// A point in physical (scanner) space, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PhysicalPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Euclidean distance to another point, in mm.
    pub fn distance(self, other: PhysicalPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl From<[f64; 3]> for PhysicalPoint {
    fn from(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }
}

impl From<PhysicalPoint> for [f64; 3] {
    fn from(p: PhysicalPoint) -> Self {
        p.to_array()
    }
}

/// Homogeneous 4x4 affine, row-major, bottom row pinned to (0, 0, 0, 1).
///
/// Construction does not require the linear part to be invertible: degenerate
/// headers must remain representable so that the failure surfaces as
/// [`GeomError::SingularAffine`] at inversion time rather than as a parse
/// error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine4 {
    m: [[f64; 4]; 4],
}

impl Affine4 {
    pub const IDENTITY: Affine4 = Affine4 {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    /// Builds from a full 4x4 matrix, validating the bottom row and finiteness.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self, GeomError> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeomError::BadBottomRow(m[3]));
        }
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GeomError::NonFiniteAffine { row: r, col: c });
                }
            }
        }
        Ok(Self { m })
    }

    /// Builds from the top three rows; the bottom row is implied.
    pub fn from_rows(rows: [[f64; 4]; 3]) -> Result<Self, GeomError> {
        Self::from_matrix([rows[0], rows[1], rows[2], [0.0, 0.0, 0.0, 1.0]])
    }

    /// Pure translation.
    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY;
        m.m[0][3] = t[0];
        m.m[1][3] = t[1];
        m.m[2][3] = t[2];
        m
    }

    /// Diagonal scaling, e.g. a spacing-only header affine.
    pub fn scaling(s: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY;
        m.m[0][0] = s[0];
        m.m[1][1] = s[1];
        m.m[2][2] = s[2];
        m
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    /// The upper-left 3x3 linear block.
    pub fn linear(&self) -> [[f64; 3]; 3] {
        [
            [self.m[0][0], self.m[0][1], self.m[0][2]],
            [self.m[1][0], self.m[1][1], self.m[1][2]],
            [self.m[2][0], self.m[2][1], self.m[2][2]],
        ]
    }

    /// The translation column.
    pub fn offset(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// `axis`-th column of the linear block (the world step per voxel index).
    pub fn column(&self, axis: usize) -> [f64; 3] {
        [self.m[0][axis], self.m[1][axis], self.m[2][axis]]
    }

    /// Euclidean norms of the three linear columns; the grid spacing.
    pub fn column_norms(&self) -> [f64; 3] {
        let n = |a: usize| {
            (self.m[0][a] * self.m[0][a] + self.m[1][a] * self.m[1][a] + self.m[2][a] * self.m[2][a])
                .sqrt()
        };
        [n(0), n(1), n(2)]
    }

    /// Determinant of the linear block.
    pub fn det3(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_invertible(&self) -> bool {
        self.det3().abs() > SINGULARITY_EPS
    }

    /// Inverts via the adjugate of the linear block: for `[R | t]` the
    /// inverse is `[R^-1 | -R^-1 t]`.
    pub fn invert(&self) -> Result<Affine4, GeomError> {
        let det = self.det3();
        if det.abs() <= SINGULARITY_EPS {
            return Err(GeomError::SingularAffine { det });
        }
        let m = &self.m;
        let inv_det = 1.0 / det;
        let r = [
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
            ],
        ];
        let t = self.offset();
        let bt = [
            -(r[0][0] * t[0] + r[0][1] * t[1] + r[0][2] * t[2]),
            -(r[1][0] * t[0] + r[1][1] * t[1] + r[1][2] * t[2]),
            -(r[2][0] * t[0] + r[2][1] * t[1] + r[2][2] * t[2]),
        ];
        Ok(Affine4 {
            m: [
                [r[0][0], r[0][1], r[0][2], bt[0]],
                [r[1][0], r[1][1], r[1][2], bt[1]],
                [r[2][0], r[2][1], r[2][2], bt[2]],
                [0.0, 0.0, 0.0, 1.0],
            ],
        })
    }

    /// Composition `self . other`: applying the result equals applying
    /// `other` first, then `self`.
    pub fn compose(&self, other: &Affine4) -> Affine4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        out[3] = [0.0, 0.0, 0.0, 1.0];
        Affine4 { m: out }
    }

    /// Applies the affine to a point (implicit homogeneous coordinate 1).
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }
}

/// A voxel lattice: integer dims plus the affine taking voxel coordinates to
/// physical mm.
///
/// Dims must all be at least 1 and every affine column must have nonzero
/// norm (a zero column would mean zero spacing along that axis, which is a
/// broken header, not a usable grid). Rank deficiency with nonzero columns
/// is still representable and is caught by [`world_to_voxel`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: (usize, usize, usize),
    affine: Affine4,
}

impl VoxelGrid {
    pub fn new(dims: (usize, usize, usize), affine: Affine4) -> Result<Self, GeomError> {
        if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
            return Err(GeomError::EmptyDims(dims));
        }
        let norms = affine.column_norms();
        for (axis, n) in norms.iter().enumerate() {
            if *n <= 0.0 {
                return Err(GeomError::ZeroSpacing { axis });
            }
        }
        Ok(Self { dims, affine })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn affine(&self) -> &Affine4 {
        &self.affine
    }

    /// Spacing in mm along each voxel axis, derived from the affine columns.
    pub fn spacing(&self) -> [f64; 3] {
        self.affine.column_norms()
    }

    /// Linear index for voxel `(i, j, k)`; the x index varies fastest, which
    /// matches the on-disk payload order.
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    /// Physical position of the voxel center at integer index `(i, j, k)`.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> PhysicalPoint {
        voxel_to_world([i as f64, j as f64, k as f64], self)
    }
}

/// Maps a continuous voxel coordinate to physical mm.
pub fn voxel_to_world(p: [f64; 3], g: &VoxelGrid) -> PhysicalPoint {
    g.affine.apply(p).into()
}

/// Maps a physical point back to continuous voxel coordinates.
///
/// Fails with [`GeomError::SingularAffine`] when the grid affine's linear
/// block is not invertible.
pub fn world_to_voxel(q: PhysicalPoint, g: &VoxelGrid) -> Result<[f64; 3], GeomError> {
    Ok(g.affine.invert()?.apply(q.to_array()))
}

/// Volumes that carry their grid along with a flat data array.
///
/// Lets ROI cropping and embedding work on labels and intensities through
/// one code path.
pub trait GridVolume: Sized {
    type Elem: Copy;

    fn grid(&self) -> &VoxelGrid;
    fn data(&self) -> &[Self::Elem];
    fn from_parts(grid: VoxelGrid, data: Vec<Self::Elem>) -> Result<Self, GeomError>;

    fn get(&self, i: usize, j: usize, k: usize) -> Self::Elem {
        self.data()[self.grid().linear_index(i, j, k)]
    }
}

/// A segmentation on a grid. Values are restricted to
/// `{0 = background, 1 = LV, 2 = RV}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    grid: VoxelGrid,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: VoxelGrid, data: Vec<u8>) -> Result<Self, GeomError> {
        if data.len() != grid.num_voxels() {
            return Err(GeomError::DataLengthMismatch {
                got: data.len(),
                expected: grid.num_voxels(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if value > MAX_LABEL {
                return Err(GeomError::InvalidLabel { value, index });
            }
        }
        Ok(Self { grid, data })
    }

    /// All-background volume on the given grid.
    pub fn zeros(grid: VoxelGrid) -> Self {
        let n = grid.num_voxels();
        Self {
            grid,
            data: vec![0; n],
        }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: u8) {
        debug_assert!(value <= MAX_LABEL);
        let idx = self.grid.linear_index(i, j, k);
        self.data[idx] = value;
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }
}

impl GridVolume for LabelVolume {
    type Elem = u8;

    fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    fn data(&self) -> &[u8] {
        &self.data
    }

    fn from_parts(grid: VoxelGrid, data: Vec<u8>) -> Result<Self, GeomError> {
        Self::new(grid, data)
    }
}

/// A scalar image on a grid. All values must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    grid: VoxelGrid,
    data: Vec<f64>,
}

impl IntensityVolume {
    pub fn new(grid: VoxelGrid, data: Vec<f64>) -> Result<Self, GeomError> {
        if data.len() != grid.num_voxels() {
            return Err(GeomError::DataLengthMismatch {
                got: data.len(),
                expected: grid.num_voxels(),
            });
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(GeomError::NonFiniteValue(bad));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.linear_index(i, j, k)]
    }
}

impl GridVolume for IntensityVolume {
    type Elem = f64;

    fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    fn data(&self) -> &[f64] {
        &self.data
    }

    fn from_parts(grid: VoxelGrid, data: Vec<f64>) -> Result<Self, GeomError> {
        Self::new(grid, data)
    }
}
