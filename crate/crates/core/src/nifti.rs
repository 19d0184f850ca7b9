//! NIfTI-1 reading and writing, covering what the pipeline needs and no
//! more: single-file `.nii` / `.nii.gz` volumes plus `.hdr`/`.img` pairs,
//! five voxel datatypes, both byte orders on read, and header affines
//! resolved with sform > qform > pixdim precedence.
//!
//! Header extensions are skipped on read and written as absent. The
//! `scl_slope` / `scl_inter` scaling fields are parsed but never applied;
//! voxel values are returned as stored.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::geom::{Affine4, GeomError, IntensityVolume, LabelVolume, VoxelGrid};

/// Byte length of a NIfTI-1 header.
pub const HEADER_SIZE: usize = 348;

/// Payload offset written for single-file volumes: header plus the 4-byte
/// extender.
pub const DEFAULT_VOX_OFFSET: usize = 352;

const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

/// Byte offsets of the header fields used here.
mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QUATERN_C: usize = 260;
    pub const QUATERN_D: usize = 264;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not a NIfTI-1 file: magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is not 348 under either byte order")]
    BadEndianness,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("header field {field}: {problem}")]
    InvalidHeader { field: &'static str, problem: String },
    #[error("file truncated: expected {expected} bytes, found {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("dimension {0} does not fit the 16-bit header field")]
    DimsOverflow(usize),
    #[error("file holds {frames} frames, a frame index is required")]
    FrameRequired { frames: usize },
    #[error("frame index {frame} out of range for {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("label volume stored with non-integral datatype {0:?}")]
    NonIntegralDatatype(Datatype),
    #[error("stored label value {value} is not valid under the {layout:?} layout")]
    BadLabelValue { value: i64, layout: LabelLayout },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// The supported subset of NIfTI datatype codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Self::Uint8),
            4 => Some(Self::Int16),
            8 => Some(Self::Int32),
            16 => Some(Self::Float32),
            64 => Some(Self::Float64),
            _ => None,
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Int32 => 4,
            Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    pub fn is_integral(self) -> bool {
        !matches!(self, Self::Float32 | Self::Float64)
    }
}

/// On-disk label conventions.
///
/// `Challenge` files store 1 = LV cavity, 2 = LV myocardium, 3 = RV; loading
/// merges cavity and myocardium into internal label 1 and moves RV to 2.
/// Writing back under `Challenge` emits LV as 1 and RV as 3 (the
/// cavity/myocardium split is gone after the merge, so LV is written as a
/// single label). `Internal` stores the in-memory values unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelLayout {
    Internal,
    Challenge,
}

impl LabelLayout {
    /// Maps an on-disk value to an internal label; `None` for values
    /// outside the layout's vocabulary.
    pub fn decode(self, value: i64) -> Option<u8> {
        match (self, value) {
            (_, 0) => Some(0),
            (LabelLayout::Internal, 1) => Some(1),
            (LabelLayout::Internal, 2) => Some(2),
            (LabelLayout::Challenge, 1) | (LabelLayout::Challenge, 2) => Some(1),
            (LabelLayout::Challenge, 3) => Some(2),
            _ => None,
        }
    }

    /// Maps an internal label to its on-disk value.
    pub fn encode(self, value: u8) -> u8 {
        match (self, value) {
            (LabelLayout::Challenge, 2) => 3,
            _ => value,
        }
    }
}

/// The parsed subset of a NIfTI-1 header. Float fields are widened to `f64`
/// once, at parse time.
#[derive(Debug, Clone)]
pub struct NiftiHeader {
    pub endianness: Endianness,
    pub ndim: usize,
    pub dims: (usize, usize, usize),
    pub frames: usize,
    pub datatype: Datatype,
    pub pixdim: [f64; 8],
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub xyzt_units: u8,
    pub descrip: String,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f64; 3],
    pub qoffset: [f64; 3],
    pub srow: [[f64; 4]; 3],
    pub magic: [u8; 4],
}

impl NiftiHeader {
    pub fn voxels_per_frame(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }
}

/// Which header field family produced the resolved affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineSource {
    Sform,
    Qform,
    /// Neither transform code was set; the affine is a bare pixdim scaling
    /// with no origin. Callers should surface this to the user.
    PixdimFallback,
}

/// Voxel payloads in their stored type, for lossless round-trips.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    Uint8(Vec<u8>),
    Int16(Vec<i16>),
    Int32(Vec<i32>),
    Float32(Vec<f32>),
    Float64(Vec<f64>),
}

impl VoxelData {
    pub fn datatype(&self) -> Datatype {
        match self {
            Self::Uint8(_) => Datatype::Uint8,
            Self::Int16(_) => Datatype::Int16,
            Self::Int32(_) => Datatype::Int32,
            Self::Float32(_) => Datatype::Float32,
            Self::Float64(_) => Datatype::Float64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Uint8(v) => v.len(),
            Self::Int16(v) => v.len(),
            Self::Int32(v) => v.len(),
            Self::Float32(v) => v.len(),
            Self::Float64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slice_f64(&self, start: usize, n: usize) -> Vec<f64> {
        match self {
            Self::Uint8(v) => v[start..start + n].iter().map(|&x| x as f64).collect(),
            Self::Int16(v) => v[start..start + n].iter().map(|&x| x as f64).collect(),
            Self::Int32(v) => v[start..start + n].iter().map(|&x| x as f64).collect(),
            Self::Float32(v) => v[start..start + n].iter().map(|&x| x as f64).collect(),
            Self::Float64(v) => v[start..start + n].to_vec(),
        }
    }

    /// Integer view of the payload; `None` for float datatypes.
    fn slice_i64(&self, start: usize, n: usize) -> Option<Vec<i64>> {
        match self {
            Self::Uint8(v) => Some(v[start..start + n].iter().map(|&x| x as i64).collect()),
            Self::Int16(v) => Some(v[start..start + n].iter().map(|&x| x as i64).collect()),
            Self::Int32(v) => Some(v[start..start + n].iter().map(|&x| x as i64).collect()),
            Self::Float32(_) | Self::Float64(_) => None,
        }
    }
}

/// Reconstructs the affine a header describes, preferring sform, then
/// qform, then a bare pixdim scaling.
pub fn resolve_affine(h: &NiftiHeader) -> Result<(Affine4, AffineSource), NiftiError> {
    if h.sform_code > 0 {
        let a = Affine4::from_rows(h.srow)?;
        return Ok((a, AffineSource::Sform));
    }
    if h.qform_code > 0 {
        return Ok((qform_affine(h)?, AffineSource::Qform));
    }
    let a = Affine4::scaling([
        h.pixdim[1].abs(),
        h.pixdim[2].abs(),
        h.pixdim[3].abs(),
    ]);
    Ok((a, AffineSource::PixdimFallback))
}

/// Quaternion form: the stored (b, c, d) implies a = sqrt(1 - b^2 - c^2 - d^2),
/// columns are scaled by the voxel spacing, and the third column flips with
/// qfac = pixdim[0] (0 is treated as +1).
fn qform_affine(h: &NiftiHeader) -> Result<Affine4, NiftiError> {
    let [b, c, d] = h.quatern;
    let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
    let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let (sx, sy, sz) = (h.pixdim[1].abs(), h.pixdim[2].abs(), h.pixdim[3].abs() * qfac);
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ];
    Ok(Affine4::from_rows([
        [r[0][0] * sx, r[0][1] * sy, r[0][2] * sz, h.qoffset[0]],
        [r[1][0] * sx, r[1][1] * sy, r[1][2] * sz, h.qoffset[1]],
        [r[2][0] * sx, r[2][1] * sy, r[2][2] * sz, h.qoffset[2]],
    ])?)
}

/// Builds the voxel grid a header describes.
pub fn header_grid(h: &NiftiHeader) -> Result<VoxelGrid, NiftiError> {
    let (affine, _) = resolve_affine(h)?;
    Ok(VoxelGrid::new(h.dims, affine)?)
}

fn read_file_bytes(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let raw = fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses the 348-byte header at the start of `bytes`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TruncatedData {
            expected: HEADER_SIZE,
            got: bytes.len(),
        });
    }
    let endianness = if LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        Endianness::Little
    } else if BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(NiftiError::BadEndianness);
    };
    match endianness {
        Endianness::Little => parse_fields::<LittleEndian>(bytes, endianness),
        Endianness::Big => parse_fields::<BigEndian>(bytes, endianness),
    }
}

fn parse_fields<E: ByteOrder>(
    bytes: &[u8],
    endianness: Endianness,
) -> Result<NiftiHeader, NiftiError> {
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[offset::MAGIC..offset::MAGIC + 4]);
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(NiftiError::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    E::read_i16_into(&bytes[offset::DIM..offset::DIM + 16], &mut dim);
    let ndim = dim[0];
    if !(2..=4).contains(&ndim) {
        return Err(NiftiError::InvalidHeader {
            field: "dim[0]",
            problem: format!("expected 2, 3, or 4, got {ndim}"),
        });
    }
    let ndim = ndim as usize;
    for axis in 1..=ndim {
        if dim[axis] < 1 {
            return Err(NiftiError::InvalidHeader {
                field: "dim",
                problem: format!("dim[{axis}] = {} must be at least 1", dim[axis]),
            });
        }
    }
    let nx = dim[1] as usize;
    let ny = dim[2] as usize;
    let nz = if ndim >= 3 { dim[3] as usize } else { 1 };
    let frames = if ndim == 4 { dim[4] as usize } else { 1 };

    let datatype_code = E::read_i16(&bytes[offset::DATATYPE..]);
    let datatype = Datatype::from_code(datatype_code)
        .ok_or(NiftiError::UnsupportedDatatype(datatype_code))?;
    let bitpix = E::read_i16(&bytes[offset::BITPIX..]);
    if bitpix != datatype.bitpix() {
        return Err(NiftiError::InvalidHeader {
            field: "bitpix",
            problem: format!("{bitpix} does not match datatype {datatype:?}"),
        });
    }

    let mut pixdim = [0.0f64; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[offset::PIXDIM + 4 * i..]) as f64;
    }

    let vox_offset_raw = E::read_f32(&bytes[offset::VOX_OFFSET..]);
    if !vox_offset_raw.is_finite() || vox_offset_raw < 0.0 {
        return Err(NiftiError::InvalidHeader {
            field: "vox_offset",
            problem: format!("{vox_offset_raw}"),
        });
    }
    let vox_offset = vox_offset_raw as usize;
    if magic == MAGIC_SINGLE && vox_offset < DEFAULT_VOX_OFFSET {
        return Err(NiftiError::InvalidHeader {
            field: "vox_offset",
            problem: format!("{vox_offset} is below the single-file minimum of {DEFAULT_VOX_OFFSET}"),
        });
    }

    let descrip_raw = &bytes[offset::DESCRIP..offset::DESCRIP + 80];
    let descrip_end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);
    let descrip = String::from_utf8_lossy(&descrip_raw[..descrip_end]).into_owned();

    let mut srow = [[0.0f64; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = E::read_f32(&bytes[offset::SROW_X + 16 * r + 4 * c..]) as f64;
        }
    }

    Ok(NiftiHeader {
        endianness,
        ndim,
        dims: (nx, ny, nz),
        frames,
        datatype,
        pixdim,
        vox_offset,
        scl_slope: E::read_f32(&bytes[offset::SCL_SLOPE..]) as f64,
        scl_inter: E::read_f32(&bytes[offset::SCL_INTER..]) as f64,
        xyzt_units: bytes[offset::XYZT_UNITS],
        descrip,
        qform_code: E::read_i16(&bytes[offset::QFORM_CODE..]),
        sform_code: E::read_i16(&bytes[offset::SFORM_CODE..]),
        quatern: [
            E::read_f32(&bytes[offset::QUATERN_B..]) as f64,
            E::read_f32(&bytes[offset::QUATERN_C..]) as f64,
            E::read_f32(&bytes[offset::QUATERN_D..]) as f64,
        ],
        qoffset: [
            E::read_f32(&bytes[offset::QOFFSET_X..]) as f64,
            E::read_f32(&bytes[offset::QOFFSET_X + 4..]) as f64,
            E::read_f32(&bytes[offset::QOFFSET_X + 8..]) as f64,
        ],
        srow,
        magic,
    })
}

/// Sibling `.img` path for a `.hdr` file, preserving a `.gz` suffix.
fn img_companion(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    let img_name = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        format!("{name}.img")
    };
    path.with_file_name(img_name)
}

/// Reads a header and its full (all-frame) payload in the stored datatype.
pub fn read_raw(path: &Path) -> Result<(NiftiHeader, VoxelData), NiftiError> {
    let bytes = read_file_bytes(path)?;
    let header = parse_header(&bytes)?;

    let n = header.voxels_per_frame() * header.frames;
    let needed = n * header.datatype.byte_size();
    let payload_bytes: Vec<u8> = if header.magic == MAGIC_PAIR {
        let img = read_file_bytes(&img_companion(path))?;
        if img.len() < header.vox_offset {
            return Err(NiftiError::TruncatedData {
                expected: header.vox_offset + needed,
                got: img.len(),
            });
        }
        img[header.vox_offset..].to_vec()
    } else {
        if bytes.len() < header.vox_offset {
            return Err(NiftiError::TruncatedData {
                expected: header.vox_offset + needed,
                got: bytes.len(),
            });
        }
        bytes[header.vox_offset..].to_vec()
    };
    if payload_bytes.len() < needed {
        return Err(NiftiError::TruncatedData {
            expected: needed,
            got: payload_bytes.len(),
        });
    }

    let data = match header.endianness {
        Endianness::Little => decode_payload::<LittleEndian>(header.datatype, &payload_bytes, n),
        Endianness::Big => decode_payload::<BigEndian>(header.datatype, &payload_bytes, n),
    };
    Ok((header, data))
}

fn decode_payload<E: ByteOrder>(datatype: Datatype, bytes: &[u8], n: usize) -> VoxelData {
    match datatype {
        Datatype::Uint8 => VoxelData::Uint8(bytes[..n].to_vec()),
        Datatype::Int16 => {
            let mut v = vec![0i16; n];
            E::read_i16_into(&bytes[..2 * n], &mut v);
            VoxelData::Int16(v)
        }
        Datatype::Int32 => {
            let mut v = vec![0i32; n];
            E::read_i32_into(&bytes[..4 * n], &mut v);
            VoxelData::Int32(v)
        }
        Datatype::Float32 => {
            let mut v = vec![0.0f32; n];
            E::read_f32_into(&bytes[..4 * n], &mut v);
            VoxelData::Float32(v)
        }
        Datatype::Float64 => {
            let mut v = vec![0.0f64; n];
            E::read_f64_into(&bytes[..8 * n], &mut v);
            VoxelData::Float64(v)
        }
    }
}

/// Reads the header only (for grid lookups that do not need the payload).
pub fn read_header(path: &Path) -> Result<NiftiHeader, NiftiError> {
    let bytes = read_file_bytes(path)?;
    parse_header(&bytes)
}

fn select_frame(header: &NiftiHeader, frame: Option<usize>) -> Result<usize, NiftiError> {
    match frame {
        None if header.frames == 1 => Ok(0),
        None => Err(NiftiError::FrameRequired {
            frames: header.frames,
        }),
        Some(f) if f < header.frames => Ok(f),
        Some(f) => Err(NiftiError::FrameOutOfRange {
            frame: f,
            frames: header.frames,
        }),
    }
}

/// Reads one frame of a file as a scalar image.
pub fn read_intensity(
    path: &Path,
    frame: Option<usize>,
) -> Result<(NiftiHeader, IntensityVolume), NiftiError> {
    let (header, raw) = read_raw(path)?;
    let f = select_frame(&header, frame)?;
    let n = header.voxels_per_frame();
    let values = raw.slice_f64(f * n, n);
    let grid = header_grid(&header)?;
    let volume = IntensityVolume::new(grid, values)?;
    Ok((header, volume))
}

/// Reads one frame of a file as a segmentation, applying the layout's label
/// mapping.
pub fn read_label(
    path: &Path,
    layout: LabelLayout,
    frame: Option<usize>,
) -> Result<(NiftiHeader, LabelVolume), NiftiError> {
    let (header, raw) = read_raw(path)?;
    let f = select_frame(&header, frame)?;
    let n = header.voxels_per_frame();
    let stored = raw
        .slice_i64(f * n, n)
        .ok_or(NiftiError::NonIntegralDatatype(header.datatype))?;
    let mut mapped = Vec::with_capacity(n);
    for value in stored {
        mapped.push(
            layout
                .decode(value)
                .ok_or(NiftiError::BadLabelValue { value, layout })?,
        );
    }
    let grid = header_grid(&header)?;
    let volume = LabelVolume::new(grid, mapped)?;
    Ok((header, volume))
}

fn put_f32<E: ByteOrder>(buf: &mut [u8], at: usize, v: f32) {
    E::write_f32(&mut buf[at..at + 4], v);
}

fn put_i16<E: ByteOrder>(buf: &mut [u8], at: usize, v: i16) {
    E::write_i16(&mut buf[at..at + 2], v);
}

/// Writes a single-file volume. Little-endian, sform only (`sform_code` 1),
/// payload at offset 352 with a zeroed extender. A `.gz` suffix selects
/// gzip compression. `template`, when given, contributes the free-text
/// `descrip` and the units byte; geometry and datatype always come from the
/// arguments.
pub fn write_raw(
    path: &Path,
    grid: &VoxelGrid,
    data: &VoxelData,
    template: Option<&NiftiHeader>,
) -> Result<(), NiftiError> {
    if data.len() != grid.num_voxels() {
        return Err(GeomError::DataLengthMismatch {
            got: data.len(),
            expected: grid.num_voxels(),
        }
        .into());
    }
    let (nx, ny, nz) = grid.dims();
    for d in [nx, ny, nz] {
        if d > i16::MAX as usize {
            return Err(NiftiError::DimsOverflow(d));
        }
    }

    let mut hdr = vec![0u8; DEFAULT_VOX_OFFSET];
    LittleEndian::write_i32(&mut hdr[offset::SIZEOF_HDR..], HEADER_SIZE as i32);
    put_i16::<LittleEndian>(&mut hdr, offset::DIM, 3);
    put_i16::<LittleEndian>(&mut hdr, offset::DIM + 2, nx as i16);
    put_i16::<LittleEndian>(&mut hdr, offset::DIM + 4, ny as i16);
    put_i16::<LittleEndian>(&mut hdr, offset::DIM + 6, nz as i16);
    for axis in 4..8 {
        put_i16::<LittleEndian>(&mut hdr, offset::DIM + 2 * axis, 1);
    }
    put_i16::<LittleEndian>(&mut hdr, offset::DATATYPE, data.datatype().code());
    put_i16::<LittleEndian>(&mut hdr, offset::BITPIX, data.datatype().bitpix());
    let spacing = grid.spacing();
    put_f32::<LittleEndian>(&mut hdr, offset::PIXDIM, 1.0);
    for (axis, s) in spacing.iter().enumerate() {
        put_f32::<LittleEndian>(&mut hdr, offset::PIXDIM + 4 * (axis + 1), *s as f32);
    }
    put_f32::<LittleEndian>(&mut hdr, offset::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    put_f32::<LittleEndian>(&mut hdr, offset::SCL_SLOPE, 1.0);
    put_f32::<LittleEndian>(&mut hdr, offset::SCL_INTER, 0.0);
    // spatial units: millimetres
    hdr[offset::XYZT_UNITS] = template.map_or(2, |t| t.xyzt_units);
    let descrip = template.map_or("", |t| t.descrip.as_str());
    let descrip_bytes = descrip.as_bytes();
    let n_desc = descrip_bytes.len().min(79);
    hdr[offset::DESCRIP..offset::DESCRIP + n_desc].copy_from_slice(&descrip_bytes[..n_desc]);
    put_i16::<LittleEndian>(&mut hdr, offset::QFORM_CODE, 0);
    put_i16::<LittleEndian>(&mut hdr, offset::SFORM_CODE, 1);
    let m = grid.affine().matrix();
    for r in 0..3 {
        for c in 0..4 {
            put_f32::<LittleEndian>(&mut hdr, offset::SROW_X + 16 * r + 4 * c, m[r][c] as f32);
        }
    }
    hdr[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(&MAGIC_SINGLE);
    // bytes 348..352 stay zero: no extensions

    let mut out = hdr;
    out.reserve(data.len() * data.datatype().byte_size());
    match data {
        VoxelData::Uint8(v) => out.extend_from_slice(v),
        VoxelData::Int16(v) => {
            let mut buf = vec![0u8; 2 * v.len()];
            LittleEndian::write_i16_into(v, &mut buf);
            out.extend_from_slice(&buf);
        }
        VoxelData::Int32(v) => {
            let mut buf = vec![0u8; 4 * v.len()];
            LittleEndian::write_i32_into(v, &mut buf);
            out.extend_from_slice(&buf);
        }
        VoxelData::Float32(v) => {
            let mut buf = vec![0u8; 4 * v.len()];
            LittleEndian::write_f32_into(v, &mut buf);
            out.extend_from_slice(&buf);
        }
        VoxelData::Float64(v) => {
            let mut buf = vec![0u8; 8 * v.len()];
            LittleEndian::write_f64_into(v, &mut buf);
            out.extend_from_slice(&buf);
        }
    }

    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path)?;
        let mut enc = GzEncoder::new(file, Compression::new(6));
        enc.write_all(&out)?;
        enc.finish()?;
    } else {
        fs::write(path, &out)?;
    }
    Ok(())
}

/// Writes a segmentation as uint8 under the given on-disk layout.
pub fn write_label(
    path: &Path,
    volume: &LabelVolume,
    layout: LabelLayout,
) -> Result<(), NiftiError> {
    let encoded: Vec<u8> = volume.data().iter().map(|&v| layout.encode(v)).collect();
    write_raw(path, volume.grid(), &VoxelData::Uint8(encoded), None)
}

/// Writes a scalar image, converting to the requested datatype. Integer
/// targets round to nearest and saturate at the type bounds.
pub fn write_intensity(
    path: &Path,
    volume: &IntensityVolume,
    datatype: Datatype,
) -> Result<(), NiftiError> {
    let data = match datatype {
        Datatype::Uint8 => VoxelData::Uint8(
            volume.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        ),
        Datatype::Int16 => VoxelData::Int16(
            volume
                .data()
                .iter()
                .map(|&v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                .collect(),
        ),
        Datatype::Int32 => VoxelData::Int32(
            volume
                .data()
                .iter()
                .map(|&v| v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                .collect(),
        ),
        Datatype::Float32 => {
            VoxelData::Float32(volume.data().iter().map(|&v| v as f32).collect())
        }
        Datatype::Float64 => VoxelData::Float64(volume.data().to_vec()),
    };
    write_raw(path, volume.grid(), &data, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::voxel_to_world;
    use tempfile::TempDir;

    fn test_grid() -> VoxelGrid {
        // scanner-like: 1.25 x 1.25 x 10 mm, slightly rotated, dyadic origin
        let c = (0.25_f64).cos();
        let s = (0.25_f64).sin();
        let a = Affine4::from_rows([
            [1.25 * c, -1.25 * s, 0.0, -61.875],
            [1.25 * s, 1.25 * c, 0.0, -52.5],
            [0.0, 0.0, 10.0, -40.0],
        ])
        .unwrap();
        VoxelGrid::new((5, 4, 3), a).unwrap()
    }

    fn affines_close(a: &Affine4, b: &Affine4, tol: f64) -> bool {
        (0..4).all(|r| (0..4).all(|c| (a.matrix()[r][c] - b.matrix()[r][c]).abs() <= tol))
    }

    /// Builds raw header + payload bytes by hand, for shapes `write_raw`
    /// never produces (big-endian, 4D, pair files).
    struct RawBuilder {
        big_endian: bool,
        dim: [i16; 8],
        datatype: Datatype,
        pixdim: [f32; 8],
        vox_offset: f32,
        qform_code: i16,
        sform_code: i16,
        srow: [[f32; 4]; 3],
        magic: [u8; 4],
    }

    impl RawBuilder {
        fn new_3d(dims: (i16, i16, i16), datatype: Datatype) -> Self {
            Self {
                big_endian: false,
                dim: [3, dims.0, dims.1, dims.2, 1, 1, 1, 1],
                datatype,
                pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                vox_offset: 352.0,
                qform_code: 0,
                sform_code: 1,
                srow: [
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                ],
                magic: MAGIC_SINGLE,
            }
        }

        fn header_bytes(&self) -> Vec<u8> {
            let mut h = vec![0u8; self.vox_offset.max(HEADER_SIZE as f32) as usize];
            macro_rules! w {
                ($f:ident, $at:expr, $v:expr) => {
                    if self.big_endian {
                        BigEndian::$f(&mut h[$at..], $v)
                    } else {
                        LittleEndian::$f(&mut h[$at..], $v)
                    }
                };
            }
            w!(write_i32, offset::SIZEOF_HDR, HEADER_SIZE as i32);
            for (i, d) in self.dim.iter().enumerate() {
                w!(write_i16, offset::DIM + 2 * i, *d);
            }
            w!(write_i16, offset::DATATYPE, self.datatype.code());
            w!(write_i16, offset::BITPIX, self.datatype.bitpix());
            for (i, p) in self.pixdim.iter().enumerate() {
                w!(write_f32, offset::PIXDIM + 4 * i, *p);
            }
            w!(write_f32, offset::VOX_OFFSET, self.vox_offset);
            w!(write_i16, offset::QFORM_CODE, self.qform_code);
            w!(write_i16, offset::SFORM_CODE, self.sform_code);
            for r in 0..3 {
                for c in 0..4 {
                    w!(write_f32, offset::SROW_X + 16 * r + 4 * c, self.srow[r][c]);
                }
            }
            h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(&self.magic);
            h
        }

        fn with_payload_i16(&self, values: &[i16]) -> Vec<u8> {
            let mut bytes = self.header_bytes();
            for v in values {
                let mut b = [0u8; 2];
                if self.big_endian {
                    BigEndian::write_i16(&mut b, *v);
                } else {
                    LittleEndian::write_i16(&mut b, *v);
                }
                bytes.extend_from_slice(&b);
            }
            bytes
        }

        fn with_payload_u8(&self, values: &[u8]) -> Vec<u8> {
            let mut bytes = self.header_bytes();
            bytes.extend_from_slice(values);
            bytes
        }
    }

    #[test]
    fn round_trip_every_datatype_is_bit_identical() {
        let dir = TempDir::new().unwrap();
        let grid = test_grid();
        let cases = [
            VoxelData::Uint8((0..60).map(|i| (i * 3) as u8).collect()),
            VoxelData::Int16((0..60).map(|i| i as i16 * -7 + 3).collect()),
            VoxelData::Int32((0..60).map(|i| i * 100_001 - 50).collect()),
            VoxelData::Float32((0..60).map(|i| (i as f32).sin()).collect()),
            VoxelData::Float64((0..60).map(|i| (i as f64).exp() / 1e20).collect()),
        ];
        for (n, data) in cases.iter().enumerate() {
            let path = dir.path().join(format!("case{n}.nii"));
            write_raw(&path, &grid, data, None).unwrap();
            let (h, back) = read_raw(&path).unwrap();
            assert_eq!(&back, data);
            assert_eq!(h.dims, grid.dims());
            let (affine, source) = resolve_affine(&h).unwrap();
            assert_eq!(source, AffineSource::Sform);
            assert!(affines_close(&affine, grid.affine(), 1e-6));
        }
    }

    #[test]
    fn gzip_round_trip() {
        let dir = TempDir::new().unwrap();
        let grid = test_grid();
        let data = VoxelData::Int16((0..60).map(|i| (i * i) as i16).collect());
        let path = dir.path().join("vol.nii.gz");
        write_raw(&path, &grid, &data, None).unwrap();
        // really compressed?
        let on_disk = fs::read(&path).unwrap();
        assert_eq!(&on_disk[..2], &[0x1f, 0x8b]);
        let (h, back) = read_raw(&path).unwrap();
        assert_eq!(back, data);
        let (affine, _) = resolve_affine(&h).unwrap();
        assert!(affines_close(&affine, grid.affine(), 1e-6));
    }

    #[test]
    fn big_endian_files_parse() {
        let dir = TempDir::new().unwrap();
        let mut b = RawBuilder::new_3d((2, 2, 1), Datatype::Int16);
        b.big_endian = true;
        let values = [1i16, -2, 300, 12345];
        let path = dir.path().join("be.nii");
        fs::write(&path, b.with_payload_i16(&values)).unwrap();
        let (h, data) = read_raw(&path).unwrap();
        assert_eq!(h.endianness, Endianness::Big);
        assert_eq!(data, VoxelData::Int16(values.to_vec()));
    }

    #[test]
    fn garbage_sizeof_hdr_is_bad_endianness() {
        let dir = TempDir::new().unwrap();
        let mut bytes = RawBuilder::new_3d((2, 2, 1), Datatype::Uint8).with_payload_u8(&[0; 4]);
        bytes[0] = 0xde;
        bytes[1] = 0xad;
        bytes[2] = 0xbe;
        bytes[3] = 0xef;
        let path = dir.path().join("bad.nii");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_raw(&path), Err(NiftiError::BadEndianness)));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = TempDir::new().unwrap();
        let mut b = RawBuilder::new_3d((2, 2, 1), Datatype::Uint8);
        b.magic = *b"nul\0";
        let path = dir.path().join("magic.nii");
        fs::write(&path, b.with_payload_u8(&[0; 4])).unwrap();
        assert!(matches!(read_raw(&path), Err(NiftiError::BadMagic(_))));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = TempDir::new().unwrap();
        let b = RawBuilder::new_3d((4, 4, 2), Datatype::Int32);
        let path = dir.path().join("short.nii");
        // 32 voxels * 4 bytes needed, write only 10 bytes
        let mut bytes = b.header_bytes();
        bytes.extend_from_slice(&[0u8; 10]);
        fs::write(&path, bytes).unwrap();
        match read_raw(&path) {
            Err(NiftiError::TruncatedData { expected, got }) => {
                assert_eq!(expected, 128);
                assert_eq!(got, 10);
            }
            other => panic!("expected TruncatedData, got {other:?}"),
        }
    }

    #[test]
    fn unknown_datatype_code_is_rejected() {
        let dir = TempDir::new().unwrap();
        let mut bytes = RawBuilder::new_3d((2, 2, 1), Datatype::Uint8).with_payload_u8(&[0; 4]);
        LittleEndian::write_i16(&mut bytes[offset::DATATYPE..], 128); // RGB, unsupported
        LittleEndian::write_i16(&mut bytes[offset::BITPIX..], 24);
        let path = dir.path().join("rgb.nii");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_raw(&path),
            Err(NiftiError::UnsupportedDatatype(128))
        ));
    }

    #[test]
    fn hdr_img_pair_reads() {
        let dir = TempDir::new().unwrap();
        let mut b = RawBuilder::new_3d((2, 2, 1), Datatype::Uint8);
        b.magic = MAGIC_PAIR;
        b.vox_offset = 0.0;
        fs::write(dir.path().join("pair.hdr"), b.header_bytes()).unwrap();
        fs::write(dir.path().join("pair.img"), [7u8, 8, 9, 10]).unwrap();
        let (h, data) = read_raw(&dir.path().join("pair.hdr")).unwrap();
        assert_eq!(h.magic, MAGIC_PAIR);
        assert_eq!(data, VoxelData::Uint8(vec![7, 8, 9, 10]));
    }

    #[test]
    fn qform_identity_quaternion_gives_spacing_diagonal() {
        let header = NiftiHeader {
            endianness: Endianness::Little,
            ndim: 3,
            dims: (4, 4, 2),
            frames: 1,
            datatype: Datatype::Uint8,
            pixdim: [1.0, 1.25, 1.25, 10.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: 352,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: String::new(),
            qform_code: 1,
            sform_code: 0,
            quatern: [0.0, 0.0, 0.0],
            qoffset: [-10.0, -20.0, -30.0],
            srow: [[0.0; 4]; 3],
            magic: MAGIC_SINGLE,
        };
        let (affine, source) = resolve_affine(&header).unwrap();
        assert_eq!(source, AffineSource::Qform);
        let mut expected = Affine4::scaling([1.25, 1.25, 10.0]).matrix().to_owned();
        expected[0][3] = -10.0;
        expected[1][3] = -20.0;
        expected[2][3] = -30.0;
        assert!(affines_close(
            &affine,
            &Affine4::from_matrix(expected).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn qform_negative_qfac_flips_third_column() {
        let mut header = NiftiHeader {
            endianness: Endianness::Little,
            ndim: 3,
            dims: (4, 4, 2),
            frames: 1,
            datatype: Datatype::Uint8,
            pixdim: [-1.0, 1.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: 352,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: String::new(),
            qform_code: 1,
            sform_code: 0,
            quatern: [0.0, 0.0, 0.0],
            qoffset: [0.0, 0.0, 0.0],
            srow: [[0.0; 4]; 3],
            magic: MAGIC_SINGLE,
        };
        let (affine, _) = resolve_affine(&header).unwrap();
        assert_eq!(affine.matrix()[2][2], -2.0);
        header.pixdim[0] = 0.0; // unset qfac means +1
        let (affine, _) = resolve_affine(&header).unwrap();
        assert_eq!(affine.matrix()[2][2], 2.0);
    }

    #[test]
    fn sform_beats_qform_and_fallback_flags() {
        let mut header = NiftiHeader {
            endianness: Endianness::Little,
            ndim: 3,
            dims: (2, 2, 2),
            frames: 1,
            datatype: Datatype::Uint8,
            pixdim: [1.0, 3.0, 3.0, 3.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: 352,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: String::new(),
            qform_code: 1,
            sform_code: 2,
            quatern: [0.0, 0.0, 0.0],
            qoffset: [1.0, 1.0, 1.0],
            srow: [
                [2.0, 0.0, 0.0, 5.0],
                [0.0, 2.0, 0.0, 6.0],
                [0.0, 0.0, 2.0, 7.0],
            ],
            magic: MAGIC_SINGLE,
        };
        let (affine, source) = resolve_affine(&header).unwrap();
        assert_eq!(source, AffineSource::Sform);
        assert_eq!(affine.matrix()[0][0], 2.0);

        header.sform_code = 0;
        let (_, source) = resolve_affine(&header).unwrap();
        assert_eq!(source, AffineSource::Qform);

        header.qform_code = 0;
        let (affine, source) = resolve_affine(&header).unwrap();
        assert_eq!(source, AffineSource::PixdimFallback);
        assert_eq!(affine.matrix()[0][0], 3.0);
        assert_eq!(affine.matrix()[0][3], 0.0);
    }

    #[test]
    fn four_dimensional_files_need_a_frame_index() {
        let dir = TempDir::new().unwrap();
        let mut b = RawBuilder::new_3d((2, 2, 1), Datatype::Uint8);
        b.dim = [4, 2, 2, 1, 2, 1, 1, 1]; // two frames
        let path = dir.path().join("cine.nii");
        fs::write(&path, b.with_payload_u8(&[1, 1, 1, 1, 2, 2, 2, 2])).unwrap();

        assert!(matches!(
            read_intensity(&path, None),
            Err(NiftiError::FrameRequired { frames: 2 })
        ));
        let (_, frame0) = read_intensity(&path, Some(0)).unwrap();
        assert_eq!(frame0.data(), &[1.0, 1.0, 1.0, 1.0]);
        let (_, frame1) = read_intensity(&path, Some(1)).unwrap();
        assert_eq!(frame1.data(), &[2.0, 2.0, 2.0, 2.0]);
        assert!(matches!(
            read_intensity(&path, Some(2)),
            Err(NiftiError::FrameOutOfRange { frame: 2, frames: 2 })
        ));
    }

    #[test]
    fn challenge_labels_merge_on_read() {
        let dir = TempDir::new().unwrap();
        let b = RawBuilder::new_3d((4, 1, 1), Datatype::Uint8);
        let path = dir.path().join("gt.nii");
        fs::write(&path, b.with_payload_u8(&[0, 1, 2, 3])).unwrap();

        let (_, challenge) = read_label(&path, LabelLayout::Challenge, None).unwrap();
        assert_eq!(challenge.data(), &[0, 1, 1, 2]);
        // the same file is not a valid internal-layout segmentation
        assert!(matches!(
            read_label(&path, LabelLayout::Internal, None),
            Err(NiftiError::BadLabelValue { value: 3, .. })
        ));
    }

    #[test]
    fn challenge_labels_split_on_write() {
        let dir = TempDir::new().unwrap();
        let grid = VoxelGrid::new((3, 1, 1), Affine4::IDENTITY).unwrap();
        let volume = LabelVolume::new(grid, vec![0, 1, 2]).unwrap();
        let path = dir.path().join("pred.nii");
        write_label(&path, &volume, LabelLayout::Challenge).unwrap();
        let (_, raw) = read_raw(&path).unwrap();
        assert_eq!(raw, VoxelData::Uint8(vec![0, 1, 3]));
        // and reading it back under the same layout restores the original
        let (_, back) = read_label(&path, LabelLayout::Challenge, None).unwrap();
        assert_eq!(back.data(), volume.data());
    }

    #[test]
    fn label_read_rejects_float_storage() {
        let dir = TempDir::new().unwrap();
        let grid = VoxelGrid::new((2, 1, 1), Affine4::IDENTITY).unwrap();
        let path = dir.path().join("float_labels.nii");
        write_raw(&path, &grid, &VoxelData::Float32(vec![0.0, 1.0]), None).unwrap();
        assert!(matches!(
            read_label(&path, LabelLayout::Internal, None),
            Err(NiftiError::NonIntegralDatatype(Datatype::Float32))
        ));
    }

    #[test]
    fn write_rejects_dims_beyond_i16() {
        let grid = VoxelGrid::new((70_000, 1, 1), Affine4::IDENTITY).unwrap();
        let data = VoxelData::Uint8(vec![0; 70_000]);
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            write_raw(&dir.path().join("huge.nii"), &grid, &data, None),
            Err(NiftiError::DimsOverflow(70_000))
        ));
    }

    #[test]
    fn round_trip_preserves_world_positions() {
        let dir = TempDir::new().unwrap();
        let grid = test_grid();
        let path = dir.path().join("geom.nii");
        write_raw(&path, &grid, &VoxelData::Uint8(vec![0; 60]), None).unwrap();
        let (header, _) = read_raw(&path).unwrap();
        let reread = header_grid(&header).unwrap();
        for p in [[0.0, 0.0, 0.0], [4.0, 3.0, 2.0], [2.5, 1.5, 0.5]] {
            let a = voxel_to_world(p, &grid);
            let b = voxel_to_world(p, &reread);
            assert!(a.distance(b) < 1e-4);
        }
    }
}
