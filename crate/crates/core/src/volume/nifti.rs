//! Minimal NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.
//!
//! Reads uint8, int16, int32, float32 and float64 payloads in either byte
//! order. Scalars are written as float32, labels as uint8 or int16, and
//! displacement fields as float32 with the vector components on the fifth
//! dimension (`intent_code = NIFTI_INTENT_VECTOR`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Rotation3, UnitQuaternion};

use super::data::{LabelVolume, ScalarVolume};
use super::grid::ImageGrid;
use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const INTENT_VECTOR: i16 = 1007;

/// On-disk voxel datatypes understood by the reader.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            other => return Err(Error::Nifti(format!("unsupported datatype code {other}"))),
        })
    }

    fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Datatype::U8 | Datatype::I16 | Datatype::I32)
    }
}

/// A decoded image: geometry, number of components per voxel and the raw
/// voxel values (component-major, each component in grid order).
#[derive(Clone, Debug)]
pub struct NiftiImage {
    pub grid: ImageGrid,
    pub components: usize,
    pub datatype: Datatype,
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Cursor<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[at..at + N]);
        if self.big_endian {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.arr(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.arr(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.arr(at))
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Decodes a NIfTI-1 byte stream, gunzipping first when needed.
pub fn decode(raw: &[u8]) -> Result<NiftiImage> {
    let owned;
    let bytes = if is_gzip(raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw).read_to_end(&mut out)?;
        owned = out;
        &owned[..]
    } else {
        raw
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Nifti(format!("file too small for a header ({} bytes)", bytes.len())));
    }
    let big_endian = match (i32::from_le_bytes(bytes[0..4].try_into().unwrap()), i32::from_be_bytes(bytes[0..4].try_into().unwrap())) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(Error::Nifti("sizeof_hdr is not 348".into())),
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(Error::Nifti(format!("unsupported magic {:?} (only single-file NIfTI-1)", String::from_utf8_lossy(magic))));
    }
    let c = Cursor { bytes, big_endian };

    let dim: Vec<i64> = (0..8).map(|i| c.i16(40 + 2 * i) as i64).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Nifti(format!("invalid dim[0] = {ndim}")));
    }
    let axis = |i: usize| -> Result<usize> {
        if i as i64 > ndim {
            return Ok(1);
        }
        if dim[i] < 1 {
            return Err(Error::Nifti(format!("dim[{i}] = {} is not positive", dim[i])));
        }
        Ok(dim[i] as usize)
    };
    let dims = [axis(1)?, axis(2)?, axis(3)?];
    let extra: usize = (4..=7).map(axis).collect::<Result<Vec<_>>>()?.iter().product();
    let datatype = Datatype::from_code(c.i16(70))?;
    let pixdim: Vec<f64> = (0..8).map(|i| c.f32(76 + 4 * i) as f64).collect();
    let vox_offset = c.f32(108) as usize;
    let slope = c.f32(112) as f64;
    let inter = c.f32(116) as f64;

    let (spacing, origin, direction) = geometry(&c, &pixdim)?;
    let grid = ImageGrid::new(dims, spacing, origin, direction)?;

    let count = grid.len() * extra;
    let need = vox_offset + count * datatype.bytes();
    if bytes.len() < need {
        return Err(Error::Nifti(format!("payload truncated: need {need} bytes, have {}", bytes.len())));
    }
    let mut data = Vec::with_capacity(count);
    for n in 0..count {
        let at = vox_offset + n * datatype.bytes();
        let v = match datatype {
            Datatype::U8 => bytes[at] as f64,
            Datatype::I16 => c.i16(at) as f64,
            Datatype::I32 => c.i32(at) as f64,
            Datatype::F32 => c.f32(at) as f64,
            Datatype::F64 => c.f64(at),
        };
        data.push(v);
    }
    if !datatype.is_integer() && slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok(NiftiImage { grid, components: extra, datatype, data })
}

/// Spacing, origin and direction from sform (preferred), qform, or pixdim.
fn geometry(c: &Cursor, pixdim: &[f64]) -> Result<(Vec3, Vec3, Mat3)> {
    let qform_code = c.i16(252);
    let sform_code = c.i16(254);
    if sform_code > 0 {
        let mut m = Mat3::zeros();
        let mut t = Vec3::zeros();
        for r in 0..3 {
            for col in 0..3 {
                m[(r, col)] = c.f32(280 + 16 * r + 4 * col) as f64;
            }
            t[r] = c.f32(280 + 16 * r + 12) as f64;
        }
        let spacing = Vec3::new(m.column(0).norm(), m.column(1).norm(), m.column(2).norm());
        if spacing.iter().all(|s| *s > 0.0 && s.is_finite()) {
            let mut dir = m;
            for col in 0..3 {
                let s = spacing[col];
                dir.column_mut(col).iter_mut().for_each(|v| *v /= s);
            }
            return Ok((spacing, t, orthonormal(dir)?));
        }
        log::warn!("sform is degenerate; falling back to qform");
    }
    let spacing = Vec3::new(pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs());
    if qform_code > 0 {
        let b = c.f32(256) as f64;
        let cq = c.f32(260) as f64;
        let d = c.f32(264) as f64;
        let a = (1.0 - (b * b + cq * cq + d * d)).max(0.0).sqrt();
        let mut r = Mat3::new(
            a * a + b * b - cq * cq - d * d,
            2.0 * (b * cq - a * d),
            2.0 * (b * d + a * cq),
            2.0 * (b * cq + a * d),
            a * a + cq * cq - b * b - d * d,
            2.0 * (cq * d - a * b),
            2.0 * (b * d - a * cq),
            2.0 * (cq * d + a * b),
            a * a + d * d - cq * cq - b * b,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        r.column_mut(2).iter_mut().for_each(|v| *v *= qfac);
        let t = Vec3::new(c.f32(268) as f64, c.f32(272) as f64, c.f32(276) as f64);
        return Ok((spacing, t, orthonormal(r)?));
    }
    log::warn!("neither sform nor qform present; assuming identity orientation");
    Ok((spacing, Vec3::zeros(), Mat3::identity()))
}

/// Accepts directions orthonormal to float32 storage precision and
/// re-orthonormalizes them; anything further off is rejected.
fn orthonormal(dir: Mat3) -> Result<Mat3> {
    let dev = (dir.transpose() * dir - Mat3::identity()).abs().max();
    if !(dev < 1e-4) {
        return Err(Error::Nifti(format!("direction matrix is not orthonormal (max |DᵀD - I| = {dev:e})")));
    }
    let svd = dir.svd(true, true);
    Ok(svd.u.unwrap() * svd.v_t.unwrap())
}

fn header(grid: &ImageGrid, components: usize, datatype: Datatype) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let d = grid.dims();
    let mut dim = [3i16, d[0] as i16, d[1] as i16, d[2] as i16, 1, 1, 1, 1];
    if components > 1 {
        dim[0] = 5;
        dim[5] = components as i16;
        put_i16(&mut h, 68, INTENT_VECTOR);
    }
    for (i, v) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *v);
    }
    put_i16(&mut h, 70, datatype.code());
    put_i16(&mut h, 72, (datatype.bytes() * 8) as i16);

    let dir = grid.direction();
    let (qfac, rot) = if dir.determinant() < 0.0 {
        let mut r = *dir;
        r.column_mut(2).iter_mut().for_each(|v| *v = -*v);
        (-1.0f32, r)
    } else {
        (1.0, *dir)
    };
    let s = grid.spacing();
    let pixdim = [qfac, s.x as f32, s.y as f32, s.z as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, v) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *v);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // mm
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    put_f32(&mut h, 256, q.i as f32);
    put_f32(&mut h, 260, q.j as f32);
    put_f32(&mut h, 264, q.k as f32);
    let o = grid.origin();
    put_f32(&mut h, 268, o.x as f32);
    put_f32(&mut h, 272, o.y as f32);
    put_f32(&mut h, 276, o.z as f32);
    let m = grid.index_to_world_matrix();
    for r in 0..3 {
        for col in 0..3 {
            put_f32(&mut h, 280 + 16 * r + 4 * col, m[(r, col)] as f32);
        }
        put_f32(&mut h, 280 + 16 * r + 12, o[r] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Encodes an image; values are converted to `datatype`.
pub fn encode(grid: &ImageGrid, components: usize, datatype: Datatype, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != grid.len() * components {
        return Err(Error::LengthMismatch { expected: grid.len() * components, got: data.len() });
    }
    if grid.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Nifti("dimension exceeds the NIfTI-1 limit".into()));
    }
    let mut out = header(grid, components, datatype);
    out.reserve(data.len() * datatype.bytes());
    for &v in data {
        match datatype {
            Datatype::U8 => out.push(v as u8),
            Datatype::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Datatype::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Datatype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    if is_gz_path(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    decode(&fs::read(path)?)
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let img = read_nifti(path)?;
    if img.components != 1 {
        return Err(Error::Nifti(format!("expected a scalar volume, found {} components", img.components)));
    }
    ScalarVolume::new(img.grid, img.data)
}

/// Loads a label map; every non-zero id gets the name from `names` or a
/// generated `label_<id>`.
pub fn load_labels(path: impl AsRef<Path>, names: &BTreeMap<u16, String>) -> Result<LabelVolume> {
    let img = read_nifti(path)?;
    if img.components != 1 {
        return Err(Error::Nifti("label volumes must have one component".into()));
    }
    let mut labels = Vec::with_capacity(img.data.len());
    let mut all = names.clone();
    for &v in &img.data {
        if v < 0.0 || v > u16::MAX as f64 || v.fract() != 0.0 {
            return Err(Error::Nifti(format!("invalid label value {v}")));
        }
        let l = v as u16;
        if l != 0 {
            all.entry(l).or_insert_with(|| format!("label_{l}"));
        }
        labels.push(l);
    }
    LabelVolume::new(img.grid, labels, all)
}

pub fn load_vector_field(path: impl AsRef<Path>) -> Result<(ImageGrid, Vec<Vec3>)> {
    let img = read_nifti(path)?;
    if img.components != 3 {
        return Err(Error::Nifti(format!("expected 3 vector components, found {}", img.components)));
    }
    let n = img.grid.len();
    let v = (0..n).map(|o| Vec3::new(img.data[o], img.data[n + o], img.data[2 * n + o])).collect();
    Ok((img.grid, v))
}

/// Writes a float32 scalar volume.
pub fn save_scalar(vol: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode(vol.grid(), 1, Datatype::F32, vol.values())?)
}

/// Writes a uint8 label map when every id fits, int16 otherwise.
pub fn save_labels(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let max = vol.labels().iter().copied().max().unwrap_or(0);
    let dt = if max <= u8::MAX as u16 {
        Datatype::U8
    } else if max <= i16::MAX as u16 {
        Datatype::I16
    } else {
        return Err(Error::Nifti(format!("label {max} does not fit int16")));
    };
    let data: Vec<f64> = vol.labels().iter().map(|&l| l as f64).collect();
    write_bytes(path.as_ref(), &encode(vol.grid(), 1, dt, &data)?)
}

pub fn save_vector_field(grid: &ImageGrid, vectors: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    let n = grid.len();
    if vectors.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: vectors.len() });
    }
    let mut data = Vec::with_capacity(3 * n);
    for c in 0..3 {
        data.extend(vectors.iter().map(|v| v[c]));
    }
    write_bytes(path.as_ref(), &encode(grid, 3, Datatype::F32, &data)?)
}
