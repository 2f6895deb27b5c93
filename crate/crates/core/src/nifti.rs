//! NIfTI-1 reading and writing (`.nii` and `.nii.gz`).
//!
//! Only single-file NIfTI-1 is handled. Orientation fields are carried
//! through [`SpatialMeta`] untouched. Scale slope/intercept are applied on
//! read and written back as `(1, 0)`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryMask3, Dims3, Image, Spacing, SpatialMeta, Volume};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

fn bytes_per_voxel(code: i16) -> Option<usize> {
    Some(match code {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        _ => return None,
    })
}

/// Endian-aware field reader over the raw header bytes.
struct Fields<'a> {
    buf: &'a [u8],
    swap: bool,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.swap {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }

    fn f32s<const N: usize>(&self, off: usize) -> [f32; N] {
        std::array::from_fn(|i| self.f32(off + 4 * i))
    }
}

/// Parsed header subset plus the decoded voxel values in `f64`.
struct Decoded {
    dims: Dims3,
    spacing: Spacing,
    meta: SpatialMeta,
    values: Vec<f64>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::with_capacity(raw.len() * 4);
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::InvalidNifti { path: path.to_path_buf(), reason: format!("gzip stream: {e}") })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn decode(path: &Path, buf: &[u8]) -> Result<Decoded> {
    let corrupt = |reason: String| Error::InvalidNifti { path: path.to_path_buf(), reason };
    if buf.len() < HEADER_SIZE {
        return Err(corrupt(format!("file has {} bytes, header needs 348", buf.len())));
    }
    let le = i32::from_le_bytes(buf[0..4].try_into().unwrap());
    let swap = match le {
        348 => false,
        _ if i32::from_be_bytes(buf[0..4].try_into().unwrap()) == 348 => true,
        other => return Err(corrupt(format!("sizeof_hdr is {other}, expected 348"))),
    };
    if &buf[344..347] != b"n+1" {
        return Err(corrupt("magic is not 'n+1' (only single-file NIfTI-1 is supported)".into()));
    }
    let f = Fields { buf, swap };

    let dim: [i16; 8] = std::array::from_fn(|i| f.i16(40 + 2 * i));
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(corrupt(format!("dim[0] = {ndim}")));
    }
    // Trailing singleton dimensions (e.g. a 4D file with one frame) are still a 3D volume.
    let extra_singletons = (4..=ndim as usize).all(|i| dim[i] == 1);
    if ndim < 3 || !extra_singletons {
        return Err(Error::NotThreeDimensional { path: path.to_path_buf(), ndim });
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(corrupt(format!("non-positive extent in dim {:?}", &dim[1..4])));
    }
    let dims = Dims3::new(dim[1] as usize, dim[2] as usize, dim[3] as usize);

    let code = f.i16(70);
    let bpv = bytes_per_voxel(code).ok_or(Error::UnsupportedDatatype { path: path.to_path_buf(), code })?;

    let pixdim = f.f32s::<8>(76);
    let spacing = Spacing::new(pixdim[1].abs() as f64, pixdim[2].abs() as f64, pixdim[3].abs() as f64)
        .map_err(|_| corrupt(format!("invalid voxel spacing {:?}", &pixdim[1..4])))?;

    let vox_offset = f.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(corrupt(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = dims.len();
    let end = start + n * bpv;
    if buf.len() < end {
        return Err(corrupt(format!("truncated data: need {} bytes, have {}", end, buf.len())));
    }

    let slope = f.f32(112);
    let inter = f.f32(116);
    let (slope, inter) = if slope != 0.0 && slope.is_finite() {
        (slope as f64, if inter.is_finite() { inter as f64 } else { 0.0 })
    } else {
        (1.0, 0.0)
    };

    let meta = SpatialMeta {
        qform_code: f.i16(252),
        sform_code: f.i16(254),
        qfac: pixdim[0],
        quatern: f.f32s(256),
        qoffset: f.f32s(268),
        srow_x: f.f32s(280),
        srow_y: f.f32s(296),
        srow_z: f.f32s(312),
        xyzt_units: buf[123],
    };

    let data = &buf[start..end];
    let raw = Fields { buf: data, swap };
    let mut values = Vec::with_capacity(n);
    macro_rules! each {
        ($t:ty, $w:expr) => {
            for i in 0..n {
                values.push(<$t>::from_le_bytes(raw.bytes::<$w>(i * $w)) as f64);
            }
        };
    }
    match code {
        DT_UINT8 => values.extend(data.iter().map(|&b| b as f64)),
        DT_INT8 => values.extend(data.iter().map(|&b| b as i8 as f64)),
        DT_INT16 => each!(i16, 2),
        DT_UINT16 => each!(u16, 2),
        DT_INT32 => each!(i32, 4),
        DT_UINT32 => each!(u32, 4),
        DT_FLOAT32 => each!(f32, 4),
        DT_FLOAT64 => each!(f64, 8),
        _ => unreachable!("datatype checked above"),
    }
    if slope != 1.0 || inter != 0.0 {
        for v in &mut values {
            *v = slope * *v + inter;
        }
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteVoxel { path: path.to_path_buf(), index });
    }
    Ok(Decoded { dims, spacing, meta, values })
}

/// Loads a 3D NIfTI-1 volume, converting intensities to `T`.
pub fn load_nifti<T: Scalar>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    let buf = read_bytes(path)?;
    let d = decode(path, &buf)?;
    let data = d.values.into_iter().map(T::from_f64_lossy).collect();
    Ok(Volume::from_parts(d.dims, d.spacing, d.meta, data))
}

/// Loads a 3D NIfTI-1 file as a mask; any nonzero voxel is foreground.
pub fn load_nifti_mask(path: impl AsRef<Path>) -> Result<BinaryMask3> {
    let path = path.as_ref();
    let buf = read_bytes(path)?;
    let d = decode(path, &buf)?;
    let bits = d.values.into_iter().map(|v| v != 0.0).collect();
    Ok(BinaryMask3::from_parts(d.dims, d.spacing, d.meta, bits))
}

fn encode_header(
    ndim: i16,
    dims: [usize; 3],
    spacing: [f64; 3],
    meta: &SpatialMeta,
    datatype: i16,
    bitpix: i16,
) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(&mut h, 0, &348i32.to_le_bytes());
    h[38] = b'r';
    let mut dim = [1i16; 8];
    dim[0] = ndim;
    for i in 0..3 {
        dim[i + 1] = i16::try_from(dims[i])
            .map_err(|_| Error::InvalidParameter(format!("extent {} exceeds the NIfTI-1 limit", dims[i])))?;
    }
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &datatype.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let mut pixdim = [1f32; 8];
    pixdim[0] = meta.qfac;
    for i in 0..3 {
        pixdim[i + 1] = spacing[i] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1f32.to_le_bytes());
    put(&mut h, 116, &0f32.to_le_bytes());
    h[123] = meta.xyzt_units;
    put(&mut h, 252, &meta.qform_code.to_le_bytes());
    put(&mut h, 254, &meta.sform_code.to_le_bytes());
    let floats = |h: &mut Vec<u8>, off: usize, v: &[f32]| {
        for (i, x) in v.iter().enumerate() {
            h[off + 4 * i..off + 4 * i + 4].copy_from_slice(&x.to_le_bytes());
        }
    };
    floats(&mut h, 256, &meta.quatern);
    floats(&mut h, 268, &meta.qoffset);
    floats(&mut h, 280, &meta.srow_x);
    floats(&mut h, 296, &meta.srow_y);
    floats(&mut h, 312, &meta.srow_z);
    put(&mut h, 344, b"n+1\0");
    Ok(h)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let gz = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".gz"));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let res = if gz {
        let mut enc = GzEncoder::new(w, Compression::fast());
        enc.write_all(bytes).and_then(|_| enc.finish()).and_then(|mut inner| inner.flush())
    } else {
        w.write_all(bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

/// Writes a volume as NIfTI-1 in its own precision (`float32` or `float64`).
pub fn save_nifti<T: Scalar>(vol: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = encode_header(
        3,
        vol.dims().as_array(),
        vol.spacing().as_array(),
        vol.meta(),
        T::NIFTI_DATATYPE,
        T::NIFTI_BITPIX,
    )?;
    out.reserve(std::mem::size_of_val(vol.data()));
    for &v in vol.data() {
        v.write_le(&mut out);
    }
    write_file(path.as_ref(), &out)
}

/// Writes a mask as unsigned 8-bit 0/1 voxels.
pub fn save_nifti_mask(mask: &BinaryMask3, path: impl AsRef<Path>) -> Result<()> {
    let mut out = encode_header(3, mask.dims().as_array(), mask.spacing().as_array(), mask.meta(), DT_UINT8, 8)?;
    out.extend(mask.bits().iter().map(|&b| b as u8));
    write_file(path.as_ref(), &out)
}

/// Writes a 2D image (e.g. a projection) as a two-dimensional NIfTI-1 file.
pub fn save_nifti_image<T: Scalar>(
    img: &Image<T>,
    spacing: Spacing,
    meta: &SpatialMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let d = img.dims();
    let mut out = encode_header(2, [d.h, d.w, 1], spacing.as_array(), meta, T::NIFTI_DATATYPE, T::NIFTI_BITPIX)?;
    for &v in img.pixels() {
        v.write_le(&mut out);
    }
    write_file(path.as_ref(), &out)
}
