//! Volume and mask containers.
//!
//! Memory layout is fixed project-wide: `x` (first axis, extent `H`) varies
//! fastest, then `y` (extent `W`), then `z` (extent `D`). Every per-voxel
//! kernel addresses voxels through [`Dims3::index`]; 2D images use
//! [`Dims2::index`] with the same `x`-fastest convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Voxel counts `(H, W, D)` along `x`, `y`, `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl Dims3 {
    pub const fn new(h: usize, w: usize, d: usize) -> Self {
        Self { h, w, d }
    }

    #[inline]
    pub const fn len(&self) -> usize {
        self.h * self.w * self.d
    }

    #[inline]
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear offset of voxel `(x, y, z)`.
    #[inline(always)]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.h * (y + self.w * z)
    }

    /// Inverse of [`Dims3::index`].
    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.h;
        let r = i / self.h;
        (x, r % self.w, r / self.w)
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.h, self.w, self.d]
    }

    /// In-plane dims `(H, W)`.
    pub const fn plane(&self) -> Dims2 {
        Dims2 { h: self.h, w: self.w }
    }
}

impl From<[usize; 3]> for Dims3 {
    fn from(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Pixel counts `(H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims2 {
    pub h: usize,
    pub w: usize,
}

impl Dims2 {
    pub const fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    #[inline]
    pub const fn len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub const fn index(&self, x: usize, y: usize) -> usize {
        x + self.h * y
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.h, i / self.h)
    }
}

/// Physical voxel size in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Spacing {
    pub const ISOTROPIC: Spacing = Spacing { x: 1.0, y: 1.0, z: 1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = Self { x, y, z };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.as_array() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "spacing components must be finite and positive, got {self:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn min(&self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::ISOTROPIC
    }
}

/// NIfTI orientation fields, carried verbatim and never interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialMeta {
    pub qform_code: i16,
    pub sform_code: i16,
    /// `pixdim[0]`, the qform handedness factor.
    pub qfac: f32,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub xyzt_units: u8,
}

impl Default for SpatialMeta {
    fn default() -> Self {
        Self {
            qform_code: 0,
            sform_code: 0,
            qfac: 1.0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            // millimeters
            xyzt_units: 2,
        }
    }
}

impl SpatialMeta {
    /// Meta of a sub-grid whose voxel `(0, 0, 0)` is voxel `origin` of this grid.
    ///
    /// Only the translation parts of the qform and sform change.
    pub fn shifted(&self, spacing: Spacing, origin: [usize; 3]) -> Self {
        let mut out = *self;
        let o = origin.map(|v| v as f64);
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(f64::from);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let qfac = if self.qfac < 0.0 { -1.0 } else { 1.0 };
            let r = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let v = [o[0] * spacing.x, o[1] * spacing.y, o[2] * spacing.z * qfac];
            for (row, off) in r.iter().zip(out.qoffset.iter_mut()) {
                *off = (*off as f64 + row[0] * v[0] + row[1] * v[1] + row[2] * v[2]) as f32;
            }
        }
        if self.sform_code > 0 {
            for row in [&mut out.srow_x, &mut out.srow_y, &mut out.srow_z] {
                let m = row.map(f64::from);
                row[3] = (m[3] + m[0] * o[0] + m[1] * o[1] + m[2] * o[2]) as f32;
            }
        }
        out
    }
}

fn check_len(dims: Dims3, len: usize) -> Result<()> {
    if dims.len() != len {
        return Err(Error::InvalidParameter(format!(
            "data length {len} does not match dims {:?} ({} voxels)",
            dims.as_array(),
            dims.len()
        )));
    }
    Ok(())
}

/// A 3D scalar field with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims3,
    spacing: Spacing,
    meta: SpatialMeta,
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    /// Builds a volume, rejecting mismatched lengths, bad spacing or non-finite data.
    pub fn new(dims: Dims3, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        check_len(dims, data.len())?;
        spacing.validate()?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!("non-finite intensity at linear index {i}")));
        }
        Ok(Self { dims, spacing, meta: SpatialMeta::default(), data })
    }

    pub fn filled(dims: Dims3, spacing: Spacing, value: T) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.len()])
    }

    /// Builds a volume from a per-voxel function of `(x, y, z)`.
    pub fn from_fn(dims: Dims3, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.d {
            for y in 0..dims.w {
                for x in 0..dims.h {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    /// Internal constructor for kernel outputs already known to be valid.
    pub(crate) fn from_parts(dims: Dims3, spacing: Spacing, meta: SpatialMeta, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, spacing, meta, data }
    }

    pub fn with_meta(mut self, meta: SpatialMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn meta(&self) -> &SpatialMeta {
        &self.meta
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    /// Same geometry, new values. `f` must keep values finite.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume::from_parts(self.dims, self.spacing, self.meta, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Precision conversion, e.g. `f32` working volumes to `f64` for evaluation.
    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        self.map(|v| U::from_f64_lossy(v.to_f64_lossless()))
    }

    /// `(min, max)` over all voxels.
    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub(crate) fn same_grid<U>(&self, other: &Volume<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(&self.dims.as_array(), &other.dims.as_array()));
        }
        Ok(())
    }
}

/// A boolean field aligned to a volume grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask3 {
    dims: Dims3,
    spacing: Spacing,
    meta: SpatialMeta,
    bits: Vec<bool>,
}

impl BinaryMask3 {
    pub fn new(dims: Dims3, spacing: Spacing, bits: Vec<bool>) -> Result<Self> {
        check_len(dims, bits.len())?;
        spacing.validate()?;
        Ok(Self { dims, spacing, meta: SpatialMeta::default(), bits })
    }

    pub fn empty(dims: Dims3, spacing: Spacing) -> Self {
        Self { dims, spacing, meta: SpatialMeta::default(), bits: vec![false; dims.len()] }
    }

    pub fn from_fn(dims: Dims3, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(dims.len());
        for z in 0..dims.d {
            for y in 0..dims.w {
                for x in 0..dims.h {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, bits)
    }

    pub(crate) fn from_parts(dims: Dims3, spacing: Spacing, meta: SpatialMeta, bits: Vec<bool>) -> Self {
        debug_assert_eq!(dims.len(), bits.len());
        Self { dims, spacing, meta, bits }
    }

    /// A mask sharing the geometry of `vol`.
    pub fn like<T: Scalar>(vol: &Volume<T>, bits: Vec<bool>) -> Result<Self> {
        check_len(vol.dims(), bits.len())?;
        Ok(Self::from_parts(vol.dims(), vol.spacing(), *vol.meta(), bits))
    }

    pub fn with_meta(mut self, meta: SpatialMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Result<Self> {
        spacing.validate()?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn meta(&self) -> &SpatialMeta {
        &self.meta
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.dims.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// The mask as a 0/1 volume.
    pub fn to_volume<T: Scalar>(&self) -> Volume<T> {
        Volume::from_parts(
            self.dims,
            self.spacing,
            self.meta,
            self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        )
    }

    pub(crate) fn check_same_dims(&self, other: &BinaryMask3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(&self.dims.as_array(), &other.dims.as_array()));
        }
        Ok(())
    }
}

/// A 2D scalar image, e.g. a projection along `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    dims: Dims2,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(dims: Dims2, pixels: Vec<T>) -> Result<Self> {
        if dims.len() != pixels.len() {
            return Err(Error::InvalidParameter(format!(
                "pixel count {} does not match dims ({}, {})",
                pixels.len(),
                dims.h,
                dims.w
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite pixel value".into()));
        }
        Ok(Self { dims, pixels })
    }

    pub(crate) fn from_parts(dims: Dims2, pixels: Vec<T>) -> Self {
        debug_assert_eq!(dims.len(), pixels.len());
        Self { dims, pixels }
    }

    pub fn dims(&self) -> Dims2 {
        self.dims
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[self.dims.index(x, y)]
    }
}

/// A 2D boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask2 {
    dims: Dims2,
    bits: Vec<bool>,
}

impl Mask2 {
    pub fn new(dims: Dims2, bits: Vec<bool>) -> Result<Self> {
        if dims.len() != bits.len() {
            return Err(Error::InvalidParameter(format!(
                "bit count {} does not match dims ({}, {})",
                bits.len(),
                dims.h,
                dims.w
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_fn(dims: Dims2, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for y in 0..dims.w {
            for x in 0..dims.h {
                bits.push(f(x, y));
            }
        }
        Self { dims, bits }
    }

    pub fn filled(dims: Dims2, value: bool) -> Self {
        Self { dims, bits: vec![value; dims.len()] }
    }

    pub fn dims(&self) -> Dims2 {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[self.dims.index(x, y)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Half-open in-plane crop rectangle `[x0, x1) x [y0, y1)`; `z` is never cropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
}

impl CropBox {
    pub fn full(dims: Dims3) -> Self {
        Self { x0: 0, x1: dims.h, y0: 0, y1: dims.w, z0: 0, z1: dims.d }
    }

    pub fn cropped_dims(&self) -> Dims3 {
        Dims3::new(self.x1 - self.x0, self.y1 - self.y0, self.z1 - self.z0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn validate(&self, dims: Dims3) -> Result<()> {
        let ok = self.x0 < self.x1
            && self.x1 <= dims.h
            && self.y0 < self.y1
            && self.y1 <= dims.w
            && self.z0 == 0
            && self.z1 == dims.d
            && dims.d > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCropBox(format!("{self:?} for dims {:?}", dims.as_array())))
        }
    }
}

/// Affine rescale to `[0, 1]` via `(v - min) / (max - min)`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN extrema are degenerate
pub fn minmax_normalize<T: Scalar>(vol: &Volume<T>) -> Result<Volume<T>> {
    let (lo, hi) = vol.min_max();
    if !(hi > lo) {
        return Err(Error::Degenerate(format!("cannot min-max normalize a constant volume (value {lo:?})")));
    }
    let range = hi - lo;
    Ok(vol.map(|v| ((v - lo) / range).max(T::zero()).min(T::one())))
}

fn crop_slices<E: Copy>(src: &[E], dims: Dims3, b: &CropBox) -> Vec<E> {
    let out = b.cropped_dims();
    let mut data = Vec::with_capacity(out.len());
    for z in b.z0..b.z1 {
        for y in b.y0..b.y1 {
            let start = dims.index(b.x0, y, z);
            data.extend_from_slice(&src[start..start + out.h]);
        }
    }
    data
}

/// Copies the in-plane rectangle of every slice.
pub fn apply_crop<T: Scalar>(vol: &Volume<T>, b: &CropBox) -> Result<Volume<T>> {
    b.validate(vol.dims())?;
    let data = crop_slices(vol.data(), vol.dims(), b);
    let meta = vol.meta.shifted(vol.spacing, [b.x0, b.y0, b.z0]);
    Ok(Volume::from_parts(b.cropped_dims(), vol.spacing(), meta, data))
}

/// Mask counterpart of [`apply_crop`], used to align labels with cropped outputs.
pub fn apply_crop_mask(mask: &BinaryMask3, b: &CropBox) -> Result<BinaryMask3> {
    b.validate(mask.dims())?;
    let bits = crop_slices(mask.bits(), mask.dims(), b);
    let meta = mask.meta.shifted(mask.spacing, [b.x0, b.y0, b.z0]);
    Ok(BinaryMask3::from_parts(b.cropped_dims(), mask.spacing(), meta, bits))
}
