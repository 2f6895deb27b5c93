//! In-plane cropping from projections along `z`.
//!
//! Average, maximum and standard-deviation projections are thresholded at a
//! top fraction, AND-merged, cleaned of small 2D regions and reduced to a
//! tight bounding rectangle that is applied to every slice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::percentile::{check_fraction, top_fraction_threshold};
use crate::scalar::Scalar;
use crate::volume::{apply_crop, CropBox, Dims3, Image, Mask2, Volume};

/// Average, maximum and intensity-variation (population std) projections.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet<T> {
    pub aip: Image<T>,
    pub mip: Image<T>,
    pub ivm: Image<T>,
}

/// 2D pixel neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity2 {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity2 {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(format!("2D connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity2> for u8 {
    fn from(c: Connectivity2) -> u8 {
        match c {
            Connectivity2::Four => 4,
            Connectivity2::Eight => 8,
        }
    }
}

impl Connectivity2 {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Self::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Self::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropParams {
    /// Retained top fraction for each projection mask.
    pub top_percent: f64,
    pub aip_percent: Option<f64>,
    pub mip_percent: Option<f64>,
    pub ivm_percent: Option<f64>,
    /// Regions with fewer pixels than this are cleared.
    pub min_region_px: usize,
    pub region_connectivity: Connectivity2,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            top_percent: 0.35,
            aip_percent: None,
            mip_percent: None,
            ivm_percent: None,
            min_region_px: 200,
            region_connectivity: Connectivity2::Eight,
        }
    }
}

impl CropParams {
    pub fn validate(&self) -> Result<()> {
        check_fraction(self.top_percent)?;
        for p in [self.aip_percent, self.mip_percent, self.ivm_percent].into_iter().flatten() {
            check_fraction(p)?;
        }
        Ok(())
    }

    /// `(aip, mip, ivm)` fractions after overrides.
    pub fn fractions(&self) -> (f64, f64, f64) {
        (
            self.aip_percent.unwrap_or(self.top_percent),
            self.mip_percent.unwrap_or(self.top_percent),
            self.ivm_percent.unwrap_or(self.top_percent),
        )
    }
}

/// Per-pixel mean, max and population standard deviation over `z`.
pub fn z_projections<T: Scalar>(vol: &Volume<T>) -> ProjectionSet<T> {
    let dims = vol.dims();
    let plane = dims.plane();
    let data = vol.data();
    let depth = T::from_usize(dims.d).unwrap();

    // Rows of the output plane are independent; each pixel reduces over z in order.
    let rows: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..dims.w)
        .into_par_iter()
        .map(|y| {
            let mut sum = vec![T::zero(); dims.h];
            let mut max = vec![T::neg_infinity(); dims.h];
            for z in 0..dims.d {
                let row = &data[dims.index(0, y, z)..][..dims.h];
                for x in 0..dims.h {
                    sum[x] = sum[x] + row[x];
                    max[x] = max[x].max(row[x]);
                }
            }
            let mean: Vec<T> = sum.into_iter().map(|s| s / depth).collect();
            let mut sq = vec![T::zero(); dims.h];
            for z in 0..dims.d {
                let row = &data[dims.index(0, y, z)..][..dims.h];
                for x in 0..dims.h {
                    let dev = row[x] - mean[x];
                    sq[x] = sq[x] + dev * dev;
                }
            }
            let std = sq.into_iter().map(|s| (s / depth).sqrt()).collect();
            (mean, max, std)
        })
        .collect();

    let mut aip = Vec::with_capacity(plane.len());
    let mut mip = Vec::with_capacity(plane.len());
    let mut ivm = Vec::with_capacity(plane.len());
    for (a, m, s) in rows {
        aip.extend(a);
        mip.extend(m);
        ivm.extend(s);
    }
    ProjectionSet {
        aip: Image::from_parts(plane, aip),
        mip: Image::from_parts(plane, mip),
        ivm: Image::from_parts(plane, ivm),
    }
}

/// Keeps pixels at or above the nearest-rank top-`p` threshold (ties kept).
pub fn top_percent_mask<T: Scalar>(img: &Image<T>, p: f64) -> Result<Mask2> {
    let t = top_fraction_threshold(img.pixels(), p)?;
    Mask2::new(img.dims(), img.pixels().iter().map(|&v| v >= t).collect())
}

/// Pixelwise conjunction of equally sized masks.
pub fn merge_masks_and(masks: &[Mask2]) -> Result<Mask2> {
    let first = masks.first().ok_or_else(|| Error::InvalidParameter("at least one mask is required".into()))?;
    let dims = first.dims();
    if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
        return Err(Error::dims(&[dims.h, dims.w], &[m.dims().h, m.dims().w]));
    }
    let bits = (0..dims.len()).map(|i| masks.iter().all(|m| m.bits()[i])).collect();
    Mask2::new(dims, bits)
}

/// Region id per pixel (`u32::MAX` for background) and region sizes, in scan order.
pub(crate) fn label_regions_2d(mask: &Mask2, conn: Connectivity2) -> (Vec<u32>, Vec<usize>) {
    let dims = mask.dims();
    let mut labels = vec![u32::MAX; dims.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..dims.len() {
        if !mask.bits()[start] || labels[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        labels[start] = id;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = dims.coords(i);
            for &(dx, dy) in conn.offsets() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= dims.h as isize || ny >= dims.w as isize {
                    continue;
                }
                let j = dims.index(nx as usize, ny as usize);
                if mask.bits()[j] && labels[j] == u32::MAX {
                    labels[j] = id;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Clears connected regions with strictly fewer than `min_size` pixels.
pub fn remove_small_regions(mask: &Mask2, min_size: usize, conn: Connectivity2) -> Mask2 {
    let (labels, sizes) = label_regions_2d(mask, conn);
    let bits = labels.iter().map(|&l| l != u32::MAX && sizes[l as usize] >= min_size).collect();
    Mask2::new(mask.dims(), bits).expect("same dims")
}

/// Tight bounding rectangle of the foreground; `z` extent is filled in by the caller.
pub fn compute_crop_box(mask: &Mask2) -> Result<CropBox> {
    let dims = mask.dims();
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.bits().iter().enumerate().filter(|(_, &v)| v) {
        let (x, y) = dims.coords(i);
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    let (x0, x1, y0, y1) = b.ok_or(Error::EmptyMask)?;
    Ok(CropBox { x0, x1: x1 + 1, y0, y1: y1 + 1, z0: 0, z1: 0 })
}

/// Everything produced by [`crop_pipeline`].
#[derive(Clone, Debug)]
pub struct CropOutcome<T> {
    pub cropped: Volume<T>,
    pub crop_box: CropBox,
    pub merged_mask: Mask2,
    /// Set when the cleaned mask was empty and the full extent was used.
    pub fell_back_to_full: bool,
}

pub fn crop_pipeline<T: Scalar>(vol: &Volume<T>, params: &CropParams) -> Result<CropOutcome<T>> {
    params.validate()?;
    let dims = vol.dims();
    if dims.is_empty() {
        return Err(Error::Degenerate("volume has no voxels".into()));
    }
    let proj = z_projections(vol);
    let (pa, pm, pi) = params.fractions();
    let masks = [top_percent_mask(&proj.aip, pa)?, top_percent_mask(&proj.mip, pm)?, top_percent_mask(&proj.ivm, pi)?];
    let merged = merge_masks_and(&masks)?;
    let cleaned = remove_small_regions(&merged, params.min_region_px, params.region_connectivity);
    let (crop_box, fell_back) = match compute_crop_box(&cleaned) {
        Ok(b) => (CropBox { z0: 0, z1: dims.d, ..b }, false),
        Err(Error::EmptyMask) => {
            log::warn!("crop mask is empty after region removal; using the full extent");
            (CropBox::full(dims), true)
        }
        Err(e) => return Err(e),
    };
    let cropped = apply_crop(vol, &crop_box)?;
    Ok(CropOutcome { cropped, crop_box, merged_mask: cleaned, fell_back_to_full: fell_back })
}

/// Fraction of voxels removed: `(HWD - H'W'D') / HWD`.
pub fn cropping_rate(orig: Dims3, cropped: Dims3) -> Result<f64> {
    let n = orig.len();
    if n == 0 {
        return Err(Error::Degenerate("original volume has zero voxels".into()));
    }
    if cropped.h > orig.h || cropped.w > orig.w || cropped.d > orig.d || cropped.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "cropped dims {:?} must be positive and within {:?}",
            cropped.as_array(),
            orig.as_array()
        )));
    }
    Ok((n - cropped.len()) as f64 / n as f64)
}

/// Per-subject crop record written next to the pipeline outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSidecar {
    pub subject_id: String,
    pub orig_dims: [usize; 3],
    #[serde(rename = "box")]
    pub crop_box: CropBox,
    pub cropped_dims: [usize; 3],
    pub cr: f64,
}

impl CropSidecar {
    pub fn new(subject_id: impl Into<String>, orig: Dims3, crop_box: CropBox) -> Result<Self> {
        let cropped = crop_box.cropped_dims();
        Ok(Self {
            subject_id: subject_id.into(),
            orig_dims: orig.as_array(),
            crop_box,
            cropped_dims: cropped.as_array(),
            cr: cropping_rate(orig, cropped)?,
        })
    }
}
