//! Coarse vessel segmentation: top-fraction threshold of the VEI, 3D
//! connected components, and retention of the `k` largest components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::percentile::{check_fraction, top_fraction_threshold};
use crate::scalar::Scalar;
use crate::volume::{BinaryMask3, Dims3, Volume};

/// 3D voxel neighbourhood (faces, faces+edges, faces+edges+corners).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity3 {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl TryFrom<u8> for Connectivity3 {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            _ => Err(format!("3D connectivity must be 6, 18 or 26, got {v}")),
        }
    }
}

impl From<Connectivity3> for u8 {
    fn from(c: Connectivity3) -> u8 {
        match c {
            Connectivity3::Six => 6,
            Connectivity3::Eighteen => 18,
            Connectivity3::TwentySix => 26,
        }
    }
}

impl Connectivity3 {
    /// Whether offset `(dx, dy, dz)` (each in -1..=1, not all 0) is a neighbour.
    #[inline]
    pub fn admits(self, dx: i32, dy: i32, dz: i32) -> bool {
        let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
        match self {
            Self::Six => nonzero == 1,
            Self::Eighteen => (1..=2).contains(&nonzero),
            Self::TwentySix => nonzero >= 1,
        }
    }

    /// Neighbour offsets that precede a voxel in linear scan order.
    fn backward_offsets(self) -> Vec<(i32, i32, i32)> {
        let mut out = Vec::new();
        for dz in -1..=0 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if before && self.admits(dx, dy, dz) {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

/// Which voxels the top-fraction threshold ranks over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdDomain {
    #[default]
    AllVoxels,
    NonzeroVoxels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseSegParams {
    pub top_percent: f64,
    /// Number of largest components kept; typically 3 to 5.
    pub k: usize,
    pub connectivity: Connectivity3,
    pub domain: ThresholdDomain,
}

impl Default for CoarseSegParams {
    fn default() -> Self {
        Self { top_percent: 0.05, k: 4, connectivity: Connectivity3::TwentySix, domain: ThresholdDomain::AllVoxels }
    }
}

impl CoarseSegParams {
    pub fn validate(&self) -> Result<()> {
        check_fraction(self.top_percent)?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Component labels, 0 for background, 1 for the largest component.
///
/// Labels are ordered by descending size; equal sizes are ordered by the
/// smallest linear index of their voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledComponents {
    pub dims: Dims3,
    pub labels: Vec<u32>,
    /// `sizes[l - 1]` is the voxel count of label `l`.
    pub sizes: Vec<usize>,
}

impl LabeledComponents {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Nearest-rank top-fraction threshold over the whole volume (ties kept).
pub fn threshold_top_percent_3d<T: Scalar>(vei: &Volume<T>, p: f64) -> Result<BinaryMask3> {
    threshold_top_percent_in(vei, p, ThresholdDomain::AllVoxels)
}

pub fn threshold_top_percent_in<T: Scalar>(vei: &Volume<T>, p: f64, domain: ThresholdDomain) -> Result<BinaryMask3> {
    check_fraction(p)?;
    if vei.dims().is_empty() {
        return Err(Error::Degenerate("cannot threshold an empty volume".into()));
    }
    let bits = match domain {
        ThresholdDomain::AllVoxels => {
            let t = top_fraction_threshold(vei.data(), p)?;
            vei.data().iter().map(|&v| v >= t).collect()
        }
        ThresholdDomain::NonzeroVoxels => {
            let nz: Vec<T> = vei.data().iter().copied().filter(|v| *v != T::zero()).collect();
            if nz.is_empty() {
                vec![false; vei.dims().len()]
            } else {
                let t = top_fraction_threshold(&nz, p)?;
                vei.data().iter().map(|&v| v != T::zero() && v >= t).collect()
            }
        }
    };
    BinaryMask3::like(vei, bits)
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut i: u32) -> u32 {
        let mut root = i;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[i as usize] != root {
            let next = self.parent[i as usize];
            self.parent[i as usize] = root;
            i = next;
        }
        root
    }

    /// Links the larger root under the smaller, so roots are minimal indices.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling with canonical (size-ordered) label ids.
pub fn connected_components_3d(mask: &BinaryMask3, conn: Connectivity3) -> LabeledComponents {
    let dims = mask.dims();
    let n = dims.len();
    assert!(n < u32::MAX as usize, "volume too large for 32-bit labels");
    let bits = mask.bits();
    let mut ds = DisjointSet { parent: (0..n as u32).collect() };
    let offsets = conn.backward_offsets();
    for z in 0..dims.d {
        for y in 0..dims.w {
            for x in 0..dims.h {
                let i = dims.index(x, y, z);
                if !bits[i] {
                    continue;
                }
                for &(dx, dy, dz) in &offsets {
                    let (nx, ny, nz) = (x as i64 + dx as i64, y as i64 + dy as i64, z as i64 + dz as i64);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= dims.h as i64 || ny >= dims.w as i64 {
                        continue;
                    }
                    let j = dims.index(nx as usize, ny as usize, nz as usize);
                    if bits[j] {
                        ds.union(i as u32, j as u32);
                    }
                }
            }
        }
    }

    // Roots are the minimal linear index of each component.
    let mut size_of_root: Vec<(u32, usize)> = Vec::new();
    let mut slot = vec![u32::MAX; n];
    let mut roots = vec![0u32; n];
    for i in 0..n {
        if !bits[i] {
            continue;
        }
        let r = ds.find(i as u32);
        roots[i] = r;
        if slot[r as usize] == u32::MAX {
            slot[r as usize] = size_of_root.len() as u32;
            size_of_root.push((r, 0));
        }
        size_of_root[slot[r as usize] as usize].1 += 1;
    }
    let mut order: Vec<usize> = (0..size_of_root.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, sa) = size_of_root[a];
        let (rb, sb) = size_of_root[b];
        sb.cmp(&sa).then(ra.cmp(&rb))
    });
    let mut label_of_slot = vec![0u32; size_of_root.len()];
    for (rank, &s) in order.iter().enumerate() {
        label_of_slot[s] = rank as u32 + 1;
    }
    let labels = (0..n).map(|i| if bits[i] { label_of_slot[slot[roots[i] as usize] as usize] } else { 0 }).collect();
    LabeledComponents { dims, labels, sizes: order.iter().map(|&s| size_of_root[s].1).collect() }
}

/// Union of the `k` largest components.
pub fn keep_largest_k(labels: &LabeledComponents, k: usize) -> Vec<bool> {
    let k = k.min(labels.count()) as u32;
    labels.labels.iter().map(|&l| l != 0 && l <= k).collect()
}

/// Intermediate results of [`coarse_segmentation`].
#[derive(Clone, Debug)]
pub struct CoarseOutcome {
    pub cvs: BinaryMask3,
    pub threshold_count: usize,
    /// Sizes of all components of the thresholded mask, largest first.
    pub component_sizes: Vec<usize>,
    /// The threshold retained every voxel (e.g. an all-zero VEI).
    pub degenerate: bool,
}

pub fn coarse_segmentation_detailed<T: Scalar>(vei: &Volume<T>, params: &CoarseSegParams) -> Result<CoarseOutcome> {
    params.validate()?;
    let thr = threshold_top_percent_in(vei, params.top_percent, params.domain)?;
    let threshold_count = thr.count();
    let degenerate = threshold_count == vei.dims().len();
    if degenerate {
        log::warn!("VEI threshold kept every voxel; the volume response is degenerate");
    }
    let cc = connected_components_3d(&thr, params.connectivity);
    let bits = keep_largest_k(&cc, params.k);
    Ok(CoarseOutcome { cvs: BinaryMask3::like(vei, bits)?, threshold_count, component_sizes: cc.sizes, degenerate })
}

pub fn coarse_segmentation<T: Scalar>(vei: &Volume<T>, params: &CoarseSegParams) -> Result<BinaryMask3> {
    Ok(coarse_segmentation_detailed(vei, params)?.cvs)
}
