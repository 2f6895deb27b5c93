//! Segmentation metrics: Dice, centerline Dice and HD95.

mod edt;
mod skeleton;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use edt::squared_edt;
pub use skeleton::skeletonize_3d;

use crate::error::{Error, Result};
use crate::percentile::nearest_rank;
use crate::volume::{BinaryMask3, Spacing};

/// `2|P ∩ G| / (|P| + |G|)`; 1 when both are empty.
pub fn dice_coefficient(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    pred.check_same_dims(gt)?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        np += p as usize;
        ng += g as usize;
        inter += (p && g) as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

fn overlap_fraction(skel: &BinaryMask3, other: &BinaryMask3) -> f64 {
    let n = skel.count();
    let hit = skel.bits().iter().zip(other.bits()).filter(|(&s, &o)| s && o).count();
    hit as f64 / n as f64
}

/// Harmonic mean of topology precision and sensitivity.
///
/// Both masks empty gives 1; exactly one empty skeleton gives 0.
pub fn cl_dice(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    pred.check_same_dims(gt)?;
    if pred.is_empty() && gt.is_empty() {
        return Ok(1.0);
    }
    let (sp, sg) = rayon::join(|| skeletonize_3d(pred), || skeletonize_3d(gt));
    if sp.is_empty() || sg.is_empty() {
        return Ok(0.0);
    }
    let prec = overlap_fraction(&sp, gt);
    let sens = overlap_fraction(&sg, pred);
    if prec + sens == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * prec * sens / (prec + sens))
}

/// Foreground voxels with a background 6-neighbour; outside the grid is background.
pub fn surface_voxels(mask: &BinaryMask3) -> BinaryMask3 {
    let d = mask.dims();
    let b = mask.bits();
    let bits = (0..d.len())
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            if !b[i] {
                return false;
            }
            let (x, y, z) = d.coords(i);
            x == 0
                || y == 0
                || z == 0
                || x + 1 == d.h
                || y + 1 == d.w
                || z + 1 == d.d
                || !b[i - 1]
                || !b[i + 1]
                || !b[i - d.h]
                || !b[i + d.h]
                || !b[i - d.h * d.w]
                || !b[i + d.h * d.w]
        })
        .collect();
    BinaryMask3::from_parts(d, mask.spacing(), *mask.meta(), bits)
}

/// Directed surface-to-surface distances in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistanceSet {
    /// One entry per predicted surface voxel, in linear index order.
    pub d_pred_to_gt: Vec<f64>,
    pub d_gt_to_pred: Vec<f64>,
}

fn directed(from: &BinaryMask3, to: &BinaryMask3, spacing: Spacing) -> Vec<f64> {
    let edt = squared_edt(to.bits(), to.dims(), spacing);
    from.bits().iter().zip(&edt).filter(|(&b, _)| b).map(|(_, &d2)| d2.sqrt()).collect()
}

pub fn surface_distances(pred: &BinaryMask3, gt: &BinaryMask3, spacing: Spacing) -> Result<SurfaceDistanceSet> {
    pred.check_same_dims(gt)?;
    spacing.validate()?;
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (sp, sg) = (surface_voxels(pred), surface_voxels(gt));
    let (d_pred_to_gt, d_gt_to_pred) = rayon::join(|| directed(&sp, &sg, spacing), || directed(&sg, &sp, spacing));
    Ok(SurfaceDistanceSet { d_pred_to_gt, d_gt_to_pred })
}

/// How the two directed distance sets are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdAggregation {
    /// Maximum of the two directed 95th percentiles.
    #[default]
    MaxDirected,
    /// 95th percentile of the union of both directed sets.
    Pooled,
}

pub fn hd95_from_distances(set: &SurfaceDistanceSet, mode: HdAggregation) -> Result<f64> {
    let p95 = |v: &[f64]| {
        let mut v = v.to_vec();
        nearest_rank(&mut v, 0.95).ok_or(Error::EmptyMask)
    };
    match mode {
        HdAggregation::MaxDirected => Ok(p95(&set.d_pred_to_gt)?.max(p95(&set.d_gt_to_pred)?)),
        HdAggregation::Pooled => {
            let mut all = set.d_pred_to_gt.clone();
            all.extend_from_slice(&set.d_gt_to_pred);
            p95(&all)
        }
    }
}

/// 95th-percentile Hausdorff distance between mask surfaces; errors on an empty mask.
pub fn hd95(pred: &BinaryMask3, gt: &BinaryMask3, spacing: Spacing) -> Result<f64> {
    hd95_with(pred, gt, spacing, HdAggregation::MaxDirected)
}

pub fn hd95_with(pred: &BinaryMask3, gt: &BinaryMask3, spacing: Spacing, mode: HdAggregation) -> Result<f64> {
    hd95_from_distances(&surface_distances(pred, gt, spacing)?, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub cldice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
}

/// All three metrics for one pair.
pub fn metrics_report(
    pred: &BinaryMask3,
    gt: &BinaryMask3,
    spacing: Spacing,
    mode: HdAggregation,
) -> Result<MetricsReport> {
    let dice = dice_coefficient(pred, gt)?;
    let cldice = cl_dice(pred, gt)?;
    let hd95 = match hd95_with(pred, gt, spacing, mode) {
        Ok(v) => Some(v),
        Err(Error::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport { dice, cldice, hd95 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_of(dims: Dims3, f: impl FnMut(usize, usize, usize) -> bool) -> BinaryMask3 {
        BinaryMask3::from_fn(dims, Spacing::ISOTROPIC, f).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, d: Dims3, dens: f64) -> BinaryMask3 {
        mask_of(d, |_, _, _| rng.random_bool(dens))
    }

    #[test]
    fn dice_examples() {
        let d = Dims3::new(6, 6, 6);
        let a = mask_of(d, |x, y, z| x < 2 && y < 2 && z < 2);
        let b = mask_of(d, |x, y, z| (1..3).contains(&x) && y < 2 && z < 2);
        let far = mask_of(d, |x, _, _| x == 5);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&a, &far).unwrap(), 0.0);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.5);
        let e = BinaryMask3::empty(d, Spacing::ISOTROPIC);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
        let other = BinaryMask3::empty(Dims3::new(5, 6, 6), Spacing::ISOTROPIC);
        assert!(dice_coefficient(&a, &other).is_err());
    }

    #[test]
    fn surface_examples() {
        let d = Dims3::new(9, 9, 9);
        let one = mask_of(d, |x, y, z| (x, y, z) == (4, 4, 4));
        assert_eq!(surface_voxels(&one), one);
        let cube = mask_of(d, |x, y, z| [x, y, z].iter().all(|v| (2..7).contains(v)));
        assert_eq!(surface_voxels(&cube).count(), 98);
        let full = mask_of(Dims3::new(3, 3, 3), |_, _, _| true);
        assert_eq!(surface_voxels(&full).count(), 26);
        let e = BinaryMask3::empty(d, Spacing::ISOTROPIC);
        assert!(surface_voxels(&e).is_empty());
    }

    #[test]
    fn hd95_examples() {
        let d = Dims3::new(8, 4, 4);
        let a = mask_of(d, |x, y, z| (x, y, z) == (1, 1, 1));
        let b = mask_of(d, |x, y, z| (x, y, z) == (4, 1, 1));
        assert_eq!(hd95(&a, &a, Spacing::ISOTROPIC).unwrap(), 0.0);
        let sp = Spacing::new(0.5, 1.0, 1.0).unwrap();
        assert!((hd95(&a, &b, sp).unwrap() - 1.5).abs() < 1e-12);
        let e = BinaryMask3::empty(d, Spacing::ISOTROPIC);
        assert!(matches!(hd95(&a, &e, sp), Err(Error::EmptyMask)));
    }

    #[test]
    fn cldice_examples() {
        let d = Dims3::new(12, 12, 20);
        let tube = mask_of(d, |x, y, _| x == 6 && y == 6);
        let thick = mask_of(d, |x, y, _| (x as i32 - 6).abs() <= 1 && (y as i32 - 6).abs() <= 1);
        assert_eq!(cl_dice(&tube, &tube).unwrap(), 1.0);
        let apart = mask_of(d, |x, y, _| x == 1 && y == 1);
        assert_eq!(cl_dice(&tube, &apart).unwrap(), 0.0);
        let e = BinaryMask3::empty(d, Spacing::ISOTROPIC);
        assert_eq!(cl_dice(&e, &e).unwrap(), 1.0);
        assert_eq!(cl_dice(&tube, &e).unwrap(), 0.0);
        let cl = cl_dice(&thick, &tube).unwrap();
        let dc = dice_coefficient(&thick, &tube).unwrap();
        assert_eq!(cl, 1.0);
        assert!(cl > dc);
    }

    #[test]
    fn report_flags_empty() {
        let d = Dims3::new(5, 5, 5);
        let a = mask_of(d, |x, _, _| x == 2);
        let e = BinaryMask3::empty(d, Spacing::ISOTROPIC);
        let r = metrics_report(&a, &e, Spacing::ISOTROPIC, HdAggregation::MaxDirected).unwrap();
        assert_eq!(r.hd95, None);
        assert_eq!(r.dice, 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(seed in 0u64..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dims3::new(rng.random_range(2..=10), rng.random_range(2..=10), rng.random_range(2..=10));
            let a = random_mask(&mut rng, d, 0.3);
            let b = random_mask(&mut rng, d, 0.3);
            let sp = Spacing::new(0.5, 0.7, 1.0).unwrap();
            let dab = dice_coefficient(&a, &b).unwrap();
            prop_assert_eq!(dab, dice_coefficient(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&dab));
            let c = cl_dice(&a, &b).unwrap();
            prop_assert_eq!(c, cl_dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&c));
            if !a.is_empty() && !b.is_empty() {
                let h = hd95(&a, &b, sp).unwrap();
                prop_assert!(h >= 0.0);
                prop_assert_eq!(h, hd95(&b, &a, sp).unwrap());
                prop_assert_eq!(hd95(&a, &a, sp).unwrap(), 0.0);
                let pooled = hd95_with(&a, &b, sp, HdAggregation::Pooled).unwrap();
                prop_assert!(pooled <= h);
            }
        }

        #[test]
        fn translation_invariant(seed in 0u64..80, sx in 0usize..3, sy in 0usize..3, sz in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inner = Dims3::new(7, 6, 5);
            let d = Dims3::new(10, 9, 8);
            let a0 = random_mask(&mut rng, inner, 0.4);
            let b0 = random_mask(&mut rng, inner, 0.4);
            let place = |m: &BinaryMask3, ox: usize, oy: usize, oz: usize| mask_of(d, |x, y, z| {
                x >= ox && y >= oy && z >= oz && x - ox < inner.h && y - oy < inner.w && z - oz < inner.d
                    && m.get(x - ox, y - oy, z - oz)
            });
            // Keep a background margin so the grid boundary never touches either placement.
            let (a1, b1) = (place(&a0, 1, 1, 1), place(&b0, 1, 1, 1));
            let (a2, b2) = (place(&a0, 1 + sx, 1 + sy, 1 + sz), place(&b0, 1 + sx, 1 + sy, 1 + sz));
            let sp = Spacing::new(0.5, 0.7, 1.0).unwrap();
            prop_assert_eq!(dice_coefficient(&a1, &b1).unwrap(), dice_coefficient(&a2, &b2).unwrap());
            prop_assert_eq!(cl_dice(&a1, &b1).unwrap(), cl_dice(&a2, &b2).unwrap());
            if !a0.is_empty() && !b0.is_empty() {
                prop_assert!((hd95(&a1, &b1, sp).unwrap() - hd95(&a2, &b2, sp).unwrap()).abs() < 1e-12);
            }
        }
    }
}
