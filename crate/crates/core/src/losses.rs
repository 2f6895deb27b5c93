//! Pretraining loss terms as plain array reductions.
//!
//! Inputs may be `f32` or `f64`; every loss is accumulated in `f64` in
//! linear voxel order, so results are deterministic and exact up to `f64`
//! rounding of the fixed-order sum. All reductions are means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryMask3, Volume};

pub const DICE_SMOOTH: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma1: 0.4, gamma2: 0.4, gamma3: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma3", self.gamma3)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

/// Segmentation loss split into its two summands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegLoss {
    pub seg: f64,
    pub dice_part: f64,
    pub bce_part: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rgn: f64,
    pub seg: f64,
    pub dice_part: f64,
    pub bce_part: f64,
    pub consistency: f64,
    pub total: f64,
    pub weights: LossWeights,
}

fn check_probabilities<T: Scalar>(name: &str, v: &Volume<T>) -> Result<()> {
    match v.data().iter().position(|&p| !(p >= T::zero() && p <= T::one())) {
        Some(i) => Err(Error::OutOfRange(format!("{name} must lie in [0, 1]; voxel {i} is {:?}", v.data()[i]))),
        None => Ok(()),
    }
}

/// Mean absolute difference.
pub fn l1_regression_loss<T: Scalar>(pred: &Volume<T>, target: &Volume<T>) -> Result<f64> {
    pred.same_grid(target)?;
    let n = pred.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(0.0f64, |acc, (&p, &t)| acc + (p.to_f64_lossless() - t.to_f64_lossless()).abs());
    Ok(sum / n as f64)
}

/// Smoothed soft Dice loss plus clamped binary cross-entropy.
pub fn dice_bce_loss<T: Scalar>(pred_prob: &Volume<T>, target: &BinaryMask3) -> Result<SegLoss> {
    if pred_prob.dims() != target.dims() {
        return Err(Error::dims(&pred_prob.dims().as_array(), &target.dims().as_array()));
    }
    check_probabilities("predicted probabilities", pred_prob)?;
    let n = pred_prob.data().len();
    let (mut inter, mut sum_p, mut sum_t, mut bce) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred_prob.data().iter().zip(target.bits()) {
        let p = p.to_f64_lossless();
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum_p += p;
        if t {
            inter += p;
            sum_t += 1.0;
            bce -= pc.ln();
        } else {
            bce -= (1.0 - pc).ln();
        }
    }
    let dice_part = 1.0 - (2.0 * inter + DICE_SMOOTH) / (sum_p + sum_t + DICE_SMOOTH);
    let bce_part = if n == 0 { 0.0 } else { bce / n as f64 };
    Ok(SegLoss { seg: dice_part + bce_part, dice_part, bce_part })
}

/// Mean absolute difference between the `z`-MIPs of `seg * vei` and `seg * input`.
pub fn mip_consistency_loss<T: Scalar>(pred_seg: &Volume<T>, pred_vei: &Volume<T>, input: &Volume<T>) -> Result<f64> {
    pred_seg.same_grid(pred_vei)?;
    pred_seg.same_grid(input)?;
    check_probabilities("predicted segmentation", pred_seg)?;
    let dims = pred_seg.dims();
    let plane = dims.h * dims.w;
    if plane == 0 || dims.d == 0 {
        return Ok(0.0);
    }
    let (s, v, x) = (pred_seg.data(), pred_vei.data(), input.data());
    let mut mip_vs = vec![f64::NEG_INFINITY; plane];
    let mut mip_is = vec![f64::NEG_INFINITY; plane];
    for z in 0..dims.d {
        for j in 0..plane {
            let i = z * plane + j;
            let sj = s[i].to_f64_lossless();
            mip_vs[j] = mip_vs[j].max(sj * v[i].to_f64_lossless());
            mip_is[j] = mip_is[j].max(sj * x[i].to_f64_lossless());
        }
    }
    let sum = mip_vs.iter().zip(&mip_is).fold(0.0, |acc, (a, b)| acc + (a - b).abs());
    Ok(sum / plane as f64)
}

/// Weighted sum of the three loss terms.
pub fn total_loss(rgn: f64, seg: f64, consistency: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    if ![rgn, seg, consistency].iter().all(|v| v.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "loss terms must be finite (rgn {rgn}, seg {seg}, consistency {consistency})"
        )));
    }
    Ok(w.gamma1 * rgn + w.gamma2 * seg + w.gamma3 * consistency)
}

/// Evaluates every term and the weighted total.
pub fn loss_report<T: Scalar>(
    pred_vei: &Volume<T>,
    target_vei: &Volume<T>,
    pred_seg: &Volume<T>,
    target_seg: &BinaryMask3,
    input: &Volume<T>,
    w: &LossWeights,
) -> Result<LossReport> {
    let rgn = l1_regression_loss(pred_vei, target_vei)?;
    let seg = dice_bce_loss(pred_seg, target_seg)?;
    let consistency = mip_consistency_loss(pred_seg, pred_vei, input)?;
    Ok(LossReport {
        rgn,
        seg: seg.seg,
        dice_part: seg.dice_part,
        bce_part: seg.bce_part,
        consistency,
        total: total_loss(rgn, seg.seg, consistency, w)?,
        weights: *w,
    })
}
