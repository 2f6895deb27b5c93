//! Multiscale Frangi vesselness.
//!
//! For eigenvalues ordered `|l1| <= |l2| <= |l3|`:
//!
//! ```text
//! V = (1 - exp(-Ra^2 / 2a^2)) * exp(-Rb^2 / 2b^2) * (1 - exp(-S^2 / 2c^2))
//! Ra = |l2| / |l3|,  Rb = |l1| / sqrt(|l2 l3|),  S = sqrt(l1^2 + l2^2 + l3^2)
//! ```
//!
//! Bright tubular structures on a dark background have `l2, l3 < 0`; voxels
//! failing the sign test respond 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigenvalues_sym3, EigenTriple};
use crate::error::{Error, Result};
use crate::hessian::{gaussian_hessian, HessianField};
use crate::scalar::Scalar;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    BrightOnDark,
    DarkOnBright,
}

/// Where the automatic structureness constant is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CScope {
    /// Half the maximum Hessian norm of each scale, applied to that scale.
    #[default]
    PerScale,
    /// Half the maximum Hessian norm over all scales, applied to every scale.
    /// Keeps the structureness term comparable across scales; costs a second
    /// Hessian pass.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrangiParams {
    /// Scales in finest-voxel units, strictly ascending.
    pub scales: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Structureness constant; `None` uses half the maximum Hessian norm at each scale.
    pub c: Option<f64>,
    /// Ignored when `c` is set.
    pub c_scope: CScope,
    pub polarity: Polarity,
    /// Second derivatives are multiplied by `sigma^gamma_norm`.
    pub gamma_norm: f64,
    /// Kernel half-width is `ceil(truncate * sigma)` voxels.
    pub truncate: f64,
}

impl Default for FrangiParams {
    fn default() -> Self {
        Self {
            scales: vec![0.5, 1.0, 2.0, 4.0],
            alpha: 0.5,
            beta: 0.5,
            c: None,
            c_scope: CScope::PerScale,
            polarity: Polarity::BrightOnDark,
            gamma_norm: 2.0,
            truncate: 4.0,
        }
    }
}

impl FrangiParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("scales must be positive, got {:?}", self.scales));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("scales must be strictly ascending, got {:?}", self.scales));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad(format!("alpha and beta must be positive ({}, {})", self.alpha, self.beta));
        }
        if let Some(c) = self.c {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("c must be positive, got {c}"));
            }
        }
        if !(self.truncate.is_finite() && self.truncate > 0.0) || !self.gamma_norm.is_finite() {
            return bad("truncate must be positive and gamma_norm finite".into());
        }
        Ok(())
    }
}

/// Precomputed `2 a^2`, `2 b^2`, `2 c^2` for one scale.
#[derive(Clone, Copy, Debug)]
pub struct VesselnessConstants {
    pub two_alpha2: f64,
    pub two_beta2: f64,
    pub two_c2: f64,
    pub polarity: Polarity,
}

impl VesselnessConstants {
    pub fn new(alpha: f64, beta: f64, c: f64, polarity: Polarity) -> Self {
        Self { two_alpha2: 2.0 * alpha * alpha, two_beta2: 2.0 * beta * beta, two_c2: 2.0 * c * c, polarity }
    }
}

/// Vesselness of one magnitude-ordered eigenvalue triple.
#[inline]
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN c rejects
pub fn vesselness_of<T: Scalar>(e: EigenTriple<T>, k: &VesselnessConstants) -> T {
    let (l1, l2, l3) = (e.lam1, e.lam2, e.lam3);
    let rejected = match k.polarity {
        Polarity::BrightOnDark => l2 > T::zero() || l3 > T::zero(),
        Polarity::DarkOnBright => l2 < T::zero() || l3 < T::zero(),
    };
    if rejected || l3 == T::zero() || l2 == T::zero() || !(k.two_c2 > 0.0) {
        return T::zero();
    }
    let (a2, b2, c2) = (T::lit(k.two_alpha2), T::lit(k.two_beta2), T::lit(k.two_c2));
    let ra = l2.abs() / l3.abs();
    let rb = l1.abs() / (l2 * l3).abs().sqrt();
    let s2 = l1 * l1 + l2 * l2 + l3 * l3;
    let v = (T::one() - (-(ra * ra) / a2).exp()) * (-(rb * rb) / b2).exp() * (T::one() - (-s2 / c2).exp());
    v.max(T::zero()).min(T::one())
}

/// The structureness constant used at one scale.
pub fn structureness_constant<T: Scalar>(h: &HessianField<T>, params: &FrangiParams) -> f64 {
    match params.c {
        Some(c) => c,
        None => {
            let max = (0..h.len()).into_par_iter().map(|i| h.frobenius(i).to_f64_lossless()).reduce(|| 0.0, f64::max);
            0.5 * max
        }
    }
}

/// Per-voxel vesselness for one Hessian field.
pub fn vesselness_at_scale<T: Scalar>(h: &HessianField<T>, params: &FrangiParams) -> Volume<T> {
    let c = structureness_constant(h, params);
    let k = VesselnessConstants::new(params.alpha, params.beta, c, params.polarity);
    let data: Vec<T> = (0..h.len())
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            let [xx, yy, zz, xy, xz, yz] = h.at(i);
            let [a, b, e] = eigenvalues_sym3(xx, yy, zz, xy, xz, yz);
            vesselness_of(EigenTriple::from_unordered(a, b, e), &k)
        })
        .collect();
    Volume::from_parts(h.dims, h.spacing, Default::default(), data)
}

/// Multiscale result: the VEI plus the index of the winning scale per voxel.
#[derive(Clone, Debug)]
pub struct FrangiOutput<T> {
    pub vei: Volume<T>,
    /// Index into `params.scales`; 0 where every scale responded 0.
    pub best_scale: Vec<u8>,
    /// Per-scale responses, populated only when requested.
    pub per_scale: Vec<Volume<T>>,
}

pub fn frangi_multiscale_detailed<T: Scalar>(
    vol: &Volume<T>,
    params: &FrangiParams,
    keep_per_scale: bool,
) -> Result<FrangiOutput<T>> {
    params.validate()?;
    let shared;
    let params = match (params.c, params.c_scope) {
        (None, CScope::Shared) => {
            let mut c = 0.0f64;
            for &sigma in &params.scales {
                c = c.max(structureness_constant(&gaussian_hessian(vol, sigma, params)?, params));
            }
            shared = FrangiParams { c: Some(c).filter(|c| *c > 0.0), ..params.clone() };
            &shared
        }
        _ => params,
    };
    let n = vol.dims().len();
    let mut best = vec![T::zero(); n];
    let mut best_scale = vec![0u8; n];
    let mut per_scale = Vec::new();
    for (si, &sigma) in params.scales.iter().enumerate() {
        let h = gaussian_hessian(vol, sigma, params)?;
        let v = vesselness_at_scale(&h, params);
        drop(h);
        best.par_iter_mut().zip(best_scale.par_iter_mut()).zip(v.data().par_iter()).for_each(|((b, s), &x)| {
            if x > *b {
                *b = x;
                *s = si as u8;
            }
        });
        if keep_per_scale {
            per_scale.push(Volume::from_parts(vol.dims(), vol.spacing(), *vol.meta(), v.into_data()));
        }
    }
    Ok(FrangiOutput { vei: Volume::from_parts(vol.dims(), vol.spacing(), *vol.meta(), best), best_scale, per_scale })
}

/// Voxelwise maximum of the vesselness over all scales, in `[0, 1]`.
pub fn frangi_multiscale<T: Scalar>(vol: &Volume<T>, params: &FrangiParams) -> Result<Volume<T>> {
    Ok(frangi_multiscale_detailed(vol, params, false)?.vei)
}
