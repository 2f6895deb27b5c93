//! Scale-space Hessian via separable Gaussian-derivative convolution.
//!
//! Each component is produced by three 1D correlations, always in the order
//! x, y, z, with edge-replicated borders. Kernels are sampled Gaussians
//! truncated at `ceil(truncate * sigma)` and moment-normalized so that
//! polynomials up to degree two are differentiated exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frangi::FrangiParams;
use crate::scalar::Scalar;
use crate::volume::{Dims3, Spacing, Volume};

/// Six unique second derivatives per voxel, in [`Dims3::index`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField<T> {
    pub dims: Dims3,
    pub spacing: Spacing,
    pub xx: Vec<T>,
    pub yy: Vec<T>,
    pub zz: Vec<T>,
    pub xy: Vec<T>,
    pub xz: Vec<T>,
    pub yz: Vec<T>,
}

impl<T: Scalar> HessianField<T> {
    /// Components of voxel `i` as `(xx, yy, zz, xy, xz, yz)`.
    #[inline]
    pub fn at(&self, i: usize) -> [T; 6] {
        [self.xx[i], self.yy[i], self.zz[i], self.xy[i], self.xz[i], self.yz[i]]
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Per-voxel Frobenius norm of the symmetric matrix.
    pub fn frobenius(&self, i: usize) -> T {
        let [a, b, c, d, e, f] = self.at(i);
        let two = T::lit(2.0);
        (a * a + b * b + c * c + two * (d * d + e * e + f * f)).sqrt()
    }
}

/// Correlation weights `w[k + radius]` for offsets `k` in `-radius..=radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeKernels {
    pub radius: usize,
    pub smooth: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl DerivativeKernels {
    pub fn new(sigma: f64, truncate: f64) -> Self {
        let radius = ((truncate * sigma).ceil() as usize).max(1);
        let offsets = || (-(radius as isize)..=radius as isize).map(|k| k as f64);
        let s2 = sigma * sigma;

        let mut smooth: Vec<f64> = offsets().map(|k| (-k * k / (2.0 * s2)).exp()).collect();
        let total: f64 = smooth.iter().sum();
        smooth.iter_mut().for_each(|w| *w /= total);

        // d/dx of the smoothed signal: weight k/s^2 g(k), scaled so sum k w = 1.
        let mut first: Vec<f64> = offsets().zip(&smooth).map(|(k, g)| k / s2 * g).collect();
        let m1: f64 = offsets().zip(&first).map(|(k, w)| k * w).sum();
        first.iter_mut().for_each(|w| *w /= m1);

        // d2/dx2: weight (k^2 - v) g(k) with v the sampled variance (zero sum),
        // scaled so sum k^2 w = 2. Equal to (k^2/s^4 - 1/s^2) g up to the moment fix.
        let var: f64 = offsets().zip(&smooth).map(|(k, g)| k * k * g).sum();
        let mut second: Vec<f64> = offsets().zip(&smooth).map(|(k, g)| (k * k - var) * g).collect();
        let m2: f64 = offsets().zip(&second).map(|(k, w)| k * k * w).sum();
        second.iter_mut().for_each(|w| *w *= 2.0 / m2);

        Self { radius, smooth, first, second }
    }

    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Per-axis sigma in voxels so the physical extent matches `sigma` finest-voxels.
pub fn axis_sigmas(sigma: f64, spacing: Spacing) -> [f64; 3] {
    let m = spacing.min();
    spacing.as_array().map(|s| sigma * m / s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    Z,
}

#[inline(always)]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// How a symmetric or antisymmetric kernel is applied.
///
/// Derivative kernels are evaluated in difference form, so a locally constant
/// signal yields exactly zero at any precision.
#[derive(Clone, Copy, Debug)]
enum Taps<'a> {
    /// Plain correlation.
    Smooth(&'a [f64]),
    /// Antisymmetric: `sum_k w_k (s[+k] - s[-k])`.
    Odd(&'a [f64]),
    /// Symmetric, zero-sum: `sum_k w_k ((s[+k] - s[0]) + (s[-k] - s[0]))`.
    Even(&'a [f64]),
}

impl Taps<'_> {
    fn weights(&self) -> &[f64] {
        match self {
            Taps::Smooth(w) | Taps::Odd(w) | Taps::Even(w) => w,
        }
    }
}

/// Accumulates one output row from replicated-edge input rows `row(k)`, `k` in `-r..=r`.
#[inline(always)]
fn apply_rows<'s, T: Scalar>(out: &mut [T], taps: Taps, w: &[T], row: impl Fn(isize) -> &'s [T]) {
    let r = (w.len() / 2) as isize;
    match taps {
        Taps::Smooth(_) => {
            for k in -r..=r {
                let wk = w[(k + r) as usize];
                for (o, &v) in out.iter_mut().zip(row(k)) {
                    *o = *o + wk * v;
                }
            }
        }
        Taps::Odd(_) => {
            for k in 1..=r {
                let wk = w[(k + r) as usize];
                for ((o, &a), &b) in out.iter_mut().zip(row(k)).zip(row(-k)) {
                    *o = *o + wk * (a - b);
                }
            }
        }
        Taps::Even(_) => {
            let c = row(0);
            for k in 1..=r {
                let wk = w[(k + r) as usize];
                for (((o, &a), &b), &m) in out.iter_mut().zip(row(k)).zip(row(-k)).zip(c) {
                    *o = *o + wk * ((a - m) + (b - m));
                }
            }
        }
    }
}

/// Single-sample form of [`apply_rows`] on a padded line centred at `c`.
#[inline(always)]
fn apply_at<T: Scalar>(p: &[T], c: usize, taps: Taps, w: &[T]) -> T {
    let r = w.len() / 2;
    let mut acc = T::zero();
    match taps {
        Taps::Smooth(_) => {
            for (k, &wk) in w.iter().enumerate() {
                acc = acc + wk * p[c + k - r];
            }
        }
        Taps::Odd(_) => {
            for k in 1..=r {
                acc = acc + w[r + k] * (p[c + k] - p[c - k]);
            }
        }
        Taps::Even(_) => {
            let m = p[c];
            for k in 1..=r {
                acc = acc + w[r + k] * ((p[c + k] - m) + (p[c - k] - m));
            }
        }
    }
    acc
}

/// 1D correlation along `axis` with edge replication.
fn correlate<T: Scalar>(src: &[T], dims: Dims3, axis: Axis, taps: Taps) -> Vec<T> {
    let w: Vec<T> = taps.weights().iter().map(|&v| T::from_f64_lossy(v)).collect();
    let r = w.len() / 2;
    let (h, wd, d) = (dims.h, dims.w, dims.d);
    let mut out = vec![T::zero(); dims.len()];
    match axis {
        Axis::X => {
            out.par_chunks_mut(h).zip(src.par_chunks(h)).for_each_init(
                || Vec::with_capacity(h + 2 * r),
                |pad, (o, line)| {
                    pad.clear();
                    pad.extend(std::iter::repeat_n(line[0], r));
                    pad.extend_from_slice(line);
                    pad.extend(std::iter::repeat_n(line[h - 1], r));
                    for (x, ov) in o.iter_mut().enumerate() {
                        *ov = apply_at(pad, x + r, taps, &w);
                    }
                },
            );
        }
        Axis::Y => {
            let plane = h * wd;
            out.par_chunks_mut(plane).zip(src.par_chunks(plane)).for_each(|(o, slice)| {
                for y in 0..wd {
                    let row = |k: isize| {
                        let yi = clamp_index(y as isize + k, wd);
                        &slice[yi * h..(yi + 1) * h]
                    };
                    apply_rows(&mut o[y * h..(y + 1) * h], taps, &w, row);
                }
            });
        }
        Axis::Z => {
            let plane = h * wd;
            out.par_chunks_mut(plane).enumerate().for_each(|(z, o)| {
                let row = |k: isize| {
                    let zi = clamp_index(z as isize + k, d);
                    &src[zi * plane..(zi + 1) * plane]
                };
                apply_rows(o, taps, &w, row);
            });
        }
    }
    out
}

fn scale_in_place<T: Scalar>(v: &mut [T], factor: f64) {
    let f = T::from_f64_lossy(factor);
    v.par_iter_mut().for_each(|x| *x = *x * f);
}

/// Gaussian smoothing at scale `sigma` (finest-voxel units), same kernels and pass order.
pub fn gaussian_smooth<T: Scalar>(vol: &Volume<T>, sigma: f64, truncate: f64) -> Result<Volume<T>> {
    check_sigma(sigma)?;
    let dims = vol.dims();
    let ks = axis_sigmas(sigma, vol.spacing()).map(|s| DerivativeKernels::new(s, truncate));
    check_kernel(dims, &ks)?;
    let a = correlate(vol.data(), dims, Axis::X, Taps::Smooth(&ks[0].smooth));
    let b = correlate(&a, dims, Axis::Y, Taps::Smooth(&ks[1].smooth));
    let c = correlate(&b, dims, Axis::Z, Taps::Smooth(&ks[2].smooth));
    Ok(Volume::from_parts(dims, vol.spacing(), *vol.meta(), c))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")))
    }
}

fn check_kernel(dims: Dims3, ks: &[DerivativeKernels; 3]) -> Result<()> {
    let d = dims.as_array();
    if (0..3).all(|a| ks[a].width() > d[a]) {
        return Err(Error::KernelTooLarge { width: ks.iter().map(|k| k.width()).max().unwrap_or(0), dims: d });
    }
    Ok(())
}

/// Scale-normalized Hessian of `vol` at `sigma`.
///
/// Components are derivatives with respect to finest-voxel coordinates,
/// multiplied by `sigma^gamma_norm`. On isotropic grids this is exactly the
/// voxel-unit Hessian times `sigma^gamma_norm`.
pub fn gaussian_hessian<T: Scalar>(vol: &Volume<T>, sigma: f64, params: &FrangiParams) -> Result<HessianField<T>> {
    check_sigma(sigma)?;
    let dims = vol.dims();
    let sig = axis_sigmas(sigma, vol.spacing());
    let ks = sig.map(|s| DerivativeKernels::new(s, params.truncate));
    check_kernel(dims, &ks)?;
    let [kx, ky, kz] = &ks;

    let x0 = correlate(vol.data(), dims, Axis::X, Taps::Smooth(&kx.smooth));
    let x1 = correlate(vol.data(), dims, Axis::X, Taps::Odd(&kx.first));
    let x2 = correlate(vol.data(), dims, Axis::X, Taps::Even(&kx.second));

    let y00 = correlate(&x0, dims, Axis::Y, Taps::Smooth(&ky.smooth));
    let y01 = correlate(&x0, dims, Axis::Y, Taps::Odd(&ky.first));
    let y02 = correlate(&x0, dims, Axis::Y, Taps::Even(&ky.second));
    drop(x0);
    let y10 = correlate(&x1, dims, Axis::Y, Taps::Smooth(&ky.smooth));
    let y11 = correlate(&x1, dims, Axis::Y, Taps::Odd(&ky.first));
    drop(x1);
    let y20 = correlate(&x2, dims, Axis::Y, Taps::Smooth(&ky.smooth));
    drop(x2);

    let zz = correlate(&y00, dims, Axis::Z, Taps::Even(&kz.second));
    drop(y00);
    let yz = correlate(&y01, dims, Axis::Z, Taps::Odd(&kz.first));
    drop(y01);
    let yy = correlate(&y02, dims, Axis::Z, Taps::Smooth(&kz.smooth));
    drop(y02);
    let xz = correlate(&y10, dims, Axis::Z, Taps::Odd(&kz.first));
    drop(y10);
    let xy = correlate(&y11, dims, Axis::Z, Taps::Smooth(&kz.smooth));
    drop(y11);
    let xx = correlate(&y20, dims, Axis::Z, Taps::Smooth(&kz.smooth));
    drop(y20);

    let mut field = HessianField { dims, spacing: vol.spacing(), xx, yy, zz, xy, xz, yz };
    let norm = sigma.powf(params.gamma_norm);
    let rel = sig.map(|s| s / sigma);
    scale_in_place(&mut field.xx, norm * rel[0] * rel[0]);
    scale_in_place(&mut field.yy, norm * rel[1] * rel[1]);
    scale_in_place(&mut field.zz, norm * rel[2] * rel[2]);
    scale_in_place(&mut field.xy, norm * rel[0] * rel[1]);
    scale_in_place(&mut field.xz, norm * rel[0] * rel[2]);
    scale_in_place(&mut field.yz, norm * rel[1] * rel[2]);
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(d: usize) -> Dims3 {
        Dims3::new(d, d, d)
    }

    #[test]
    fn kernel_moments() {
        for sigma in [0.3, 0.5, 1.0, 2.0, 4.0] {
            let k = DerivativeKernels::new(sigma, 4.0);
            let r = k.radius as isize;
            let m = |w: &[f64], p: i32| -> f64 { (-r..=r).zip(w).map(|(o, v)| (o as f64).powi(p) * v).sum() };
            assert!((m(&k.smooth, 0) - 1.0).abs() < 1e-12);
            assert!(m(&k.smooth, 1).abs() < 1e-12);
            assert!(m(&k.first, 0).abs() < 1e-12);
            assert!((m(&k.first, 1) - 1.0).abs() < 1e-12);
            assert!(m(&k.second, 0).abs() < 1e-12);
            assert!(m(&k.second, 1).abs() < 1e-12);
            assert!((m(&k.second, 2) - 2.0).abs() < 1e-12);
        }
        assert_eq!(DerivativeKernels::new(2.0, 4.0).radius, 8);
        assert_eq!(DerivativeKernels::new(0.1, 4.0).radius, 1);
    }

    #[test]
    fn tiny_sigma_reduces_to_central_differences() {
        let k = DerivativeKernels::new(0.1, 4.0);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&k.first, &[-0.5, 0.0, 0.5]));
        assert!(close(&k.second, &[1.0, -2.0, 1.0]));
    }

    #[test]
    fn constant_volume_has_zero_hessian() {
        let v = Volume::filled(iso(16), Spacing::ISOTROPIC, 3.0f64).unwrap();
        let h = gaussian_hessian(&v, 1.5, &FrangiParams::default()).unwrap();
        for c in [&h.xx, &h.yy, &h.zz, &h.xy, &h.xz, &h.yz] {
            assert!(c.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn quadratic_field_second_derivative() {
        let p = FrangiParams::default();
        let v = Volume::<f64>::from_fn(iso(40), Spacing::ISOTROPIC, |x, _, _| (x as f64 - 20.0).powi(2)).unwrap();
        for sigma in [1.0, 2.0, 4.0] {
            let h = gaussian_hessian(&v, sigma, &p).unwrap();
            let want = 2.0 * sigma.powf(p.gamma_norm);
            let r = (4.0 * sigma).ceil() as usize;
            for i in 0..v.dims().len() {
                let (x, _, _) = v.dims().coords(i);
                if x < r || x + r >= 40 {
                    continue;
                }
                assert!((h.xx[i] - want).abs() <= 1e-3 * want, "sigma {sigma}: {}", h.xx[i]);
                for c in [&h.yy, &h.zz, &h.xy, &h.xz, &h.yz] {
                    assert!(c[i].abs() <= 1e-3 * want);
                }
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let v = Volume::filled(Dims3::new(5, 5, 5), Spacing::ISOTROPIC, 1.0f32).unwrap();
        let err = gaussian_hessian(&v, 4.0, &FrangiParams::default()).unwrap_err();
        assert!(matches!(err, Error::KernelTooLarge { width: 33, .. }));
        // one axis long enough is accepted; borders replicate
        let v = Volume::filled(Dims3::new(40, 5, 5), Spacing::ISOTROPIC, 1.0f32).unwrap();
        assert!(gaussian_hessian(&v, 4.0, &FrangiParams::default()).is_ok());
        assert!(gaussian_hessian(&v, 0.0, &FrangiParams::default()).is_err());
    }

    #[test]
    fn anisotropic_spacing_shrinks_coarse_axis_sigma() {
        let s = Spacing::new(0.2637, 0.2637, 0.8).unwrap();
        let a = axis_sigmas(2.0, s);
        assert_eq!(a[0], 2.0);
        assert!((a[2] - 2.0 * 0.2637 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_quadratic_in_physical_units() {
        // I = u^2 with u = z * sz / min_sp (finest-voxel coordinate) -> Izz = 2 sigma^2.
        let s = Spacing::new(0.5, 0.5, 1.0).unwrap();
        let v = Volume::<f64>::from_fn(Dims3::new(8, 8, 40), s, |_, _, z| (2.0 * (z as f64 - 20.0)).powi(2)).unwrap();
        let h = gaussian_hessian(&v, 2.0, &FrangiParams::default()).unwrap();
        let i = v.dims().index(4, 4, 20);
        assert!((h.zz[i] - 8.0).abs() < 1e-9, "{}", h.zz[i]);
    }

    #[test]
    fn smoothing_preserves_linear_ramp() {
        let v = Volume::<f64>::from_fn(iso(20), Spacing::ISOTROPIC, |x, y, z| x as f64 + 2.0 * y as f64 - z as f64)
            .unwrap();
        let s = gaussian_smooth(&v, 1.0, 4.0).unwrap();
        let i = v.dims().index(10, 10, 10);
        assert!((s.data()[i] - v.data()[i]).abs() < 1e-12);
    }
}
