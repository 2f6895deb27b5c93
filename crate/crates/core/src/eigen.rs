//! Closed-form eigenvalues of symmetric 3x3 matrices.
//!
//! Uses the trigonometric solution of the characteristic cubic on the
//! shifted, scaled matrix `(A - q I) / p`. Matrices whose off-diagonal norm
//! is negligible relative to the whole matrix return their diagonal.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenvalues ordered by magnitude, `|lam1| <= |lam2| <= |lam3|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple<T> {
    pub lam1: T,
    pub lam2: T,
    pub lam3: T,
}

impl<T: Scalar> EigenTriple<T> {
    pub fn from_unordered(a: T, b: T, c: T) -> Self {
        let (mut a, mut b, mut c) = (a, b, c);
        if a.abs() > b.abs() {
            std::mem::swap(&mut a, &mut b);
        }
        if b.abs() > c.abs() {
            std::mem::swap(&mut b, &mut c);
        }
        if a.abs() > b.abs() {
            std::mem::swap(&mut a, &mut b);
        }
        Self { lam1: a, lam2: b, lam3: c }
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.lam1, self.lam2, self.lam3]
    }
}

const OFFDIAG_EPS: f64 = 1e-12;

/// Unordered eigenvalues, no input validation. Hot path for per-voxel use.
#[inline]
pub fn eigenvalues_sym3<T: Scalar>(xx: T, yy: T, zz: T, xy: T, xz: T, yz: T) -> [T; 3] {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let off = xy * xy + xz * xz + yz * yz;
    let diag = xx * xx + yy * yy + zz * zz;
    let norm2 = diag + two * off;
    let eps = T::lit(OFFDIAG_EPS);
    if off.sqrt() <= eps * norm2.sqrt() {
        return [xx, yy, zz];
    }

    let q = (xx + yy + zz) / three;
    let (a, b, c) = (xx - q, yy - q, zz - q);
    let p = ((a * a + b * b + c * c + two * off) / T::lit(6.0)).sqrt();
    // det(A - qI) / (2 p^3)
    let det = a * (b * c - yz * yz) - xy * (xy * c - yz * xz) + xz * (xy * yz - b * xz);
    let r = (det / (two * p * p * p)).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let e1 = q + two * p * phi.cos();
    let e3 = q + two * p * (phi + T::lit(2.0 * std::f64::consts::FRAC_PI_3)).cos();
    let e2 = three * q - e1 - e3;
    [e1, e2, e3]
}

/// Eigenvalues of the symmetric matrix with the given six unique entries.
pub fn eigen3_symmetric<T: Scalar>(xx: T, yy: T, zz: T, xy: T, xz: T, yz: T) -> Result<EigenTriple<T>> {
    if [xx, yy, zz, xy, xz, yz].iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("non-finite matrix entry".into()));
    }
    let [a, b, c] = eigenvalues_sym3(xx, yy, zz, xy, xz, yz);
    Ok(EigenTriple::from_unordered(a, b, c))
}
