//! Exact squared Euclidean distance transform with per-axis spacing.
//!
//! Separable lower-envelope-of-parabolas construction, one 1D pass per
//! axis. Distances are in physical units.

use rayon::prelude::*;

use crate::volume::{Dims3, Spacing};

/// Squared distance from each voxel to the nearest `true` voxel of `feature`.
///
/// Returns `+inf` everywhere when `feature` has no `true` voxel.
pub fn squared_edt(feature: &[bool], dims: Dims3, spacing: Spacing) -> Vec<f64> {
    assert_eq!(feature.len(), dims.len());
    let (h, w, d) = (dims.h, dims.w, dims.d);
    let mut f: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    if f.is_empty() {
        return f;
    }

    f.par_chunks_mut(h).for_each_init(Envelope::default, |env, line| {
        let src = line.to_vec();
        env.run(&src, spacing.x, line);
    });

    f.par_chunks_mut(h * w).for_each_init(Envelope::default, |env, slice| {
        let mut src = vec![0.0; w];
        let mut out = vec![0.0; w];
        for x in 0..h {
            for y in 0..w {
                src[y] = slice[x + h * y];
            }
            env.run(&src, spacing.y, &mut out);
            for y in 0..w {
                slice[x + h * y] = out[y];
            }
        }
    });

    if d > 1 {
        let plane = h * w;
        let mut cols = vec![0.0; f.len()];
        cols.par_chunks_mut(d).enumerate().for_each_init(
            || (Envelope::default(), vec![0.0; d]),
            |(env, src), (j, out)| {
                for z in 0..d {
                    src[z] = f[j + plane * z];
                }
                env.run(src, spacing.z, out);
            },
        );
        for j in 0..plane {
            for z in 0..d {
                f[j + plane * z] = cols[j * d + z];
            }
        }
    }
    f
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// `out[q] = min_p (q s - p s)^2 + f[p]` over sites with finite `f[p]`.
    fn run(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            let pq = q as f64 * s;
            while let Some(&v) = self.sites.last() {
                let pv = v as f64 * s;
                let cross = ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
                if cross <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(cross);
                    break;
                }
            }
            if self.sites.is_empty() {
                self.sites.push(q);
                self.bounds.push(f64::NEG_INFINITY);
            }
        }
        if self.sites.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let pq = q as f64 * s;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < pq {
                k += 1;
            }
            let v = self.sites[k];
            let dx = pq - v as f64 * s;
            *o = dx * dx + f[v];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(feature: &[bool], dims: Dims3, sp: Spacing) -> Vec<f64> {
        let pts: Vec<_> = (0..dims.len()).filter(|&i| feature[i]).map(|i| dims.coords(i)).collect();
        (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                pts.iter()
                    .map(|&(a, b, c)| {
                        let dx = (x as f64 - a as f64) * sp.x;
                        let dy = (y as f64 - b as f64) * sp.y;
                        let dz = (z as f64 - c as f64) * sp.z;
                        dx * dx + dy * dy + dz * dz
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn empty_feature_is_infinite() {
        let d = Dims3::new(3, 4, 5);
        assert!(squared_edt(&vec![false; d.len()], d, Spacing::ISOTROPIC).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn single_point_anisotropic() {
        let d = Dims3::new(7, 5, 4);
        let mut f = vec![false; d.len()];
        f[d.index(2, 1, 3)] = true;
        let sp = Spacing::new(0.5, 0.7, 1.0).unwrap();
        let e = squared_edt(&f, d, sp);
        assert!((e[d.index(5, 1, 3)] - 2.25).abs() < 1e-12);
        assert!((e[d.index(2, 4, 0)] - (2.1f64.powi(2) + 9.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dims3::new(rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12));
            let dens = rng.random_range(0.005..0.3);
            let f: Vec<bool> = (0..d.len()).map(|_| rng.random_bool(dens)).collect();
            let sp = Spacing::new(rng.random_range(0.3..2.0), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)).unwrap();
            let fast = squared_edt(&f, d, sp);
            let slow = brute(&f, d, sp);
            for (a, b) in fast.iter().zip(&slow) {
                if b.is_infinite() {
                    prop_assert!(a.is_infinite());
                } else {
                    prop_assert!((a.sqrt() - b.sqrt()).abs() < 1e-9, "{} vs {}", a, b);
                }
            }
        }
    }
}
