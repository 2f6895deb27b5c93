//! Synthetic angiography-like volumes shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vessel_core::nifti::save_nifti;
use vessel_core::{BinaryMask3, Dims3, Spacing, Volume3};

/// A head-like ellipsoid with bright tubes inside, on a noisy background.
pub struct HeadPhantom {
    pub volume: Volume3,
    /// Voxels belonging to a tube.
    pub vessels: BinaryMask3,
    /// Voxels belonging to the ellipsoid.
    pub head: BinaryMask3,
}

pub fn head_phantom(dims: Dims3, spacing: Spacing, seed: u64) -> HeadPhantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, d) = (dims.h as f32, dims.w as f32, dims.d as f32);
    let (cx, cy, cz) = (h / 2.0 + rng.random_range(-2.0..2.0), w / 2.0 + rng.random_range(-2.0..2.0), d / 2.0);
    let (ax, ay, az) = (0.36 * h, 0.30 * w, 0.48 * d);
    let phase: f32 = rng.random_range(0.0..6.0);
    let wobble = 0.08 * h;
    let r2 = 1.6f32 * 1.6;

    let mut head = vec![false; dims.len()];
    let mut vessels = vec![false; dims.len()];
    let mut data = vec![0.0f32; dims.len()];
    for z in 0..dims.d {
        let zf = z as f32;
        // a wavy tube along z and a straight one along x
        let tx = cx + wobble * (zf / d * 6.0 + phase).sin();
        let ty = cy - 0.1 * w;
        for y in 0..dims.w {
            let yf = y as f32;
            for x in 0..dims.h {
                let xf = x as f32;
                let i = dims.index(x, y, z);
                let e = ((xf - cx) / ax).powi(2) + ((yf - cy) / ay).powi(2) + ((zf - cz) / az).powi(2);
                let inside = e <= 1.0;
                let t1 = (xf - tx).powi(2) + (yf - ty).powi(2) <= r2;
                let t2 = (yf - (cy + 0.12 * w)).powi(2) + (zf - cz).powi(2) <= r2 && (xf - cx).abs() < 0.8 * ax;
                let vessel = inside && (t1 || t2);
                head[i] = inside;
                vessels[i] = vessel;
                let noise: f32 = rng.random_range(0.0..0.05);
                data[i] = if vessel {
                    0.9 + noise
                } else if inside {
                    0.25 + noise
                } else {
                    noise
                };
            }
        }
    }
    HeadPhantom {
        volume: Volume3::new(dims, spacing, data).unwrap(),
        vessels: BinaryMask3::new(dims, spacing, vessels).unwrap(),
        head: BinaryMask3::new(dims, spacing, head).unwrap(),
    }
}

/// Writes `n` small phantoms as `sub-0i.nii.gz` into `dir`.
pub fn write_phantom_inputs(dir: &Path, n: usize) -> Vec<HeadPhantom> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let dims = Dims3::new(56 + 4 * i, 52, 24 + 2 * i);
            let p = head_phantom(dims, Spacing::new(0.4, 0.4, 0.8).unwrap(), 100 + i as u64);
            save_nifti(&p.volume, dir.join(format!("sub-0{i}.nii.gz"))).unwrap();
            p
        })
        .collect()
}

/// Every regular file under `root`, relative path to contents, sorted.
pub fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
