//! Topology-preserving 3D thinning (26-connected foreground).
//!
//! Border voxels are peeled in six direction-ordered subiterations. A voxel
//! is deleted when it is not a curve endpoint, its removal leaves the local
//! Euler characteristic unchanged, and its remaining 26-neighbours stay a
//! single 26-connected component. Candidates of a subiteration are
//! re-checked sequentially against the current image before deletion, and
//! thinning stops once a full round of six subiterations deletes nothing.

use std::sync::OnceLock;

use crate::volume::{BinaryMask3, Dims3};

/// Neighbourhood bit for offset `(dx, dy, dz)`.
const fn bit(dx: i32, dy: i32, dz: i32) -> u32 {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as u32
}

const CENTER: u32 = bit(0, 0, 0);

struct Tables {
    /// For every vertex, edge and face of the centre cube: its sign
    /// `(-1)^dim` and the neighbours whose closed cube contains it.
    cells: Vec<(i32, u32)>,
    /// For each neighbour bit: the neighbours 26-adjacent to it, centre excluded.
    adjacency: [u32; 27],
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut cells = Vec::new();
        for cz in -1..=1 {
            for cy in -1..=1 {
                for cx in -1..=1 {
                    let c = [cx, cy, cz];
                    let dim = c.iter().filter(|&&v| v == 0).count();
                    if dim == 3 {
                        continue;
                    }
                    let mut cover = 0u32;
                    for_each_offset(|o| {
                        let inside = (0..3).all(|a| if c[a] == 0 { o[a] == 0 } else { o[a] == 0 || o[a] == c[a] });
                        if inside && o != [0, 0, 0] {
                            cover |= 1 << bit(o[0], o[1], o[2]);
                        }
                    });
                    cells.push((if dim % 2 == 0 { 1 } else { -1 }, cover));
                }
            }
        }
        let mut adjacency = [0u32; 27];
        for_each_offset(|o| {
            if o == [0, 0, 0] {
                return;
            }
            for_each_offset(|p| {
                let close = (0..3).all(|a| (o[a] - p[a]).abs() <= 1);
                if close && p != o && p != [0, 0, 0] {
                    adjacency[bit(o[0], o[1], o[2]) as usize] |= 1 << bit(p[0], p[1], p[2]);
                }
            });
        });
        Tables { cells, adjacency }
    })
}

fn for_each_offset(mut f: impl FnMut([i32; 3])) {
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                f([dx, dy, dz]);
            }
        }
    }
}

/// Removing the centre leaves the Euler characteristic of the closed-cube union unchanged.
fn euler_invariant(n: u32) -> bool {
    // Removal deletes the centre cube (dim 3) and every lower cell of it not
    // covered by another voxel; the signed count of deleted cells must be 0.
    let t = tables();
    let mut delta = -1;
    for &(sign, cover) in &t.cells {
        if n & cover == 0 {
            delta += sign;
        }
    }
    delta == 0
}

/// The neighbours (centre excluded) form exactly one 26-connected component.
fn single_component(n: u32) -> bool {
    let n = n & !(1 << CENTER);
    if n == 0 {
        return false;
    }
    let t = tables();
    let mut seen = 1u32 << n.trailing_zeros();
    let mut frontier = seen;
    while frontier != 0 {
        let b = frontier.trailing_zeros();
        frontier &= frontier - 1;
        let next = t.adjacency[b as usize] & n & !seen;
        seen |= next;
        frontier |= next;
    }
    seen == n
}

fn is_endpoint(n: u32) -> bool {
    (n & !(1 << CENTER)).count_ones() == 1
}

fn is_simple(n: u32) -> bool {
    euler_invariant(n) && single_component(n)
}

struct Grid<'a> {
    dims: Dims3,
    img: &'a [bool],
}

impl Grid<'_> {
    #[inline]
    fn at(&self, x: i64, y: i64, z: i64) -> bool {
        let d = self.dims;
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < d.h
            && (y as usize) < d.w
            && (z as usize) < d.d
            && self.img[d.index(x as usize, y as usize, z as usize)]
    }

    fn neighbourhood(&self, i: usize) -> u32 {
        let (x, y, z) = self.dims.coords(i);
        let (x, y, z) = (x as i64, y as i64, z as i64);
        let mut n = 0u32;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if self.at(x + dx, y + dy, z + dz) {
                        n |= 1 << bit(dx as i32, dy as i32, dz as i32);
                    }
                }
            }
        }
        n
    }
}

/// Subiteration order: -y, +y, +x, -x, +z, -z faces.
const BORDERS: [(i64, i64, i64); 6] = [(0, -1, 0), (0, 1, 0), (1, 0, 0), (-1, 0, 0), (0, 0, 1), (0, 0, -1)];

/// Thins `mask` to a topology-equivalent curve skeleton; idempotent.
pub fn skeletonize_3d(mask: &BinaryMask3) -> BinaryMask3 {
    let dims = mask.dims();
    let mut img = mask.bits().to_vec();
    let mut fg: Vec<usize> = (0..img.len()).filter(|&i| img[i]).collect();
    let mut candidates = Vec::new();
    loop {
        let mut unchanged = 0;
        for &(bx, by, bz) in &BORDERS {
            candidates.clear();
            {
                let g = Grid { dims, img: &img };
                for &i in &fg {
                    let (x, y, z) = dims.coords(i);
                    if g.at(x as i64 + bx, y as i64 + by, z as i64 + bz) {
                        continue;
                    }
                    let n = g.neighbourhood(i);
                    if !is_endpoint(n) && is_simple(n) {
                        candidates.push(i);
                    }
                }
            }
            let mut changed = false;
            for &i in &candidates {
                let n = Grid { dims, img: &img }.neighbourhood(i);
                if is_simple(n) {
                    img[i] = false;
                    changed = true;
                }
            }
            if changed {
                fg.retain(|&i| img[i]);
            } else {
                unchanged += 1;
            }
        }
        if unchanged == BORDERS.len() {
            break;
        }
    }
    BinaryMask3::from_parts(dims, mask.spacing(), *mask.meta(), img)
}
