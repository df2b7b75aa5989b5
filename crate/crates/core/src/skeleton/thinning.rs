//! Topology-preserving 3D thinning.
//!
//! Iterative border peeling in six fixed sub-iterations (+x, -x, +y, -y,
//! +z, -z). A voxel is deleted only when it is a simple point, so the number
//! of 26-connected foreground components (and of background components) never
//! changes, and line endpoints are preserved so curves do not erode from
//! their tips. Candidates are gathered per sub-iteration from a snapshot and
//! then rechecked sequentially in index order, which makes the result
//! deterministic and independent of the thread count.

use std::sync::OnceLock;

use super::super::volume::BinaryMask;
use crate::par;

/// Cell index inside the 3x3x3 neighborhood block.
#[inline]
const fn cell(dx: i64, dy: i64, dz: i64) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

const CENTER: usize = cell(0, 0, 0);

struct Tables {
    /// 26-adjacent cells within the block, per cell.
    adj26: Vec<Vec<u8>>,
    /// 6-adjacent cells within the 18-neighborhood, per cell (empty for
    /// cells outside the 18-neighborhood).
    adj6_n18: Vec<Vec<u8>>,
    /// Cells at squared offset norm 1 (face neighbors).
    faces: Vec<u8>,
}

fn cell_offset(i: usize) -> [i64; 3] {
    [(i % 3) as i64 - 1, ((i / 3) % 3) as i64 - 1, (i / 9) as i64 - 1]
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let norm2 = |p: [i64; 3]| p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        let in_n18 = |i: usize| {
            let n = norm2(cell_offset(i));
            n == 1 || n == 2
        };
        let mut adj26 = vec![Vec::new(); 27];
        let mut adj6_n18 = vec![Vec::new(); 27];
        for a in 0..27 {
            let pa = cell_offset(a);
            for b in 0..27 {
                if a == b {
                    continue;
                }
                let pb = cell_offset(b);
                let d = [pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]];
                let cheb = d.iter().map(|v| v.abs()).max().unwrap();
                if cheb == 1 && a != CENTER && b != CENTER {
                    adj26[a].push(b as u8);
                }
                if norm2(d) == 1 && in_n18(a) && in_n18(b) {
                    adj6_n18[a].push(b as u8);
                }
            }
        }
        let faces = (0..27)
            .filter(|&i| norm2(cell_offset(i)) == 1)
            .map(|i| i as u8)
            .collect();
        Tables { adj26, adj6_n18, faces }
    })
}

/// Gather the 3x3x3 neighborhood of (x, y, z); outside voxels are background.
#[inline]
fn neighborhood(data: &[u8], dims: [usize; 3], x: usize, y: usize, z: usize) -> [bool; 27] {
    let [nx, ny, nz] = dims;
    let mut nb = [false; 27];
    for dz in -1i64..=1 {
        let zz = z as i64 + dz;
        if zz < 0 || zz >= nz as i64 {
            continue;
        }
        for dy in -1i64..=1 {
            let yy = y as i64 + dy;
            if yy < 0 || yy >= ny as i64 {
                continue;
            }
            let row = (zz as usize * ny + yy as usize) * nx;
            for dx in -1i64..=1 {
                let xx = x as i64 + dx;
                if xx < 0 || xx >= nx as i64 {
                    continue;
                }
                nb[cell(dx, dy, dz)] = data[row + xx as usize] != 0;
            }
        }
    }
    nb
}

fn count_fg_neighbors(nb: &[bool; 27]) -> usize {
    nb.iter()
        .enumerate()
        .filter(|&(i, &v)| i != CENTER && v)
        .count()
}

/// Number of 26-connected components of the foreground within the punctured
/// neighborhood.
fn fg_components(nb: &[bool; 27]) -> usize {
    let t = tables();
    let mut seen = [false; 27];
    let mut count = 0;
    let mut stack = Vec::with_capacity(26);
    for start in 0..27 {
        if start == CENTER || !nb[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &t.adj26[i] {
                let j = j as usize;
                if nb[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Number of 6-connected background components within the 18-neighborhood
/// that touch a face neighbor of the center.
fn bg_components(nb: &[bool; 27]) -> usize {
    let t = tables();
    let mut seen = [false; 27];
    let mut count = 0;
    let mut stack = Vec::with_capacity(18);
    for &start in &t.faces {
        let start = start as usize;
        if nb[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &t.adj6_n18[i] {
                let j = j as usize;
                if !nb[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Deleting a simple point leaves both foreground and background topology
/// intact (one foreground component in N26, one background component in N18
/// touching a face).
fn is_simple(nb: &[bool; 27]) -> bool {
    fg_components(nb) == 1 && bg_components(nb) == 1
}

const DIRECTIONS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

#[inline]
fn deletable(data: &[u8], dims: [usize; 3], idx: usize, dir: [i64; 3]) -> bool {
    let [nx, ny, _] = dims;
    let x = idx % nx;
    let y = (idx / nx) % ny;
    let z = idx / (nx * ny);
    let nb = neighborhood(data, dims, x, y, z);
    if !nb[cell(dir[0], dir[1], dir[2])] // border point in this direction
        && count_fg_neighbors(&nb) != 1 // not a line endpoint
        && is_simple(&nb)
    {
        return true;
    }
    false
}

/// Thin a binary mask to a 1-voxel-wide centerline skeleton.
pub fn skeletonize(m: &BinaryMask) -> BinaryMask {
    let dims = m.dims;
    let [nx, ny, nz] = dims;
    let plane = nx * ny;
    let mut out = m.clone();

    loop {
        let mut changed = false;
        for dir in DIRECTIONS {
            // candidate scan on a snapshot, in deterministic plane order
            let planes = par::map_collect(nz, |z| {
                let mut found = Vec::new();
                let base = z * plane;
                for i in base..base + plane {
                    if out.data[i] != 0 && deletable(&out.data, dims, i, dir) {
                        found.push(i);
                    }
                }
                found
            });
            // sequential recheck: earlier deletions can invalidate later ones
            for idx in planes.into_iter().flatten() {
                if deletable(&out.data, dims, idx, dir) {
                    out.data[idx] = 0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{connected_components, Connectivity, Grid};

    fn line_mask(len: usize) -> BinaryMask {
        let mut m = BinaryMask::zeros([len + 2, 3, 3], [1.0; 3]);
        for x in 1..=len {
            m.set(x, 1, 1, 1);
        }
        m
    }

    #[test]
    fn thin_line_is_fixed_point() {
        let m = line_mask(10);
        assert_eq!(skeletonize(&m), m);
    }

    #[test]
    fn empty_stays_empty() {
        let m = BinaryMask::zeros([4, 4, 4], [1.0; 3]);
        assert_eq!(skeletonize(&m).count_ones(), 0);
    }

    #[test]
    fn output_is_subset_of_input() {
        let m = solid_cylinder(20, 3.0);
        let s = skeletonize(&m);
        assert!(s.subset_of(&m));
    }

    fn solid_cylinder(len: usize, radius: f64) -> BinaryMask {
        let r = radius.ceil() as usize + 2;
        let side = 2 * r + 1;
        Grid::from_fn([len + 4, side, side], [1.0; 3], |x, y, z| {
            let dy = y as f64 - r as f64;
            let dz = z as f64 - r as f64;
            u8::from(x >= 2 && x < len + 2 && dy * dy + dz * dz <= radius * radius)
        })
    }

    fn skeleton_degrees(s: &BinaryMask) -> Vec<usize> {
        let mut degs = Vec::new();
        for i in 0..s.len() {
            if s.data[i] == 0 {
                continue;
            }
            let [x, y, z] = s.coord(i);
            let nb = neighborhood(&s.data, s.dims, x, y, z);
            degs.push(count_fg_neighbors(&nb));
        }
        degs
    }

    #[test]
    fn cylinder_thins_to_single_path() {
        let m = solid_cylinder(20, 3.0);
        let s = skeletonize(&m);
        let (_, count) = connected_components(&s, Connectivity::TwentySix);
        assert_eq!(count, 1);
        let degs = skeleton_degrees(&s);
        let endpoints = degs.iter().filter(|&&d| d == 1).count();
        assert_eq!(endpoints, 2, "degrees {degs:?}");
        assert!(degs.iter().all(|&d| d <= 2));
    }

    #[test]
    fn component_count_is_preserved_on_random_blobs() {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(99);
        for _ in 0..15 {
            let raw = Grid::from_fn([12, 12, 12], [1.0; 3], |_, _, _| {
                u8::from(rng.random::<f32>() < 0.25)
            });
            // dilation makes blobby shapes instead of salt-and-pepper noise
            let m = crate::volume::dilate_cube3(&raw);
            let s = skeletonize(&m);
            let (_, before) = connected_components(&m, Connectivity::TwentySix);
            let (_, after) = connected_components(&s, Connectivity::TwentySix);
            assert_eq!(before, after);
        }
    }

    #[test]
    fn skeleton_is_idempotent() {
        let m = solid_cylinder(12, 2.5);
        let s = skeletonize(&m);
        assert_eq!(skeletonize(&s), s);
    }

    #[test]
    fn no_remaining_voxel_is_deletable() {
        let m = solid_cylinder(15, 3.0);
        let s = skeletonize(&m);
        for i in 0..s.len() {
            if s.data[i] != 0 {
                for dir in DIRECTIONS {
                    assert!(!deletable(&s.data, s.dims, i, dir));
                }
            }
        }
    }
}
