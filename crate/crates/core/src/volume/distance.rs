//! Exact Euclidean distance transform.
//!
//! Squared distances are computed dimension-by-dimension with the integer
//! lower-envelope scan (Meijster et al.), so results are exact. The volume
//! boundary counts as adjacent to a virtual background layer: a foreground
//! voxel at the border is at distance 1 even when the in-grid mask has no
//! background at all.

use super::{BinaryMask, Volume};
use crate::par;

const INF: i64 = i64::MAX / 4;

#[inline]
fn sq(x: i64) -> i64 {
    x * x
}

/// Lower envelope scan along one axis: `out[u] = min_i (u-i)^2 + f[i]`.
fn envelope(f: &[i64], out: &mut [i64], s: &mut [i64], t: &mut [i64]) {
    let n = f.len() as i64;
    let mut q: i64 = 0;
    s[0] = 0;
    t[0] = 0;
    let fval = |i: i64| f[i as usize];
    for u in 1..n {
        while q >= 0 && sq(t[q as usize] - s[q as usize]) + fval(s[q as usize]) > sq(t[q as usize] - u) + fval(u)
        {
            q -= 1;
        }
        if q < 0 {
            q = 0;
            s[0] = u;
        } else {
            let i = s[q as usize];
            let w = 1 + (sq(u) - sq(i) + fval(u) - fval(i)) / (2 * (u - i));
            if w < n {
                q += 1;
                s[q as usize] = u;
                t[q as usize] = w;
            }
        }
    }
    for u in (0..n).rev() {
        out[u as usize] = sq(u - s[q as usize]) + fval(s[q as usize]);
        if u == t[q as usize] {
            q -= 1;
        }
    }
}

/// Exact Euclidean distance (in voxels, isotropic) from each foreground voxel
/// to the nearest background voxel, counting the virtual layer outside the
/// volume as background. Background voxels map to 0.
pub fn distance_transform(m: &BinaryMask) -> Volume {
    let [nx, ny, nz] = m.dims;
    let plane = nx * ny;

    // phase 1: per-row distance along x, with the virtual outside layer
    let mut g = vec![0i64; m.data.len()];
    par::for_each_chunk_mut(&mut g, plane, |z, gz| {
        for y in 0..ny {
            let row = z * plane + y * nx;
            let out = &mut gz[y * nx..(y + 1) * nx];
            out[0] = if m.data[row] == 0 { 0 } else { INF };
            for x in 1..nx {
                out[x] = if m.data[row + x] == 0 {
                    0
                } else {
                    (out[x - 1] + 1).min(INF)
                };
            }
            for x in (0..nx - 1).rev() {
                out[x] = out[x].min(out[x + 1] + 1);
            }
            for (x, v) in out.iter_mut().enumerate() {
                let border = (x as i64 + 1).min(nx as i64 - x as i64);
                *v = (*v).min(border);
            }
        }
    });

    // phase 2: envelope along y over g^2
    let mut dt2 = vec![0i64; m.data.len()];
    par::for_each_chunk_mut(&mut dt2, plane, |z, plane_out| {
        let mut f = vec![0i64; ny];
        let mut col = vec![0i64; ny];
        let mut s = vec![0i64; ny];
        let mut t = vec![0i64; ny];
        for x in 0..nx {
            for y in 0..ny {
                f[y] = sq(g[z * plane + y * nx + x]);
            }
            envelope(&f, &mut col, &mut s, &mut t);
            for y in 0..ny {
                plane_out[y * nx + x] = col[y];
            }
        }
    });

    // phase 3: envelope along z, input folded with the virtual y layer;
    // columns are written z-fastest and transposed back at the end
    let mut zcols = vec![0i64; m.data.len()];
    par::for_each_chunk_mut(&mut zcols, nz, |ci, chunk| {
        let x = ci % nx;
        let y = ci / nx;
        let ybord = sq((y as i64 + 1).min(ny as i64 - y as i64));
        let mut f = vec![0i64; nz];
        let mut s = vec![0i64; nz];
        let mut t = vec![0i64; nz];
        let mut out = vec![0i64; nz];
        for z in 0..nz {
            f[z] = dt2[z * plane + y * nx + x].min(ybord);
        }
        envelope(&f, &mut out, &mut s, &mut t);
        chunk.copy_from_slice(&out);
    });

    let mut result = Volume::zeros(m.dims, m.spacing);
    par::fill_indexed(&mut result.data, |i| {
        let x = i % nx;
        let y = (i / nx) % ny;
        let z = i / plane;
        let zbord = sq((z as i64 + 1).min(nz as i64 - z as i64));
        let d2 = zcols[z + nz * (x + nx * y)].min(zbord);
        (d2 as f64).sqrt() as f32
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    /// All-pairs oracle over the mask padded with one background layer.
    fn brute_force_edt(m: &BinaryMask) -> Volume {
        let [nx, ny, nz] = m.dims;
        let mut out = Volume::zeros(m.dims, m.spacing);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if m.get(x, y, z) == 0 {
                        continue;
                    }
                    let mut best = i64::MAX;
                    for pz in -1..=(nz as i64) {
                        for py in -1..=(ny as i64) {
                            for px in -1..=(nx as i64) {
                                let inside = px >= 0
                                    && py >= 0
                                    && pz >= 0
                                    && (px as usize) < nx
                                    && (py as usize) < ny
                                    && (pz as usize) < nz;
                                let bg = if inside {
                                    m.get(px as usize, py as usize, pz as usize) == 0
                                } else {
                                    true
                                };
                                if bg {
                                    let d2 = sq(px - x as i64) + sq(py - y as i64) + sq(pz - z as i64);
                                    best = best.min(d2);
                                }
                            }
                        }
                    }
                    out.set(x, y, z, (best as f64).sqrt() as f32);
                }
            }
        }
        out
    }

    #[test]
    fn solid_cube_center_reaches_virtual_layer() {
        let m = Grid::from_fn([3, 3, 3], [1.0; 3], |_, _, _| 1u8);
        let d = distance_transform(&m);
        assert_eq!(d.get(1, 1, 1), 2.0);
        assert_eq!(d.get(0, 1, 1), 1.0);
    }

    #[test]
    fn single_voxel_is_distance_one() {
        let mut m = BinaryMask::zeros([5, 5, 5], [1.0; 3]);
        m.set(2, 2, 2, 1);
        let d = distance_transform(&m);
        assert_eq!(d.get(2, 2, 2), 1.0);
        assert_eq!(d.get(0, 0, 0), 0.0);
    }

    #[test]
    fn empty_mask_is_all_zero() {
        let m = BinaryMask::zeros([4, 4, 4], [1.0; 3]);
        let d = distance_transform(&m);
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_brute_force_exactly_on_random_masks() {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(42);
        for case in 0..30 {
            let dims = [
                2 + (case % 7),
                2 + (case % 5),
                2 + (case % 9),
            ];
            let m = Grid::from_fn(dims, [1.0; 3], |_, _, _| u8::from(rng.random::<f32>() < 0.6));
            let fast = distance_transform(&m);
            let slow = brute_force_edt(&m);
            assert_eq!(fast.data, slow.data, "dims {dims:?}");
        }
    }

    #[test]
    fn matches_brute_force_on_16_cube() {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(7);
        let m = Grid::from_fn([16, 16, 16], [1.0; 3], |_, _, _| u8::from(rng.random::<f32>() < 0.7));
        let fast = distance_transform(&m);
        let slow = brute_force_edt(&m);
        assert_eq!(fast.data, slow.data);
    }
}
