//! Binary morphology: cube dilation and connected-component labeling.

use super::{BinaryMask, LabelVolume, NEIGHBORS_26, NEIGHBORS_6};
use crate::par;

/// Voxel adjacency used for component labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &NEIGHBORS_6,
            Connectivity::TwentySix => &NEIGHBORS_26,
        }
    }
}

/// Dilate with a 3x3x3 cubic structure element, clipped at the borders.
pub fn dilate_cube3(m: &BinaryMask) -> BinaryMask {
    let [nx, ny, nz] = m.dims;
    let mut out = BinaryMask::zeros(m.dims, m.spacing);
    let plane = nx * ny;
    // one output z-plane per chunk
    par::for_each_chunk_mut(&mut out.data, plane, |z, chunk| {
        let z0 = z.saturating_sub(1);
        let z1 = (z + 1).min(nz - 1);
        for y in 0..ny {
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(ny - 1);
            for x in 0..nx {
                let x0 = x.saturating_sub(1);
                let x1 = (x + 1).min(nx - 1);
                let mut hit = 0u8;
                'scan: for zz in z0..=z1 {
                    for yy in y0..=y1 {
                        let row = zz * plane + yy * nx;
                        for xx in x0..=x1 {
                            if m.data[row + xx] != 0 {
                                hit = 1;
                                break 'scan;
                            }
                        }
                    }
                }
                chunk[y * nx + x] = hit;
            }
        }
    });
    out
}

/// Label connected foreground components.
///
/// Labels 1..count are assigned in scan order of each component's first
/// voxel; background stays 0.
pub fn connected_components(m: &BinaryMask, connectivity: Connectivity) -> (LabelVolume, usize) {
    let mut labels = LabelVolume::zeros(m.dims, m.spacing);
    let offsets = connectivity.offsets();
    let mut count = 0u32;
    let mut queue: Vec<usize> = Vec::new();

    for start in 0..m.data.len() {
        if m.data[start] == 0 || labels.data[start] != 0 {
            continue;
        }
        count += 1;
        labels.data[start] = count;
        queue.clear();
        queue.push(start);
        while let Some(idx) = queue.pop() {
            let [x, y, z] = m.coord(idx);
            for off in offsets {
                let p = [x as i64 + off[0], y as i64 + off[1], z as i64 + off[2]];
                if !m.in_bounds(p) {
                    continue;
                }
                let ni = m.index(p[0] as usize, p[1] as usize, p[2] as usize);
                if m.data[ni] != 0 && labels.data[ni] == 0 {
                    labels.data[ni] = count;
                    queue.push(ni);
                }
            }
        }
    }

    (labels, count as usize)
}
