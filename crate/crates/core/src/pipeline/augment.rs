//! Spatial augmentation applied identically to every channel of a sample.
//!
//! Flips and quarter-turns are exact index permutations. The fidelity
//! options (rotations up to 30 degrees, scaling 0.7-1.4) resample: trilinear
//! for images, nearest for labels and masks.

use rand::Rng as _;

use super::config::AugmentFlags;
use crate::model::Tensor;
use crate::rng::Rng;

pub const MAX_ROTATE_DEG: f64 = 30.0;
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.4);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialTransform {
    pub flip: [bool; 3],
    /// Quarter turns: (rotation axis, number of turns 1..=3).
    pub rot90: Option<(usize, u8)>,
    /// Euler angles (radians) around x, y, z.
    pub rotate: Option<[f64; 3]>,
    pub scale: Option<f64>,
}

impl SpatialTransform {
    pub const IDENTITY: SpatialTransform =
        SpatialTransform { flip: [false; 3], rot90: None, rotate: None, scale: None };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Draw a transform according to the enabled flags.
pub fn sample_transform(flags: &AugmentFlags, rng: &mut Rng) -> SpatialTransform {
    let mut t = SpatialTransform::IDENTITY;
    if flags.flip {
        t.flip = [rng.random::<bool>(), rng.random::<bool>(), rng.random::<bool>()];
    }
    if flags.rot90 {
        let axis = rng.random_range(0..3usize);
        let k = rng.random_range(0..4u8);
        if k > 0 {
            t.rot90 = Some((axis, k));
        }
    }
    if flags.rotate {
        let max = MAX_ROTATE_DEG.to_radians();
        t.rotate = Some([
            (rng.random::<f64>() * 2.0 - 1.0) * max,
            (rng.random::<f64>() * 2.0 - 1.0) * max,
            (rng.random::<f64>() * 2.0 - 1.0) * max,
        ]);
    }
    if flags.scale {
        t.scale = Some(SCALE_RANGE.0 + rng.random::<f64>() * (SCALE_RANGE.1 - SCALE_RANGE.0));
    }
    t
}

/// Inverse quarter-turn of an index triple around `axis`.
fn rot90_inv(p: [usize; 3], dims: [usize; 3], axis: usize, k: u8) -> [usize; 3] {
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let mut q = p;
    // applying the inverse turn (4 - k) times maps output to source
    for _ in 0..(4 - k) % 4 {
        let (a, b) = (q[u], q[v]);
        q[u] = b;
        q[v] = dims[u] - 1 - a;
    }
    q
}

fn rotation_matrix(e: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = e[0].sin_cos();
    let (sy, cy) = e[1].sin_cos();
    let (sz, cz) = e[2].sin_cos();
    // R = Rz * Ry * Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

fn sample_trilinear(t: &Tensor<f32>, c: usize, q: [f64; 3], pad: f32) -> f32 {
    let [nx, ny, nz] = t.dims;
    let chan = t.channel(c);
    let fetch = |x: i64, y: i64, z: i64| -> f32 {
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            pad
        } else {
            chan[x as usize + nx * (y as usize + ny * z as usize)]
        }
    };
    let x0 = q[0].floor();
    let y0 = q[1].floor();
    let z0 = q[2].floor();
    let (fx, fy, fz) = ((q[0] - x0) as f32, (q[1] - y0) as f32, (q[2] - z0) as f32);
    let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);
    let mut acc = 0.0f32;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let w = (if dx == 0 { 1.0 - fx } else { fx })
                    * (if dy == 0 { 1.0 - fy } else { fy })
                    * (if dz == 0 { 1.0 - fz } else { fz });
                if w > 0.0 {
                    acc += w * fetch(x0 + dx, y0 + dy, z0 + dz);
                }
            }
        }
    }
    acc
}

fn sample_nearest(t: &Tensor<f32>, c: usize, q: [f64; 3], pad: f32) -> f32 {
    let [nx, ny, nz] = t.dims;
    let (x, y, z) = (q[0].round() as i64, q[1].round() as i64, q[2].round() as i64);
    if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
        pad
    } else {
        t.channel(c)[x as usize + nx * (y as usize + ny * z as usize)]
    }
}

/// Apply a transform to every channel. `trilinear` selects the interpolation
/// used by the continuous part; flips and quarter-turns are always exact.
pub fn apply_transform_tensor(
    t: &Tensor<f32>,
    tr: &SpatialTransform,
    trilinear: bool,
    pad: f32,
) -> Tensor<f32> {
    if tr.is_identity() {
        return t.clone();
    }
    let dims = t.dims;
    if tr.rot90.is_some() {
        assert!(dims[0] == dims[1] && dims[1] == dims[2], "rot90 needs cubic patches");
    }
    let continuous = tr.rotate.is_some() || tr.scale.is_some();
    let rot = rotation_matrix(tr.rotate.unwrap_or([0.0; 3]));
    let inv_scale = 1.0 / tr.scale.unwrap_or(1.0);
    let center = [
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    ];

    let mut out = Tensor::zeros(t.channels, dims);
    let spatial = t.spatial_len();
    let [nx, ny, _] = dims;
    crate::par::for_each_chunk_mut(&mut out.data, spatial, |c, chan| {
        for (i, slot) in chan.iter_mut().enumerate() {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            // undo flip
            let mut q = [
                if tr.flip[0] { dims[0] - 1 - p[0] } else { p[0] },
                if tr.flip[1] { dims[1] - 1 - p[1] } else { p[1] },
                if tr.flip[2] { dims[2] - 1 - p[2] } else { p[2] },
            ];
            // undo quarter turns
            if let Some((axis, k)) = tr.rot90 {
                q = rot90_inv(q, dims, axis, k);
            }
            if !continuous {
                *slot = t.channel(c)[q[0] + nx * (q[1] + ny * q[2])];
                continue;
            }
            // undo rotation and scale about the center (R^-1 = R^T)
            let d = [
                (q[0] as f64 - center[0]) * inv_scale,
                (q[1] as f64 - center[1]) * inv_scale,
                (q[2] as f64 - center[2]) * inv_scale,
            ];
            let src = [
                center[0] + rot[0][0] * d[0] + rot[1][0] * d[1] + rot[2][0] * d[2],
                center[1] + rot[0][1] * d[0] + rot[1][1] * d[1] + rot[2][1] * d[2],
                center[2] + rot[0][2] * d[0] + rot[1][2] * d[1] + rot[2][2] * d[2],
            ];
            *slot = if trilinear {
                sample_trilinear(t, c, src, pad)
            } else {
                sample_nearest(t, c, src, pad)
            };
        }
    });
    out
}

/// Label/mask variant: nearest-neighbor sampling, zero padding.
pub fn apply_transform_mask(t: &Tensor<f32>, tr: &SpatialTransform) -> Tensor<f32> {
    apply_transform_tensor(t, tr, false, 0.0)
}
