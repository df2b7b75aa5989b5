//! Patch extraction and refinement-sample assembly.

use rand::Rng as _;

use crate::model::Tensor;
use crate::rng::Rng;
use crate::volume::{BinaryMask, Volume};

/// Uniform random patch offset; axes smaller than the patch get offset 0 and
/// rely on padding.
pub fn random_offset(dims: [usize; 3], patch: usize, rng: &mut Rng) -> [usize; 3] {
    let mut off = [0usize; 3];
    for a in 0..3 {
        let max = dims[a].saturating_sub(patch);
        off[a] = if max == 0 { 0 } else { rng.random_range(0..=max) };
    }
    off
}

/// Cut a cubic patch from a volume, padding with `pad` outside the volume.
pub fn extract_patch_volume(v: &Volume, offset: [usize; 3], patch: usize, pad: f32) -> Tensor<f32> {
    let mut out = Tensor::zeros(1, [patch, patch, patch]);
    for z in 0..patch {
        for y in 0..patch {
            for x in 0..patch {
                let src = [offset[0] + x, offset[1] + y, offset[2] + z];
                let val = if src[0] < v.dims[0] && src[1] < v.dims[1] && src[2] < v.dims[2] {
                    v.get(src[0], src[1], src[2])
                } else {
                    pad
                };
                out.data[x + patch * (y + patch * z)] = val;
            }
        }
    }
    out
}

/// Cut a cubic patch from a mask as a 0/1 float tensor, zero padded.
pub fn extract_patch_mask(m: &BinaryMask, offset: [usize; 3], patch: usize) -> Tensor<f32> {
    let mut out = Tensor::zeros(1, [patch, patch, patch]);
    for z in 0..patch {
        for y in 0..patch {
            for x in 0..patch {
                let src = [offset[0] + x, offset[1] + y, offset[2] + z];
                let val = if src[0] < m.dims[0] && src[1] < m.dims[1] && src[2] < m.dims[2] {
                    m.get(src[0], src[1], src[2]) as f32
                } else {
                    0.0
                };
                out.data[x + patch * (y + patch * z)] = val;
            }
        }
    }
    out
}

/// Where a refinement sample's label channel came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Initial,
    Synthetic,
}

/// One training sample for the refinement network.
#[derive(Clone, Debug)]
pub struct RefinementSample {
    pub image: Tensor<f32>,
    /// Label channel: the initial segmentation or a synthetic label.
    pub label: Tensor<f32>,
    pub target: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub source: LabelSource,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn full_volume_patch_has_zero_offset() {
        let mut rng = crate::rng::seed_rng(1);
        for _ in 0..20 {
            assert_eq!(random_offset([16, 16, 16], 16, &mut rng), [0, 0, 0]);
        }
    }

    #[test]
    fn offsets_stay_in_bounds() {
        let mut rng = crate::rng::seed_rng(2);
        for _ in 0..200 {
            let off = random_offset([40, 33, 48], 16, &mut rng);
            assert!(off[0] <= 24 && off[1] <= 17 && off[2] <= 32);
        }
    }

    #[test]
    fn patch_copies_values_and_pads() {
        let v = Grid::from_fn([4, 4, 4], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as f32);
        let t = extract_patch_volume(&v, [2, 2, 2], 4, -1.0);
        // inside corner
        assert_eq!(t.data[0], v.get(2, 2, 2));
        // outside gets the pad value
        assert_eq!(t.data[3], -1.0);
    }

    #[test]
    fn foreground_patches_show_up_for_centered_object() {
        let mut m = Grid::<u8>::zeros([32, 32, 32], [1.0; 3]);
        for z in 12..20 {
            for y in 12..20 {
                for x in 12..20 {
                    m.set(x, y, z, 1);
                }
            }
        }
        let mut rng = crate::rng::seed_rng(3);
        let mut hits = 0;
        for _ in 0..100 {
            let off = random_offset(m.dims, 16, &mut rng);
            let t = extract_patch_mask(&m, off, 16);
            if t.data.iter().any(|&v| v > 0.0) {
                hits += 1;
            }
        }
        assert!(hits > 0);
    }
}
