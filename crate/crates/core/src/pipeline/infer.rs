//! Sliding-window inference and thresholded prediction.

use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, ModelSpec, Tensor};
use crate::volume::{threshold, BinaryMask, Volume};

/// Window start positions along one axis: stride-spaced, with the last
/// window clamped flush to the border.
pub fn window_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(patch <= dim && stride >= 1);
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + patch >= dim {
            origins.push(dim - patch);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins.dedup();
    origins
}

/// Patch-wise inference over the whole volume with overlapping windows;
/// per-voxel output is the arithmetic mean of every window prediction
/// covering it.
///
/// `inputs` are the model's input channels (e.g. image, or image plus label
/// map), all with identical dims; `pads` gives the padding value per channel
/// for volumes smaller than the patch.
pub fn sliding_window_infer(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    inputs: &[&Volume],
    pads: &[f32],
    patch: usize,
    overlap: f64,
) -> Result<Volume> {
    if inputs.is_empty() || inputs.len() != pads.len() {
        return Err(Error::Config("inputs and pads must be non-empty and equal length".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap {overlap} must be in [0, 1)")));
    }
    let dims = inputs[0].dims;
    for v in inputs {
        if v.dims != dims {
            return Err(Error::DimMismatch(dims, v.dims));
        }
    }

    // volumes smaller than the patch are padded up and cropped afterwards
    let padded_dims = [dims[0].max(patch), dims[1].max(patch), dims[2].max(patch)];
    let padded: Vec<Volume> = inputs
        .iter()
        .zip(pads)
        .map(|(v, &pad)| {
            if padded_dims == dims {
                (*v).clone()
            } else {
                let mut out = Volume::zeros(padded_dims, v.spacing);
                out.data.fill(pad);
                for z in 0..dims[2] {
                    for y in 0..dims[1] {
                        for x in 0..dims[0] {
                            out.set(x, y, z, v.get(x, y, z));
                        }
                    }
                }
                out
            }
        })
        .collect();

    let stride = (((patch as f64) * (1.0 - overlap)).round() as usize).max(1);
    let xs = window_origins(padded_dims[0], patch, stride);
    let ys = window_origins(padded_dims[1], patch, stride);
    let zs = window_origins(padded_dims[2], patch, stride);

    let mut sum = vec![0.0f64; padded_dims[0] * padded_dims[1] * padded_dims[2]];
    let mut count = vec![0u32; sum.len()];

    for &oz in &zs {
        for &oy in &ys {
            for &ox in &xs {
                let channels: Vec<Tensor<f32>> = padded
                    .iter()
                    .map(|v| super::sampling::extract_patch_volume(v, [ox, oy, oz], patch, 0.0))
                    .collect();
                let refs: Vec<&Tensor<f32>> = channels.iter().collect();
                let input = Tensor::stack(&refs);
                let (out, _) = forward(spec, params, &input)?;
                for z in 0..patch {
                    for y in 0..patch {
                        let src = &out.data[patch * (y + patch * z)..][..patch];
                        let base = ox + padded_dims[0] * ((oy + y) + padded_dims[1] * (oz + z));
                        for (x, &v) in src.iter().enumerate() {
                            sum[base + x] += v as f64;
                            count[base + x] += 1;
                        }
                    }
                }
            }
        }
    }

    let mut result = Volume::zeros(dims, inputs[0].spacing);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + padded_dims[0] * (y + padded_dims[1] * z);
                result.set(x, y, z, (sum[i] / count[i] as f64) as f32);
            }
        }
    }
    Ok(result)
}

/// Base-network prediction: probability map plus the thresholded mask
/// cleaned up by the bounding mask.
pub fn predict_initial(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    image: &Volume,
    bounding_mask: &BinaryMask,
    patch: usize,
    thresh: f32,
    pad_intensity: f32,
) -> Result<(Volume, BinaryMask)> {
    let y = sliding_window_infer(spec, params, &[image], &[pad_intensity], patch, 0.5)?;
    let x = threshold(&y, thresh).and(bounding_mask);
    Ok((y, x))
}

/// Refinement prediction from a 2-channel (image, label) input.
pub fn refine(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    image: &Volume,
    label: &Volume,
    bounding_mask: &BinaryMask,
    patch: usize,
    thresh: f32,
    pad_intensity: f32,
) -> Result<(Volume, BinaryMask)> {
    let y = sliding_window_infer(spec, params, &[image, label], &[pad_intensity, 0.0], patch, 0.5)?;
    let x = threshold(&y, thresh).and(bounding_mask);
    Ok((y, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, unet_spec, NormKind};
    use crate::volume::Grid;

    #[test]
    fn origins_cover_and_clamp() {
        assert_eq!(window_origins(64, 32, 16), vec![0, 16, 32]);
        assert_eq!(window_origins(32, 32, 16), vec![0]);
        assert_eq!(window_origins(48, 32, 16), vec![0, 16]);
        // uneven tail clamps flush to the border
        assert_eq!(window_origins(50, 32, 16), vec![0, 16, 18]);
    }

    #[test]
    fn interior_voxels_see_eight_windows_at_half_overlap() {
        let dims = [64usize, 64, 64];
        let patch = 32;
        let stride = 16;
        let per_axis = window_origins(64, patch, stride);
        let covering = |v: usize| per_axis.iter().filter(|&&o| o <= v && v < o + patch).count();
        // an interior voxel away from the borders
        for &v in &[20usize, 30, 40] {
            assert_eq!(covering(v), 2);
        }
        let total = covering(30) * covering(30) * covering(30);
        assert_eq!(total, 8);
        let _ = dims;
    }

    #[test]
    fn single_patch_volume_equals_direct_forward() {
        let spec = unet_spec(2, 4, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(3);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        use rand::Rng as _;
        let img = Grid::from_fn([16, 16, 16], [1.0; 3], |_, _, _| rng.random::<f32>());
        let stitched = sliding_window_infer(&spec, &params, &[&img], &[0.0], 16, 0.5).unwrap();
        let input = crate::model::Tensor::from_volume(&img);
        let (direct, _) = crate::model::forward(&spec, &params, &input).unwrap();
        for (a, b) in stitched.data.iter().zip(&direct.data) {
            assert_eq!(*a, *b);
        }
    }

    #[test]
    fn stitched_mean_matches_brute_force_oracle() {
        let spec = unet_spec(2, 4, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(5);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        use rand::Rng as _;
        let img = Grid::from_fn([24, 16, 16], [1.0; 3], |_, _, _| rng.random::<f32>());
        let patch = 8;
        let stitched = sliding_window_infer(&spec, &params, &[&img], &[0.0], patch, 0.5).unwrap();

        // oracle: rerun every window forward independently and average
        let stride = 4;
        let xs = window_origins(24, patch, stride);
        let ys = window_origins(16, patch, stride);
        let zs = window_origins(16, patch, stride);
        let mut sum = vec![0.0f64; img.len()];
        let mut cnt = vec![0u32; img.len()];
        for &oz in &zs {
            for &oy in &ys {
                for &ox in &xs {
                    let p = crate::pipeline::extract_patch_volume(&img, [ox, oy, oz], patch, 0.0);
                    let (out, _) = crate::model::forward(&spec, &params, &p).unwrap();
                    for z in 0..patch {
                        for y in 0..patch {
                            for x in 0..patch {
                                let i = (ox + x) + 24 * ((oy + y) + 16 * (oz + z));
                                sum[i] += out.data[x + patch * (y + patch * z)] as f64;
                                cnt[i] += 1;
                            }
                        }
                    }
                }
            }
        }
        for i in 0..img.len() {
            let want = (sum[i] / cnt[i] as f64) as f32;
            assert!((stitched.data[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_model_stitches_to_constant() {
        let spec = unet_spec(1, 2, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(7);
        let params = init_params::<f32>(&spec, &mut rng).unwrap().zeros_like();
        use rand::Rng as _;
        let img = Grid::from_fn([20, 20, 20], [1.0; 3], |_, _, _| rng.random::<f32>());
        let out = sliding_window_infer(&spec, &params, &[&img], &[0.0], 8, 0.5).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn thresholded_prediction_respects_bounds() {
        let spec = unet_spec(1, 2, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(9);
        // zero params -> y = 0.5 everywhere -> x = bounding mask at t = 0.5
        let params = init_params::<f32>(&spec, &mut rng).unwrap().zeros_like();
        let img = Volume::zeros([12, 12, 12], [1.0; 3]);
        let mut bounds = crate::volume::BinaryMask::zeros([12, 12, 12], [1.0; 3]);
        for z in 3..9 {
            for y in 3..9 {
                for x in 3..9 {
                    bounds.set(x, y, z, 1);
                }
            }
        }
        let (y, x) = predict_initial(&spec, &params, &img, &bounds, 8, 0.5, 0.0).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.5));
        assert_eq!(x.data, bounds.data);
        // threshold above 0.5 empties the prediction
        let (_, x_hi) = predict_initial(&spec, &params, &img, &bounds, 8, 0.6, 0.0).unwrap();
        assert_eq!(x_hi.count_ones(), 0);
    }
}
