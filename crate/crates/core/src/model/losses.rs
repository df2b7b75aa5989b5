//! Dice loss and the adversarial loss pair.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Discriminator outputs are clamped into [eps, 1-eps] before taking logs.
pub const D_CLAMP_EPS: f64 = 1e-7;

fn check_pair<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<()> {
    if y.dims != g.dims || y.channels != g.channels {
        return Err(Error::ShapeMismatch(format!(
            "dice operands: ({}, {:?}) vs ({}, {:?})",
            y.channels, y.dims, g.channels, g.dims
        )));
    }
    if let Some(m) = mask {
        if m.dims != y.dims || m.channels != 1 {
            return Err(Error::ShapeMismatch("dice mask shape".into()));
        }
    }
    Ok(())
}

fn dice_sums<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, mask: Option<&Tensor<T>>) -> (f64, f64, f64) {
    let n = y.data.len();
    let spatial = y.spatial_len();
    let chunks = n.div_ceil(par::SUM_CHUNK);
    let partials = par::map_collect(chunks, |ci| {
        let start = ci * par::SUM_CHUNK;
        let end = (start + par::SUM_CHUNK).min(n);
        let mut acc = (0.0f64, 0.0f64, 0.0f64);
        for i in start..end {
            if let Some(m) = mask {
                if m.data[i % spatial].to_f64() <= 0.5 {
                    continue;
                }
            }
            let yi = y.data[i].to_f64();
            let gi = g.data[i].to_f64();
            acc.0 += yi * gi;
            acc.1 += yi;
            acc.2 += gi;
        }
        acc
    });
    let mut total = (0.0, 0.0, 0.0);
    for p in partials {
        total.0 += p.0;
        total.1 += p.1;
        total.2 += p.2;
    }
    total
}

/// Soft Dice loss `-2*sum(y*g) / (sum(y) + sum(g))`, optionally restricted to
/// the voxels where `mask` is set. Empty `y` and `g` give 0.
pub fn dice_loss<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<f64> {
    check_pair(y, g, mask)?;
    let (inter, sum_y, sum_g) = dice_sums(y, g, mask);
    let denom = sum_y + sum_g;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(-2.0 * inter / denom)
}

/// Gradient of [`dice_loss`] w.r.t. `y`; masked-out voxels get zero gradient.
pub fn dice_loss_backward<T: Scalar>(
    y: &Tensor<T>,
    g: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_pair(y, g, mask)?;
    let (inter, sum_y, sum_g) = dice_sums(y, g, mask);
    let denom = sum_y + sum_g;
    if denom == 0.0 {
        return Err(Error::Data("degenerate Dice denominator: sum(y) + sum(g) = 0".into()));
    }
    let inv_d = 1.0 / denom;
    let inv_d2 = inv_d * inv_d;
    let mut grad = Tensor::zeros(y.channels, y.dims);
    par::fill_indexed(&mut grad.data, |i| {
        let keep = mask.map_or(true, |m| m.data[i].to_f64() > 0.5);
        if !keep {
            return T::zero();
        }
        let gi = g.data[i].to_f64();
        T::from_f64(-(2.0 * gi * inv_d - 2.0 * inter * inv_d2))
    });
    Ok(grad)
}

/// The pair of adversarial objectives for one batch of discriminator outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvLosses {
    /// `mean(log d_real) + mean(log(1 - d_fake))`; the discriminator ascends
    /// this.
    pub l_adv: f64,
    /// Discriminator descent objective, `-l_adv`.
    pub loss_d: f64,
    /// Non-saturating generator objective, `-mean(log d_fake)`.
    pub loss_g_nonsat: f64,
    /// Saturating generator objective, `mean(log(1 - d_fake))`.
    pub loss_g_sat: f64,
}

pub fn clamp_d(d: f64) -> f64 {
    d.clamp(D_CLAMP_EPS, 1.0 - D_CLAMP_EPS)
}

/// Adversarial losses from discriminator outputs on real and fake batches.
/// Values at exactly 0 or 1 are clamped by [`D_CLAMP_EPS`].
pub fn adversarial_losses(d_real: &[f64], d_fake: &[f64]) -> AdvLosses {
    assert!(!d_real.is_empty() && !d_fake.is_empty());
    let mean_log_real =
        d_real.iter().map(|&d| clamp_d(d).ln()).sum::<f64>() / d_real.len() as f64;
    let mean_log_one_minus_fake =
        d_fake.iter().map(|&d| (1.0 - clamp_d(d)).ln()).sum::<f64>() / d_fake.len() as f64;
    let mean_log_fake =
        d_fake.iter().map(|&d| clamp_d(d).ln()).sum::<f64>() / d_fake.len() as f64;
    let l_adv = mean_log_real + mean_log_one_minus_fake;
    AdvLosses {
        l_adv,
        loss_d: -l_adv,
        loss_g_nonsat: -mean_log_fake,
        loss_g_sat: mean_log_one_minus_fake,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_from(vals: &[f64], dims: [usize; 3]) -> Tensor<f64> {
        Tensor { channels: 1, dims, data: vals.to_vec() }
    }

    #[test]
    fn perfect_overlap_is_minus_one() {
        let g = tensor_from(&[1.0, 1.0, 0.0, 0.0], [4, 1, 1]);
        assert_eq!(dice_loss(&g, &g, None).unwrap(), -1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        let y = tensor_from(&[1.0, 0.0, 0.0, 0.0], [4, 1, 1]);
        let g = tensor_from(&[0.0, 0.0, 1.0, 0.0], [4, 1, 1]);
        assert_eq!(dice_loss(&y, &g, None).unwrap(), 0.0);
    }

    #[test]
    fn half_confidence_over_half_foreground() {
        // y = 0.5 everywhere, g has n foreground among 2n voxels:
        // -2*(0.5*n) / (0.5*2n + n) = -0.5
        let y = tensor_from(&[0.5; 8], [8, 1, 1]);
        let g = tensor_from(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], [8, 1, 1]);
        assert_eq!(dice_loss(&y, &g, None).unwrap(), -0.5);
    }

    #[test]
    fn empty_pair_is_zero_loss() {
        let z = tensor_from(&[0.0; 4], [4, 1, 1]);
        assert_eq!(dice_loss(&z, &z, None).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_symmetric_on_binary_inputs() {
        let y = tensor_from(&[1.0, 0.0, 1.0, 0.0, 1.0], [5, 1, 1]);
        let g = tensor_from(&[1.0, 1.0, 0.0, 0.0, 1.0], [5, 1, 1]);
        assert_eq!(dice_loss(&y, &g, None).unwrap(), dice_loss(&g, &y, None).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(5);
        let dims = [4, 4, 4];
        let n = 64;
        let y = Tensor::<f64> {
            channels: 1,
            dims,
            data: (0..n).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect(),
        };
        let g = Tensor::<f64> {
            channels: 1,
            dims,
            data: (0..n).map(|_| f64::from(rng.random::<f32>() < 0.4)).collect(),
        };
        let grad = dice_loss_backward(&y, &g, None).unwrap();
        let h = 1e-6;
        for i in (0..n).step_by(7) {
            let mut yp = y.clone();
            yp.data[i] += h;
            let mut ym = y.clone();
            ym.data[i] -= h;
            let num =
                (dice_loss(&yp, &g, None).unwrap() - dice_loss(&ym, &g, None).unwrap()) / (2.0 * h);
            let ana = grad.data[i];
            let denom = num.abs().max(ana.abs()).max(1e-8);
            assert!(((num - ana) / denom).abs() < 1e-4, "i={i} num={num} ana={ana}");
        }
    }

    #[test]
    fn zero_target_gives_zero_gradient_everywhere() {
        let y = tensor_from(&[0.5, 0.25, 0.75, 0.5], [4, 1, 1]);
        let g = tensor_from(&[0.0; 4], [4, 1, 1]);
        let grad = dice_loss_backward(&y, &g, None).unwrap();
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_voxels_get_zero_gradient() {
        let y = tensor_from(&[0.9, 0.8, 0.7, 0.6], [4, 1, 1]);
        let g = tensor_from(&[1.0, 0.0, 1.0, 0.0], [4, 1, 1]);
        let m = tensor_from(&[1.0, 1.0, 0.0, 0.0], [4, 1, 1]);
        let grad = dice_loss_backward(&y, &g, Some(&m)).unwrap();
        assert_eq!(grad.data[2], 0.0);
        assert_eq!(grad.data[3], 0.0);
        assert_ne!(grad.data[0], 0.0);
        // masked loss only sees the first two voxels
        let loss = dice_loss(&y, &g, Some(&m)).unwrap();
        let want = -2.0 * 0.9 / (0.9 + 0.8 + 1.0);
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn adversarial_reference_points() {
        let l = adversarial_losses(&[0.5], &[0.5]);
        assert!((l.l_adv - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((l.l_adv + 1.3862943611198906).abs() < 1e-12);
        // perfect discriminator: l_adv -> 0 from below
        let perfect = adversarial_losses(&[1.0], &[0.0]);
        assert!(perfect.l_adv > -1e-5);
        assert!(perfect.l_adv <= 0.0);
        // clamping keeps everything finite at the extremes
        let extreme = adversarial_losses(&[0.0], &[1.0]);
        assert!(extreme.l_adv.is_finite());
        assert!(extreme.loss_g_nonsat.is_finite());
    }
}
