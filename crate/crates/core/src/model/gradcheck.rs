//! Finite-difference verification of backpropagation.

use super::net::{backward, forward, ModelParams};
use super::spec::ModelSpec;
use super::tensor::Tensor;
use crate::error::Result;

/// Compare analytic parameter gradients against central differences
/// (h = 1e-4) for a scalar loss, returning the maximum relative error with
/// denominator `max(|a|, |b|, 1e-8)`.
///
/// `loss` maps the network output to the loss value and its gradient with
/// respect to the output. Intended for small 64-bit models.
pub fn grad_check<F>(
    spec: &ModelSpec,
    params: &ModelParams<f64>,
    input: &Tensor<f64>,
    loss: F,
) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let h = 1e-4;
    let (out, cache) = forward(spec, params, input)?;
    let (_, grad_out) = loss(&out);
    let (analytic, _) = backward(spec, params, &cache, &grad_out)?;

    let mut max_rel = 0.0f64;
    let mut probe = params.clone();
    for pi in 0..params.params.len() {
        for field in 0..2 {
            let len = if field == 0 {
                params.params[pi].w.len()
            } else {
                params.params[pi].b.len()
            };
            for i in 0..len {
                let get = |p: &ModelParams<f64>| {
                    if field == 0 {
                        p.params[pi].w[i]
                    } else {
                        p.params[pi].b[i]
                    }
                };
                let set = |p: &mut ModelParams<f64>, v: f64| {
                    if field == 0 {
                        p.params[pi].w[i] = v;
                    } else {
                        p.params[pi].b[i] = v;
                    }
                };
                let orig = get(&probe);
                set(&mut probe, orig + h);
                let (out_p, _) = forward(spec, &probe, input)?;
                let (lp, _) = loss(&out_p);
                set(&mut probe, orig - h);
                let (out_m, _) = forward(spec, &probe, input)?;
                let (lm, _) = loss(&out_m);
                set(&mut probe, orig);
                let numeric = (lp - lm) / (2.0 * h);
                let ana = get(&analytic);
                let rel = (numeric - ana).abs() / numeric.abs().max(ana.abs()).max(1e-8);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::losses::{dice_loss, dice_loss_backward};
    use crate::model::net::init_params;
    use crate::model::spec::{discriminator_spec, unet_spec, LayerKind, LayerSpec, NormKind};

    fn rand_input(channels: usize, dims: [usize; 3], seed: u64) -> Tensor<f64> {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(seed);
        let n = channels * dims[0] * dims[1] * dims[2];
        Tensor { channels, dims, data: (0..n).map(|_| rng.random::<f64>() - 0.4).collect() }
    }

    /// Weighted-sum loss: L = sum(out * r) with fixed pseudo-random weights.
    fn weighted_loss(seed: u64) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
        move |out: &Tensor<f64>| {
            use rand::Rng as _;
            let mut rng = crate::rng::seed_rng(seed);
            let r: Vec<f64> = (0..out.data.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let loss = out.data.iter().zip(&r).map(|(&o, &w)| o * w).sum();
            let grad = Tensor { channels: out.channels, dims: out.dims, data: r };
            (loss, grad)
        }
    }

    fn check_spec(spec: ModelSpec, channels: usize, dims: [usize; 3], tol: f64) {
        let mut rng = crate::rng::seed_rng(21);
        let params = init_params(&spec, &mut rng).unwrap();
        let input = rand_input(channels, dims, 22);
        let err = grad_check(&spec, &params, &input, weighted_loss(23)).unwrap();
        assert!(err < tol, "max rel error {err} for {spec:?}");
    }

    fn conv_then(kind: LayerKind, in_ch: usize, mid_ch: usize) -> ModelSpec {
        ModelSpec {
            input_channels: in_ch,
            layers: vec![
                LayerSpec { kind: LayerKind::Conv3 { in_ch, out_ch: mid_ch }, input: 0 },
                LayerSpec { kind, input: 1 },
            ],
        }
    }

    #[test]
    fn conv3_alone() {
        let spec = ModelSpec {
            input_channels: 2,
            layers: vec![LayerSpec { kind: LayerKind::Conv3 { in_ch: 2, out_ch: 3 }, input: 0 }],
        };
        check_spec(spec, 2, [4, 4, 4], 1e-4);
    }

    #[test]
    fn conv1_alone() {
        let spec = ModelSpec {
            input_channels: 3,
            layers: vec![LayerSpec { kind: LayerKind::Conv1 { in_ch: 3, out_ch: 2 }, input: 0 }],
        };
        check_spec(spec, 3, [4, 4, 4], 1e-4);
    }

    #[test]
    fn through_leaky_relu() {
        check_spec(conv_then(LayerKind::LeakyRelu, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn through_sigmoid() {
        check_spec(conv_then(LayerKind::Sigmoid, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn through_maxpool() {
        check_spec(conv_then(LayerKind::MaxPool2, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn through_upsample() {
        check_spec(conv_then(LayerKind::Upsample2, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn through_global_avg_pool() {
        check_spec(conv_then(LayerKind::GlobalAvgPool, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn affine_layer() {
        check_spec(conv_then(LayerKind::Affine { ch: 2 }, 1, 2), 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn instance_norm_layer() {
        let spec = ModelSpec {
            input_channels: 2,
            layers: vec![LayerSpec { kind: LayerKind::InstanceNorm { ch: 2 }, input: 0 }],
        };
        check_spec(spec, 2, [4, 4, 4], 1e-4);
    }

    #[test]
    fn instance_norm_after_conv() {
        // the conv bias direction is invariant under the normalization, so
        // its finite-difference gradient is pure roundoff noise; allow the
        // composed tolerance here
        check_spec(conv_then(LayerKind::InstanceNorm { ch: 2 }, 1, 2), 1, [4, 4, 4], 1e-3);
    }

    #[test]
    fn concat_with_skip() {
        let spec = ModelSpec {
            input_channels: 1,
            layers: vec![
                LayerSpec { kind: LayerKind::Conv3 { in_ch: 1, out_ch: 2 }, input: 0 },
                LayerSpec { kind: LayerKind::Concat { skip: 0 }, input: 1 },
                LayerSpec { kind: LayerKind::Conv1 { in_ch: 3, out_ch: 1 }, input: 2 },
            ],
        };
        check_spec(spec, 1, [4, 4, 4], 1e-4);
    }

    #[test]
    fn linear_conv_with_dice_loss() {
        let spec = ModelSpec {
            input_channels: 1,
            layers: vec![
                LayerSpec { kind: LayerKind::Conv3 { in_ch: 1, out_ch: 1 }, input: 0 },
                LayerSpec { kind: LayerKind::Sigmoid, input: 1 },
            ],
        };
        let mut rng = crate::rng::seed_rng(31);
        let params = init_params(&spec, &mut rng).unwrap();
        let input = rand_input(1, [4, 4, 4], 32);
        let g = {
            use rand::Rng as _;
            let mut r = crate::rng::seed_rng(33);
            Tensor::<f64> {
                channels: 1,
                dims: [4, 4, 4],
                data: (0..64).map(|_| f64::from(r.random::<f32>() < 0.4)).collect(),
            }
        };
        let err = grad_check(&spec, &params, &input, |out| {
            let l = dice_loss(out, &g, None).unwrap();
            let grad = dice_loss_backward(out, &g, None).unwrap();
            (l, grad)
        })
        .unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn composed_two_level_unet() {
        check_spec(unet_spec(2, 2, 1, NormKind::Affine), 1, [4, 4, 4], 1e-3);
    }

    #[test]
    fn composed_two_level_unet_instance_norm() {
        check_spec(unet_spec(2, 2, 1, NormKind::Instance), 1, [4, 4, 4], 1e-3);
    }

    #[test]
    fn discriminator_gradients() {
        // encoder + global average + sigmoid, loss = -log d (fake side)
        let spec = discriminator_spec(2, 2, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(41);
        let params = init_params(&spec, &mut rng).unwrap();
        let input = rand_input(1, [4, 4, 4], 42);
        let err = grad_check(&spec, &params, &input, |out| {
            let d = out.data[0].clamp(1e-7, 1.0 - 1e-7);
            let loss = -d.ln();
            let mut grad = Tensor::zeros(out.channels, out.dims);
            grad.data[0] = -1.0 / d;
            (loss, grad)
        })
        .unwrap();
        assert!(err < 1e-3, "max rel error {err}");
    }
}
