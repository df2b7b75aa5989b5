//! Forward/backward execution of a layer list, parameter containers, and
//! He-style initialization.

use rand_distr::{Distribution, StandardNormal};

use super::layers::{self, Aux};
use super::spec::{LayerKind, ModelSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Weights and bias of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// All parameters of a model, aligned with `spec.param_layers()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param { w: vec![T::zero(); p.w.len()], b: vec![T::zero(); p.b.len()] })
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.w.len() + p.b.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    w: p.w.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    b: p.b.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.w.iter().all(|v| v.is_finite()) && p.b.iter().all(|v| v.is_finite()))
    }
}

/// Every intermediate value of a forward pass plus per-layer aux data.
pub struct ForwardCache<T> {
    /// values[0] is the input; values[i + 1] is layer i's output.
    pub values: Vec<Tensor<T>>,
    pub aux: Vec<Aux<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values.last().unwrap()
    }
}

/// He fan-in initialization: kernel entries ~ N(0, sqrt(2 / fan_in)), biases
/// zero; affine and instance-norm scales start at one.
pub fn init_params<T: Scalar>(spec: &ModelSpec, rng: &mut Rng) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut params = Vec::new();
    for &li in &spec.param_layers() {
        let kind = &spec.layers[li].kind;
        let (w_len, b_len) = kind.param_lens().unwrap();
        let param = match kind {
            LayerKind::Conv3 { in_ch, .. } | LayerKind::Conv1 { in_ch, .. } => {
                let fan_in = match kind {
                    LayerKind::Conv3 { .. } => in_ch * 27,
                    _ => *in_ch,
                };
                let std = (2.0 / fan_in as f64).sqrt();
                let w = (0..w_len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        T::from_f64(z * std)
                    })
                    .collect();
                Param { w, b: vec![T::zero(); b_len] }
            }
            LayerKind::Affine { .. } | LayerKind::InstanceNorm { .. } => Param {
                w: vec![T::one(); w_len],
                b: vec![T::zero(); b_len],
            },
            _ => unreachable!(),
        };
        params.push(param);
    }
    Ok(ModelParams { params })
}

fn check_param_shapes<T: Scalar>(spec: &ModelSpec, params: &ModelParams<T>) -> Result<()> {
    let layers = spec.param_layers();
    if layers.len() != params.params.len() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} parameterized layers, params has {}",
            layers.len(),
            params.params.len()
        )));
    }
    for (&li, p) in layers.iter().zip(&params.params) {
        let (w_len, b_len) = spec.layers[li].kind.param_lens().unwrap();
        if p.w.len() != w_len || p.b.len() != b_len {
            return Err(Error::ShapeMismatch(format!("parameter shape mismatch at layer {li}")));
        }
    }
    Ok(())
}

/// Run the model, returning the output and the cache needed for backward.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    spec.validate()?;
    check_param_shapes(spec, params)?;
    if input.channels != spec.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, model expects {}",
            input.channels, spec.input_channels
        )));
    }

    let mut values: Vec<Tensor<T>> = Vec::with_capacity(spec.layers.len() + 1);
    let mut aux: Vec<Aux<T>> = Vec::with_capacity(spec.layers.len());
    values.push(input.clone());

    let param_layers = spec.param_layers();
    let mut param_iter = param_layers.iter().zip(&params.params);
    let mut next_param = param_iter.next();

    for (i, layer) in spec.layers.iter().enumerate() {
        let x = &values[layer.input];
        let param = match next_param {
            Some((&li, p)) if li == i => {
                next_param = param_iter.next();
                Some(p)
            }
            _ => None,
        };
        let (out, a) = match &layer.kind {
            LayerKind::Conv3 { out_ch, .. } => {
                let p = param.unwrap();
                (layers::conv3_forward(x, &p.w, &p.b, *out_ch), Aux::None)
            }
            LayerKind::Conv1 { out_ch, .. } => {
                let p = param.unwrap();
                (layers::conv1_forward(x, &p.w, &p.b, *out_ch), Aux::None)
            }
            LayerKind::LeakyRelu => (layers::leaky_relu_forward(x), Aux::None),
            LayerKind::Sigmoid => (layers::sigmoid_forward(x), Aux::None),
            LayerKind::MaxPool2 => {
                if x.dims.iter().any(|&d| d % 2 != 0) {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: spatial dims {:?} not divisible by 2 for pooling",
                        x.dims
                    )));
                }
                let (out, argmax) = layers::maxpool2_forward(x);
                (out, Aux::Pool(argmax))
            }
            LayerKind::Upsample2 => (layers::upsample2_forward(x), Aux::None),
            LayerKind::Concat { skip } => {
                let s = &values[*skip];
                if s.dims != x.dims {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: concat dims {:?} vs {:?}",
                        x.dims, s.dims
                    )));
                }
                (layers::concat_forward(x, s), Aux::None)
            }
            LayerKind::Affine { .. } => {
                let p = param.unwrap();
                (layers::affine_forward(x, &p.w, &p.b), Aux::None)
            }
            LayerKind::InstanceNorm { .. } => {
                let p = param.unwrap();
                let (out, mean, inv_std) = layers::instance_norm_forward(x, &p.w, &p.b);
                (out, Aux::InstNorm { mean, inv_std })
            }
            LayerKind::GlobalAvgPool => (layers::global_avg_pool_forward(x), Aux::None),
        };
        values.push(out);
        aux.push(a);
    }

    let output = values.last().unwrap().clone();
    Ok((output, ForwardCache { values, aux }))
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        None => *slot = Some(grad),
        Some(acc) => {
            debug_assert_eq!(acc.data.len(), grad.data.len());
            for (a, g) in acc.data.iter_mut().zip(grad.data) {
                *a = *a + g;
            }
        }
    }
}

/// Gradients of a scalar loss w.r.t. parameters and the network input, given
/// the loss gradient w.r.t. the output.
pub fn backward<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_output: &Tensor<T>,
) -> Result<(ModelParams<T>, Tensor<T>)> {
    check_param_shapes(spec, params)?;
    let n_layers = spec.layers.len();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; n_layers + 1];
    grads[n_layers] = Some(grad_output.clone());

    let mut pgrads = params.zeros_like();
    let param_layers = spec.param_layers();
    let param_index: std::collections::BTreeMap<usize, usize> =
        param_layers.iter().enumerate().map(|(pi, &li)| (li, pi)).collect();

    for i in (0..n_layers).rev() {
        let Some(dout) = grads[i + 1].take() else {
            continue;
        };
        let layer = &spec.layers[i];
        let x = &cache.values[layer.input];
        match &layer.kind {
            LayerKind::Conv3 { out_ch, .. } => {
                let pi = param_index[&i];
                let (din, dw, db) = layers::conv3_backward(x, &params.params[pi].w, *out_ch, &dout);
                pgrads.params[pi] = Param { w: dw, b: db };
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::Conv1 { out_ch, .. } => {
                let pi = param_index[&i];
                let (din, dw, db) = layers::conv1_backward(x, &params.params[pi].w, *out_ch, &dout);
                pgrads.params[pi] = Param { w: dw, b: db };
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::LeakyRelu => {
                accumulate(&mut grads[layer.input], layers::leaky_relu_backward(x, &dout));
            }
            LayerKind::Sigmoid => {
                let y = &cache.values[i + 1];
                accumulate(&mut grads[layer.input], layers::sigmoid_backward(y, &dout));
            }
            LayerKind::MaxPool2 => {
                let Aux::Pool(argmax) = &cache.aux[i] else {
                    unreachable!()
                };
                let din = layers::maxpool2_backward(x.dims, x.channels, argmax, &dout);
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::Upsample2 => {
                let din = layers::upsample2_backward(x.dims, x.channels, &dout);
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::Concat { skip } => {
                let (da, db) = layers::concat_backward(x.channels, &dout);
                accumulate(&mut grads[layer.input], da);
                accumulate(&mut grads[*skip], db);
            }
            LayerKind::Affine { .. } => {
                let pi = param_index[&i];
                let (din, dw, db) = layers::affine_backward(x, &params.params[pi].w, &dout);
                pgrads.params[pi] = Param { w: dw, b: db };
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::InstanceNorm { .. } => {
                let pi = param_index[&i];
                let Aux::InstNorm { mean, inv_std } = &cache.aux[i] else {
                    unreachable!()
                };
                let (din, dw, db) =
                    layers::instance_norm_backward(x, &params.params[pi].w, mean, inv_std, &dout);
                pgrads.params[pi] = Param { w: dw, b: db };
                accumulate(&mut grads[layer.input], din);
            }
            LayerKind::GlobalAvgPool => {
                let din = layers::global_avg_pool_backward(x.dims, x.channels, &dout);
                accumulate(&mut grads[layer.input], din);
            }
        }
    }

    let grad_input = grads[0]
        .take()
        .unwrap_or_else(|| Tensor::zeros(cache.values[0].channels, cache.values[0].dims));
    Ok((pgrads, grad_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{unet_spec, NormKind};

    fn rand_tensor(channels: usize, dims: [usize; 3], seed: u64) -> Tensor<f64> {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(seed);
        let n = channels * dims[0] * dims[1] * dims[2];
        Tensor { channels, dims, data: (0..n).map(|_| rng.random::<f64>() - 0.3).collect() }
    }

    #[test]
    fn zero_params_give_half_everywhere() {
        let spec = unet_spec(2, 4, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(0);
        let params: ModelParams<f64> = init_params(&spec, &mut rng).unwrap().zeros_like();
        let input = rand_tensor(1, [8, 8, 8], 1);
        let (out, _) = forward(&spec, &params, &input).unwrap();
        assert_eq!(out.channels, 1);
        assert_eq!(out.dims, [8, 8, 8]);
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape_matches_input_for_segmentation_specs() {
        for levels in 1..=3 {
            let spec = unet_spec(levels, 2, 2, NormKind::Affine);
            let mut rng = crate::rng::seed_rng(7);
            let params: ModelParams<f64> = init_params(&spec, &mut rng).unwrap();
            let input = rand_tensor(2, [8, 8, 8], 3);
            let (out, _) = forward(&spec, &params, &input).unwrap();
            assert_eq!(out.dims, [8, 8, 8]);
            assert_eq!(out.channels, 1);
            assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn single_conv_is_linear_in_input() {
        use crate::model::spec::{LayerKind, LayerSpec};
        let spec = ModelSpec {
            input_channels: 1,
            layers: vec![LayerSpec { kind: LayerKind::Conv3 { in_ch: 1, out_ch: 1 }, input: 0 }],
        };
        let mut rng = crate::rng::seed_rng(9);
        let params: ModelParams<f64> = init_params(&spec, &mut rng).unwrap();
        let input = rand_tensor(1, [5, 5, 5], 4);
        let doubled = Tensor {
            channels: 1,
            dims: input.dims,
            data: input.data.iter().map(|&v| 2.0 * v).collect(),
        };
        let (a, _) = forward(&spec, &params, &input).unwrap();
        let (b, _) = forward(&spec, &params, &doubled).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let spec = unet_spec(3, 4, 1, NormKind::Instance);
        let mut rng = crate::rng::seed_rng(11);
        let params: ModelParams<f32> = init_params(&spec, &mut rng).unwrap();
        let input64 = rand_tensor(1, [8, 8, 8], 5);
        let input = Tensor::<f32> {
            channels: 1,
            dims: input64.dims,
            data: input64.data.iter().map(|&v| v as f32).collect(),
        };
        let (a, _) = forward(&spec, &params, &input).unwrap();
        let (b, _) = forward(&spec, &params, &input).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn odd_dims_fail_pooling() {
        let spec = unet_spec(2, 2, 1, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(13);
        let params: ModelParams<f64> = init_params(&spec, &mut rng).unwrap();
        let input = rand_tensor(1, [7, 8, 8], 6);
        assert!(forward(&spec, &params, &input).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let spec = unet_spec(1, 2, 2, NormKind::Affine);
        let mut rng = crate::rng::seed_rng(17);
        let params: ModelParams<f64> = init_params(&spec, &mut rng).unwrap();
        let input = rand_tensor(1, [4, 4, 4], 8);
        assert!(matches!(forward(&spec, &params, &input), Err(Error::ShapeMismatch(_))));
    }
}
