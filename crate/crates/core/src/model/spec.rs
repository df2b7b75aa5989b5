//! Layer-list model specifications and the U-Net / discriminator builders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3x3 convolution with zero padding plus bias.
    Conv3 { in_ch: usize, out_ch: usize },
    /// 1x1x1 convolution plus bias.
    Conv1 { in_ch: usize, out_ch: usize },
    LeakyRelu,
    Sigmoid,
    /// 2x2x2 max pooling, stride 2; spatial dims must be even.
    MaxPool2,
    /// Nearest-neighbor upsampling by 2.
    Upsample2,
    /// Concatenate the value with index `skip` after the primary input
    /// along the channel axis.
    Concat { skip: usize },
    /// Per-channel scale and shift.
    Affine { ch: usize },
    /// Instance normalization (per channel over spatial) with scale/shift.
    InstanceNorm { ch: usize },
    /// Average over the spatial dims, output shape (C, 1, 1, 1).
    GlobalAvgPool,
}

impl LayerKind {
    /// Weight/bias lengths, or None for parameter-free layers.
    pub fn param_lens(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Conv3 { in_ch, out_ch } => Some((out_ch * in_ch * 27, out_ch)),
            LayerKind::Conv1 { in_ch, out_ch } => Some((out_ch * in_ch, out_ch)),
            LayerKind::Affine { ch } | LayerKind::InstanceNorm { ch } => Some((ch, ch)),
            _ => None,
        }
    }
}

/// One layer: consumes value `input` (value 0 is the network input; layer i
/// produces value i+1).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Channel count of every value (input plus each layer output), checking
    /// that the layer graph chains correctly.
    pub fn value_channels(&self) -> Result<Vec<usize>> {
        let mut ch = vec![self.input_channels];
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.input > i {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} reads value {} which does not exist yet",
                    layer.input
                )));
            }
            let cin = ch[layer.input];
            let cout = match layer.kind {
                LayerKind::Conv3 { in_ch, out_ch } | LayerKind::Conv1 { in_ch, out_ch } => {
                    if in_ch != cin {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i} expects {in_ch} input channels, value has {cin}"
                        )));
                    }
                    out_ch
                }
                LayerKind::Affine { ch: c } | LayerKind::InstanceNorm { ch: c } => {
                    if c != cin {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i} normalizes {c} channels, value has {cin}"
                        )));
                    }
                    cin
                }
                LayerKind::Concat { skip } => {
                    if skip > i {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i} concatenates value {skip} which does not exist yet"
                        )));
                    }
                    cin + ch[skip]
                }
                LayerKind::LeakyRelu
                | LayerKind::Sigmoid
                | LayerKind::MaxPool2
                | LayerKind::Upsample2
                | LayerKind::GlobalAvgPool => cin,
            };
            ch.push(cout);
        }
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        self.value_channels().map(|_| ())
    }

    /// Indices of layers that carry parameters, in layer order.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.param_lens().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of pooling layers (the input spatial dims must be divisible by
    /// 2^pools).
    pub fn pool_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool2)
            .count()
    }
}

/// Which normalization the conv blocks use.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per-channel scale and shift (normalization-free default).
    Affine,
    /// Instance normalization.
    Instance,
}

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    /// Value index produced by the most recent layer (0 = network input).
    fn last(&self) -> usize {
        self.layers.len()
    }

    fn push(&mut self, kind: LayerKind, input: usize) -> usize {
        self.layers.push(LayerSpec { kind, input });
        self.layers.len()
    }

    fn conv_block(&mut self, mut v: usize, in_ch: usize, out_ch: usize, norm: NormKind) -> usize {
        v = self.push(LayerKind::Conv3 { in_ch, out_ch }, v);
        v = match norm {
            NormKind::Affine => self.push(LayerKind::Affine { ch: out_ch }, v),
            NormKind::Instance => self.push(LayerKind::InstanceNorm { ch: out_ch }, v),
        };
        self.push(LayerKind::LeakyRelu, v)
    }
}

/// U-Net-style encoder/decoder with skip connections.
///
/// `levels` is the number of resolution scales (so `levels - 1` poolings);
/// channels double per level from `base_channels`. The final layers are a
/// 1x1x1 convolution to one channel and a sigmoid.
pub fn unet_spec(levels: usize, base_channels: usize, input_channels: usize, norm: NormKind) -> ModelSpec {
    assert!(levels >= 1 && base_channels >= 1);
    let mut b = Builder::new();
    let mut v = 0;
    let mut ch = input_channels;
    let mut skips: Vec<(usize, usize)> = Vec::new(); // (value, channels)

    for level in 0..levels {
        let out_ch = base_channels << level;
        v = b.conv_block(v, ch, out_ch, norm);
        v = b.conv_block(v, out_ch, out_ch, norm);
        ch = out_ch;
        if level + 1 < levels {
            skips.push((v, ch));
            v = b.push(LayerKind::MaxPool2, v);
        }
    }

    for (skip_v, skip_ch) in skips.into_iter().rev() {
        v = b.push(LayerKind::Upsample2, v);
        v = b.push(LayerKind::Concat { skip: skip_v }, v);
        let merged = ch + skip_ch;
        v = b.conv_block(v, merged, skip_ch, norm);
        v = b.conv_block(v, skip_ch, skip_ch, norm);
        ch = skip_ch;
    }

    v = b.push(LayerKind::Conv1 { in_ch: ch, out_ch: 1 }, v);
    b.push(LayerKind::Sigmoid, v);
    ModelSpec { input_channels, layers: b.layers }
}

/// Encoder-only classifier: conv blocks with pooling, then a 1x1x1
/// convolution to one channel, global average pooling, and a sigmoid. The
/// output is a single scalar probability as a (1, 1, 1, 1) tensor.
pub fn discriminator_spec(levels: usize, base_channels: usize, input_channels: usize, norm: NormKind) -> ModelSpec {
    assert!(levels >= 1 && base_channels >= 1);
    let mut b = Builder::new();
    let mut v = 0;
    let mut ch = input_channels;
    for level in 0..levels {
        let out_ch = base_channels << level;
        v = b.conv_block(v, ch, out_ch, norm);
        v = b.conv_block(v, out_ch, out_ch, norm);
        ch = out_ch;
        if level + 1 < levels {
            v = b.push(LayerKind::MaxPool2, v);
        }
    }
    v = b.push(LayerKind::Conv1 { in_ch: ch, out_ch: 1 }, v);
    v = b.push(LayerKind::GlobalAvgPool, v);
    b.push(LayerKind::Sigmoid, v);
    let _ = b.last();
    ModelSpec { input_channels, layers: b.layers }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unet_chains_and_counts_pools() {
        for levels in 1..=4 {
            let spec = unet_spec(levels, 8, 1, NormKind::Affine);
            spec.validate().unwrap();
            assert_eq!(spec.pool_count(), levels - 1);
            // ends with conv1 -> sigmoid producing one channel
            let ch = spec.value_channels().unwrap();
            assert_eq!(*ch.last().unwrap(), 1);
        }
    }

    #[test]
    fn two_channel_input_for_refiner() {
        let spec = unet_spec(3, 8, 2, NormKind::Affine);
        spec.validate().unwrap();
    }

    #[test]
    fn discriminator_ends_with_scalar_head() {
        let spec = discriminator_spec(3, 8, 1, NormKind::Affine);
        spec.validate().unwrap();
        let ch = spec.value_channels().unwrap();
        assert_eq!(*ch.last().unwrap(), 1);
        assert!(matches!(
            spec.layers[spec.layers.len() - 2].kind,
            LayerKind::GlobalAvgPool
        ));
    }

    #[test]
    fn bad_wiring_is_rejected() {
        let spec = ModelSpec {
            input_channels: 1,
            layers: vec![LayerSpec { kind: LayerKind::Conv3 { in_ch: 2, out_ch: 4 }, input: 0 }],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = unet_spec(2, 4, 1, NormKind::Instance);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
