//! Channel-major dense tensors for the model.

use num_traits::Float;

use crate::volume::{BinaryMask, Volume};

/// Element type for model math: f32 for training, f64 for gradient checks.
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense (channels, nx, ny, nz) tensor, x fastest, channels slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor {
            channels,
            dims,
            data: vec![T::zero(); channels * dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn spatial_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single-channel tensor from a scalar volume.
    pub fn from_volume(v: &Volume) -> Self {
        Tensor {
            channels: 1,
            dims: v.dims,
            data: v.data.iter().map(|&x| T::from_f64(x as f64)).collect(),
        }
    }

    /// Single-channel tensor from a binary mask.
    pub fn from_mask(m: &BinaryMask) -> Self {
        Tensor {
            channels: 1,
            dims: m.dims,
            data: m.data.iter().map(|&x| T::from_f64(x as f64)).collect(),
        }
    }

    /// Copy one channel out as a volume with the given spacing.
    pub fn to_volume(&self, c: usize, spacing: [f64; 3]) -> Volume {
        Volume {
            dims: self.dims,
            spacing,
            data: self.channel(c).iter().map(|&x| x.to_f64() as f32).collect(),
        }
    }

    /// Stack single-channel tensors into one multi-channel tensor.
    pub fn stack(parts: &[&Tensor<T>]) -> Self {
        let dims = parts[0].dims;
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * parts[0].spatial_len());
        for p in parts {
            assert_eq!(p.dims, dims);
            data.extend_from_slice(&p.data);
        }
        Tensor { channels, dims, data }
    }
}
