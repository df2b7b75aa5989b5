//! 3D scalar and binary volumes plus the voxel morphology used everywhere else.
//!
//! Data is stored in x-fastest linear order (`idx = x + nx*(y + ny*z)`).
//! Spacing is carried as metadata; morphology and distances operate in voxel
//! units.

mod distance;
mod mhd;
mod morphology;

pub use distance::distance_transform;
pub use mhd::{read_mhd, write_mhd, ElementType};
pub use morphology::{connected_components, dilate_cube3, Connectivity};

use crate::error::{Error, Result};

/// Dense 3D grid with voxel spacing metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<T>,
}

/// Scalar volume (images, probability maps, distance maps).
pub type Volume = Grid<f32>;

/// Binary volume with values restricted to {0, 1}.
pub type BinaryMask = Grid<u8>;

/// Connected-component label volume (0 = background).
pub type LabelVolume = Grid<u32>;

impl<T: Copy + Default> Grid<T> {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        assert!(spacing.iter().all(|&s| s > 0.0), "spacing must be positive");
        Grid {
            dims,
            spacing,
            data: vec![T::default(); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut g = Self::zeros(dims, spacing);
        let [nx, ny, nz] = dims;
        let mut idx = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    g.data[idx] = f(x, y, z);
                    idx += 1;
                }
            }
        }
        g
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    #[inline]
    pub fn in_bounds(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    /// Value at a signed coordinate, or `fallback` outside the volume.
    #[inline]
    pub fn get_or(&self, p: [i64; 3], fallback: T) -> T {
        if self.in_bounds(p) {
            self.get(p[0] as usize, p[1] as usize, p[2] as usize)
        } else {
            fallback
        }
    }

    pub fn same_shape(&self, other: &Grid<impl Copy>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

impl BinaryMask {
    /// Number of foreground voxels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// True if every value is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Voxelwise AND.
    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims, other.dims);
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o &= b;
        }
        out
    }

    /// Voxels set in `self` but not in `other`.
    pub fn minus(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims, other.dims);
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            if b != 0 {
                *o = 0;
            }
        }
        out
    }

    /// True if every voxel of `self` is also set in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }
}

impl Volume {
    /// Check that every value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binarize a probability map: voxel is foreground iff `y >= t`.
///
/// The boundary value maps to foreground, so thresholding at 0.5 keeps
/// voxels that are exactly 0.5.
pub fn threshold(y: &Volume, t: f32) -> BinaryMask {
    let mut out = BinaryMask::zeros(y.dims, y.spacing);
    crate::par::fill_indexed(&mut out.data, |i| u8::from(y.data[i] >= t));
    out
}

/// 26-neighborhood offsets (all nonzero offsets in the 3x3x3 cube).
pub const NEIGHBORS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1i64;
    while dz <= 1 {
        let mut dy = -1i64;
        while dy <= 1 {
            let mut dx = -1i64;
            while dx <= 1 {
                if dx != 0 || dy != 0 || dz != 0 {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// 6-neighborhood offsets (face neighbors).
pub const NEIGHBORS_6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_order_is_x_fastest() {
        let g = Grid::<u8>::from_fn([3, 2, 2], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as u8);
        assert_eq!(g.data[0], 0);
        assert_eq!(g.data[1], 1); // x moves first
        assert_eq!(g.data[3], 10); // then y
        assert_eq!(g.data[6], 100); // then z
        assert_eq!(g.coord(7), [1, 0, 1]);
    }

    #[test]
    fn threshold_boundary_goes_to_foreground() {
        let y = Volume {
            dims: [3, 1, 1],
            spacing: [1.0; 3],
            data: vec![0.49, 0.50, 0.51],
        };
        let m = threshold(&y, 0.5);
        assert_eq!(m.data, vec![0, 1, 1]);
    }

    #[test]
    fn threshold_is_monotone_in_t() {
        let mut rng = crate::rng::seed_rng(11);
        use rand::Rng as _;
        let y = Volume {
            dims: [8, 8, 8],
            spacing: [1.0; 3],
            data: (0..512).map(|_| rng.random::<f32>()).collect(),
        };
        let lo = threshold(&y, 0.3);
        let hi = threshold(&y, 0.7);
        assert!(hi.subset_of(&lo));
    }
}
