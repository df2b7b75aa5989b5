//! Forward and backward kernels for the layer vocabulary.
//!
//! Convolutions iterate rows along x so the hot loops vectorize; parallel
//! work is split per (channel, z-plane) chunk with each chunk written by
//! exactly one task, keeping results independent of the thread count.

use super::spec::{INSTANCE_NORM_EPS, LEAKY_RELU_SLOPE};
use super::tensor::{Scalar, Tensor};
use crate::par;

/// Per-layer data stashed by forward for the backward pass.
#[derive(Clone, Debug)]
pub enum Aux<T> {
    None,
    /// Argmax input spatial index per (channel, output voxel).
    Pool(Vec<u32>),
    /// Per-channel statistics.
    InstNorm { mean: Vec<T>, inv_std: Vec<T> },
}

#[inline]
fn kernel_index(oc: usize, ic: usize, in_ch: usize, dz: i64, dy: i64, dx: i64) -> usize {
    (oc * in_ch + ic) * 27 + ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize
}

/// out[p] = b[oc] + sum_k w[k] * in[p + off_k], zero padded.
pub fn conv3_forward<T: Scalar>(input: &Tensor<T>, w: &[T], b: &[T], out_ch: usize) -> Tensor<T> {
    let [nx, ny, nz] = input.dims;
    let plane = nx * ny;
    let in_ch = input.channels;
    let mut out = Tensor::zeros(out_ch, input.dims);
    par::for_each_chunk_mut(&mut out.data, plane, |chunk, out_plane| {
        let oc = chunk / nz;
        let z = (chunk % nz) as i64;
        for v in out_plane.iter_mut() {
            *v = b[oc];
        }
        for ic in 0..in_ch {
            let in_chan = input.channel(ic);
            for dz in -1i64..=1 {
                let zz = z + dz;
                if zz < 0 || zz >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let y_lo = (-dy).max(0) as usize;
                    let y_hi = (ny as i64 - dy.max(0)) as usize;
                    for dx in -1i64..=1 {
                        let wv = w[kernel_index(oc, ic, in_ch, dz, dy, dx)];
                        for y in y_lo..y_hi {
                            let yy = (y as i64 + dy) as usize;
                            let in_row = &in_chan[(zz as usize * ny + yy) * nx..][..nx];
                            let out_row = &mut out_plane[y * nx..][..nx];
                            axpy_shift(out_row, in_row, wv, dx);
                        }
                    }
                }
            }
        }
    });
    out
}

/// out_row[x] += wv * in_row[x + dx] over the valid range.
#[inline]
fn axpy_shift<T: Scalar>(out_row: &mut [T], in_row: &[T], wv: T, dx: i64) {
    let nx = out_row.len();
    let (o, i) = match dx {
        -1 => (&mut out_row[1..], &in_row[..nx - 1]),
        0 => (&mut out_row[..], &in_row[..]),
        1 => (&mut out_row[..nx - 1], &in_row[1..]),
        _ => unreachable!(),
    };
    for (ov, &iv) in o.iter_mut().zip(i) {
        *ov = *ov + wv * iv;
    }
}

/// Gradients of conv3 w.r.t. input, weights, and bias.
pub fn conv3_backward<T: Scalar>(
    input: &Tensor<T>,
    w: &[T],
    out_ch: usize,
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [nx, ny, nz] = input.dims;
    let plane = nx * ny;
    let in_ch = input.channels;

    // d input: din[q] = sum_k w[k] * dout[q - off_k]
    let mut din = Tensor::zeros(in_ch, input.dims);
    par::for_each_chunk_mut(&mut din.data, plane, |chunk, din_plane| {
        let ic = chunk / nz;
        let zz = (chunk % nz) as i64;
        for oc in 0..out_ch {
            let dout_chan = dout.channel(oc);
            for dz in -1i64..=1 {
                let z = zz - dz;
                if z < 0 || z >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let yy_lo = dy.max(0) as usize;
                    let yy_hi = (ny as i64 + dy.min(0)) as usize;
                    for dx in -1i64..=1 {
                        let wv = w[kernel_index(oc, ic, in_ch, dz, dy, dx)];
                        for yy in yy_lo..yy_hi {
                            let y = (yy as i64 - dy) as usize;
                            let dout_row = &dout_chan[(z as usize * ny + y) * nx..][..nx];
                            let din_row = &mut din_plane[yy * nx..][..nx];
                            axpy_shift(din_row, dout_row, wv, -dx);
                        }
                    }
                }
            }
        }
    });

    // d weights and d bias, one task per output channel
    let per_oc = par::map_collect(out_ch, |oc| {
        let mut dw = vec![T::zero(); in_ch * 27];
        let mut db = T::zero();
        let dout_chan = dout.channel(oc);
        for &v in dout_chan {
            db = db + v;
        }
        for ic in 0..in_ch {
            let in_chan = input.channel(ic);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let mut acc = T::zero();
                        for z in 0..nz as i64 {
                            let zz = z + dz;
                            if zz < 0 || zz >= nz as i64 {
                                continue;
                            }
                            let y_lo = (-dy).max(0) as usize;
                            let y_hi = (ny as i64 - dy.max(0)) as usize;
                            for y in y_lo..y_hi {
                                let yy = (y as i64 + dy) as usize;
                                let dout_row = &dout_chan[(z as usize * ny + y) * nx..][..nx];
                                let in_row = &in_chan[(zz as usize * ny + yy) * nx..][..nx];
                                acc = acc + dot_shift(dout_row, in_row, dx);
                            }
                        }
                        dw[ic * 27 + ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize] = acc;
                    }
                }
            }
        }
        (dw, db)
    });
    let mut dw = vec![T::zero(); out_ch * in_ch * 27];
    let mut db = vec![T::zero(); out_ch];
    for (oc, (w_part, b_part)) in per_oc.into_iter().enumerate() {
        dw[oc * in_ch * 27..(oc + 1) * in_ch * 27].copy_from_slice(&w_part);
        db[oc] = b_part;
    }
    (din, dw, db)
}

/// sum_x a[x] * b[x + dx] over the valid range.
#[inline]
fn dot_shift<T: Scalar>(a: &[T], b: &[T], dx: i64) -> T {
    let nx = a.len();
    let (a, b) = match dx {
        -1 => (&a[1..], &b[..nx - 1]),
        0 => (&a[..], &b[..]),
        1 => (&a[..nx - 1], &b[1..]),
        _ => unreachable!(),
    };
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn conv1_forward<T: Scalar>(input: &Tensor<T>, w: &[T], b: &[T], out_ch: usize) -> Tensor<T> {
    let n = input.spatial_len();
    let in_ch = input.channels;
    let mut out = Tensor::zeros(out_ch, input.dims);
    par::for_each_chunk_mut(&mut out.data, n, |oc, out_chan| {
        for v in out_chan.iter_mut() {
            *v = b[oc];
        }
        for ic in 0..in_ch {
            let wv = w[oc * in_ch + ic];
            for (o, &iv) in out_chan.iter_mut().zip(input.channel(ic)) {
                *o = *o + wv * iv;
            }
        }
    });
    out
}

pub fn conv1_backward<T: Scalar>(
    input: &Tensor<T>,
    w: &[T],
    out_ch: usize,
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = input.spatial_len();
    let in_ch = input.channels;
    let mut din = Tensor::zeros(in_ch, input.dims);
    par::for_each_chunk_mut(&mut din.data, n, |ic, din_chan| {
        for oc in 0..out_ch {
            let wv = w[oc * in_ch + ic];
            for (d, &g) in din_chan.iter_mut().zip(dout.channel(oc)) {
                *d = *d + wv * g;
            }
        }
    });
    let per_oc = par::map_collect(out_ch, |oc| {
        let mut dw_row = vec![T::zero(); in_ch];
        let mut db = T::zero();
        let dout_chan = dout.channel(oc);
        for &g in dout_chan {
            db = db + g;
        }
        for (ic, dwv) in dw_row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&g, &x) in dout_chan.iter().zip(input.channel(ic)) {
                acc = acc + g * x;
            }
            *dwv = acc;
        }
        (dw_row, db)
    });
    let mut dw = vec![T::zero(); out_ch * in_ch];
    let mut db = vec![T::zero(); out_ch];
    for (oc, (row, b_part)) in per_oc.into_iter().enumerate() {
        dw[oc * in_ch..(oc + 1) * in_ch].copy_from_slice(&row);
        db[oc] = b_part;
    }
    (din, dw, db)
}

pub fn leaky_relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let slope = T::from_f64(LEAKY_RELU_SLOPE);
    let mut out = input.clone();
    par::for_each_chunk_mut(&mut out.data, par::SUM_CHUNK, |_, chunk| {
        for v in chunk.iter_mut() {
            if *v < T::zero() {
                *v = *v * slope;
            }
        }
    });
    out
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let slope = T::from_f64(LEAKY_RELU_SLOPE);
    let mut din = dout.clone();
    par::for_each_chunk_mut(&mut din.data, par::SUM_CHUNK, |ci, chunk| {
        let base = ci * par::SUM_CHUNK;
        for (j, v) in chunk.iter_mut().enumerate() {
            if input.data[base + j] < T::zero() {
                *v = *v * slope;
            }
        }
    });
    din
}

pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    par::for_each_chunk_mut(&mut out.data, par::SUM_CHUNK, |_, chunk| {
        for v in chunk.iter_mut() {
            *v = T::one() / (T::one() + (-*v).exp());
        }
    });
    out
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut din = dout.clone();
    par::for_each_chunk_mut(&mut din.data, par::SUM_CHUNK, |ci, chunk| {
        let base = ci * par::SUM_CHUNK;
        for (j, v) in chunk.iter_mut().enumerate() {
            let y = output.data[base + j];
            *v = *v * y * (T::one() - y);
        }
    });
    din
}

pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [nx, ny, nz] = input.dims;
    let [ox, oy, oz] = [nx / 2, ny / 2, nz / 2];
    let out_spatial = ox * oy * oz;
    let ch = input.channels;
    let mut out = Tensor::zeros(ch, [ox, oy, oz]);
    let mut argmax = vec![0u32; ch * out_spatial];
    // one channel per task; write both the outputs and the argmax slice
    let pairs = par::map_collect(ch, |c| {
        let in_chan = input.channel(c);
        let mut vals = vec![T::zero(); out_spatial];
        let mut args = vec![0u32; out_spatial];
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0u32;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = (2 * x + dx) + nx * ((2 * y + dy) + ny * (2 * z + dz));
                                let v = in_chan[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx as u32;
                                }
                            }
                        }
                    }
                    let o = x + ox * (y + oy * z);
                    vals[o] = best;
                    args[o] = best_idx;
                }
            }
        }
        (vals, args)
    });
    for (c, (vals, args)) in pairs.into_iter().enumerate() {
        out.channel_mut(c).copy_from_slice(&vals);
        argmax[c * out_spatial..(c + 1) * out_spatial].copy_from_slice(&args);
    }
    (out, argmax)
}

pub fn maxpool2_backward<T: Scalar>(
    input_dims: [usize; 3],
    channels: usize,
    argmax: &[u32],
    dout: &Tensor<T>,
) -> Tensor<T> {
    let mut din = Tensor::zeros(channels, input_dims);
    let out_spatial = dout.spatial_len();
    let in_spatial = din.spatial_len();
    par::for_each_chunk_mut(&mut din.data, in_spatial, |c, din_chan| {
        let dout_chan = dout.channel(c);
        let args = &argmax[c * out_spatial..(c + 1) * out_spatial];
        for (o, &idx) in args.iter().enumerate() {
            din_chan[idx as usize] = din_chan[idx as usize] + dout_chan[o];
        }
    });
    din
}

pub fn upsample2_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let [nx, ny, nz] = input.dims;
    let dims = [nx * 2, ny * 2, nz * 2];
    let mut out = Tensor::zeros(input.channels, dims);
    let out_spatial = out.spatial_len();
    par::for_each_chunk_mut(&mut out.data, out_spatial, |c, out_chan| {
        let in_chan = input.channel(c);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let in_row = &in_chan[(z / 2 * ny + y / 2) * nx..][..nx];
                let out_row = &mut out_chan[(z * dims[1] + y) * dims[0]..][..dims[0]];
                for (x, v) in out_row.iter_mut().enumerate() {
                    *v = in_row[x / 2];
                }
            }
        }
    });
    out
}

pub fn upsample2_backward<T: Scalar>(input_dims: [usize; 3], channels: usize, dout: &Tensor<T>) -> Tensor<T> {
    let [nx, ny, _] = input_dims;
    let mut din = Tensor::zeros(channels, input_dims);
    let in_spatial = din.spatial_len();
    let odims = dout.dims;
    par::for_each_chunk_mut(&mut din.data, in_spatial, |c, din_chan| {
        let dout_chan = dout.channel(c);
        for z in 0..odims[2] {
            for y in 0..odims[1] {
                let din_row_base = (z / 2 * ny + y / 2) * nx;
                let dout_row = &dout_chan[(z * odims[1] + y) * odims[0]..][..odims[0]];
                for (x, &g) in dout_row.iter().enumerate() {
                    let i = din_row_base + x / 2;
                    din_chan[i] = din_chan[i] + g;
                }
            }
        }
    });
    din
}

pub fn concat_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    Tensor::stack(&[a, b])
}

/// Split the concat gradient back into the two inputs' gradients.
pub fn concat_backward<T: Scalar>(a_channels: usize, dout: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let n = dout.spatial_len();
    let da = Tensor {
        channels: a_channels,
        dims: dout.dims,
        data: dout.data[..a_channels * n].to_vec(),
    };
    let db = Tensor {
        channels: dout.channels - a_channels,
        dims: dout.dims,
        data: dout.data[a_channels * n..].to_vec(),
    };
    (da, db)
}

pub fn affine_forward<T: Scalar>(input: &Tensor<T>, scale: &[T], shift: &[T]) -> Tensor<T> {
    let n = input.spatial_len();
    let mut out = input.clone();
    par::for_each_chunk_mut(&mut out.data, n, |c, chan| {
        let (s, b) = (scale[c], shift[c]);
        for v in chan.iter_mut() {
            *v = s * *v + b;
        }
    });
    out
}

pub fn affine_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = input.spatial_len();
    let ch = input.channels;
    let mut din = dout.clone();
    par::for_each_chunk_mut(&mut din.data, n, |c, chan| {
        for v in chan.iter_mut() {
            *v = *v * scale[c];
        }
    });
    let stats = par::map_collect(ch, |c| {
        let mut ds = T::zero();
        let mut db = T::zero();
        for (&g, &x) in dout.channel(c).iter().zip(input.channel(c)) {
            ds = ds + g * x;
            db = db + g;
        }
        (ds, db)
    });
    let dscale = stats.iter().map(|&(s, _)| s).collect();
    let dshift = stats.iter().map(|&(_, b)| b).collect();
    (din, dscale, dshift)
}

pub fn instance_norm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = input.spatial_len();
    let eps = T::from_f64(INSTANCE_NORM_EPS);
    let nn = T::from_f64(n as f64);
    let ch = input.channels;
    let stats = par::map_collect(ch, |c| {
        let chan = input.channel(c);
        let mut sum = T::zero();
        for &v in chan {
            sum = sum + v;
        }
        let mean = sum / nn;
        let mut var = T::zero();
        for &v in chan {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / nn;
        (mean, T::one() / (var + eps).sqrt())
    });
    let mean: Vec<T> = stats.iter().map(|&(m, _)| m).collect();
    let inv_std: Vec<T> = stats.iter().map(|&(_, s)| s).collect();
    let mut out = input.clone();
    par::for_each_chunk_mut(&mut out.data, n, |c, chan| {
        let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
        for v in chan.iter_mut() {
            *v = g * (*v - m) * s + b;
        }
    });
    (out, mean, inv_std)
}

pub fn instance_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    dout: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = input.spatial_len();
    let nn = T::from_f64(n as f64);
    let ch = input.channels;
    let mut din = Tensor::zeros(ch, input.dims);
    let stats = par::map_collect(ch, |c| {
        let x = input.channel(c);
        let g = dout.channel(c);
        let (m, s) = (mean[c], inv_std[c]);
        let mut dgamma = T::zero();
        let mut dbeta = T::zero();
        let mut dot = T::zero(); // sum g * xhat
        for (&gi, &xi) in g.iter().zip(x) {
            let xhat = (xi - m) * s;
            dgamma = dgamma + gi * xhat;
            dbeta = dbeta + gi;
        }
        for (&gi, &xi) in g.iter().zip(x) {
            dot = dot + gi * (xi - m) * s;
        }
        (dgamma, dbeta, dot)
    });
    par::for_each_chunk_mut(&mut din.data, n, |c, chan| {
        let x = input.channel(c);
        let g = dout.channel(c);
        let (m, s) = (mean[c], inv_std[c]);
        let (_, dbeta, dot) = stats[c];
        let gm = gamma[c];
        // dx = gamma * s * (g - mean(g) - xhat * mean(g * xhat))
        for (i, v) in chan.iter_mut().enumerate() {
            let xhat = (x[i] - m) * s;
            *v = gm * s * (g[i] - dbeta / nn - xhat * dot / nn);
        }
    });
    let dgamma = stats.iter().map(|&(a, _, _)| a).collect();
    let dbeta = stats.iter().map(|&(_, b, _)| b).collect();
    (din, dgamma, dbeta)
}

pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let n = input.spatial_len();
    let nn = T::from_f64(n as f64);
    let mut out = Tensor::zeros(input.channels, [1, 1, 1]);
    for c in 0..input.channels {
        let mut sum = T::zero();
        for &v in input.channel(c) {
            sum = sum + v;
        }
        out.data[c] = sum / nn;
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_dims: [usize; 3],
    channels: usize,
    dout: &Tensor<T>,
) -> Tensor<T> {
    let mut din = Tensor::zeros(channels, input_dims);
    let n = din.spatial_len();
    let nn = T::from_f64(n as f64);
    for c in 0..channels {
        let g = dout.data[c] / nn;
        for v in din.channel_mut(c) {
            *v = g;
        }
    }
    din
}
