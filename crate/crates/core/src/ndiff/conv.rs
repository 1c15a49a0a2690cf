use rayon::prelude::*;

use super::TensorD;
use crate::error::{Error, Result};

// Multiply-add count above which output channels are spread over the rayon
// pool. Every output element is still reduced in a fixed order.
const PAR_THRESHOLD: usize = 1 << 20;

/// Output length of a valid (unpadded) 1-D convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || len < kernel {
        None
    } else {
        Some((len - kernel) / stride + 1)
    }
}

struct Dims {
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
    out_len: usize,
}

fn dims(input: &TensorD, weight: &TensorD, stride: usize) -> Result<Dims> {
    if input.ndim() != 2 || weight.ndim() != 3 {
        return Err(Error::Shape(format!(
            "conv1d expects input [C_in, L] and weight [C_out, C_in, K], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (c_out, wc_in, kernel) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv1d: input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    let out_len = conv1d_out_len(len, kernel, stride).ok_or_else(|| {
        Error::Shape(format!(
            "conv1d: input length {len} shorter than kernel {kernel} (stride {stride})"
        ))
    })?;
    Ok(Dims {
        c_in,
        c_out,
        len,
        kernel,
        out_len,
    })
}

/// Valid cross-correlation `out[o, t] = b[o] + sum_{c,k} w[o, c, k] * x[c, t*S + k]`.
pub fn conv1d(input: &TensorD, weight: &TensorD, bias: &TensorD, stride: usize) -> Result<TensorD> {
    let d = dims(input, weight, stride)?;
    if bias.shape() != [d.c_out] {
        return Err(Error::Shape(format!(
            "conv1d: bias shape {:?}, expected [{}]",
            bias.shape(),
            d.c_out
        )));
    }
    let x = input.values();
    let w = weight.values();
    let b = bias.values();
    let mut out = vec![0.0; d.c_out * d.out_len];

    let single = |o: usize, t: usize| {
        let mut acc = b[o];
        for c in 0..d.c_in {
            let wk = &w[(o * d.c_in + c) * d.kernel..][..d.kernel];
            let xs = &x[c * d.len + t * stride..][..d.kernel];
            acc += dot(wk, xs);
        }
        acc
    };
    // Four output channels by two time steps per pass, so every loaded weight
    // and sample is used twice or four times.
    let block = |o0: usize, dst: &mut [f64]| {
        let rows = dst.len() / d.out_len;
        if rows < 4 {
            for (r, row) in dst.chunks_mut(d.out_len).enumerate() {
                for (t, slot) in row.iter_mut().enumerate() {
                    *slot = single(o0 + r, t);
                }
            }
            return;
        }
        let pairs = d.out_len / 2;
        for tp in 0..pairs {
            let t = 2 * tp;
            let mut acc = [[0.0f64; 2]; 4];
            for c in 0..d.c_in {
                let xa = &x[c * d.len + t * stride..][..d.kernel];
                let xb = &x[c * d.len + (t + 1) * stride..][..d.kernel];
                let wr = |r: usize| &w[((o0 + r) * d.c_in + c) * d.kernel..][..d.kernel];
                let (w0, w1, w2, w3) = (wr(0), wr(1), wr(2), wr(3));
                for j in 0..d.kernel {
                    let (a, bb) = (xa[j], xb[j]);
                    acc[0][0] += w0[j] * a;
                    acc[0][1] += w0[j] * bb;
                    acc[1][0] += w1[j] * a;
                    acc[1][1] += w1[j] * bb;
                    acc[2][0] += w2[j] * a;
                    acc[2][1] += w2[j] * bb;
                    acc[3][0] += w3[j] * a;
                    acc[3][1] += w3[j] * bb;
                }
            }
            for (r, pair) in acc.iter().enumerate() {
                dst[r * d.out_len + t] = b[o0 + r] + pair[0];
                dst[r * d.out_len + t + 1] = b[o0 + r] + pair[1];
            }
        }
        if d.out_len % 2 == 1 {
            let t = d.out_len - 1;
            for r in 0..4 {
                dst[r * d.out_len + t] = single(o0 + r, t);
            }
        }
    };

    if d.c_out * d.out_len * d.c_in * d.kernel >= PAR_THRESHOLD {
        out.par_chunks_mut(4 * d.out_len)
            .enumerate()
            .for_each(|(i, dst)| block(4 * i, dst));
    } else {
        out.chunks_mut(4 * d.out_len)
            .enumerate()
            .for_each(|(i, dst)| block(4 * i, dst));
    }
    TensorD::new(vec![d.c_out, d.out_len], out)
}

/// Gradients of [`conv1d`] with respect to its three arguments.
#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    /// `None` when the input gradient was not requested.
    pub input: Option<TensorD>,
    pub weight: TensorD,
    pub bias: TensorD,
}

pub fn conv1d_backward(
    input: &TensorD,
    weight: &TensorD,
    stride: usize,
    grad_out: &TensorD,
    want_input_grad: bool,
) -> Result<Conv1dGrads> {
    let d = dims(input, weight, stride)?;
    if grad_out.shape() != [d.c_out, d.out_len] {
        return Err(Error::Shape(format!(
            "conv1d_backward: grad shape {:?}, expected [{}, {}]",
            grad_out.shape(),
            d.c_out,
            d.out_len
        )));
    }
    let x = input.values();
    let w = weight.values();
    let g = grad_out.values();
    let big = d.c_out * d.out_len * d.c_in * d.kernel >= PAR_THRESHOLD;

    let mut gb = vec![0.0; d.c_out];
    for (o, slot) in gb.iter_mut().enumerate() {
        *slot = g[o * d.out_len..][..d.out_len].iter().sum();
    }

    // dW[o, c, k] = sum_t g[o, t] * x[c, tS + k]
    let mut gw = vec![0.0; w.len()];
    let wrow = |o: usize, dst: &mut [f64]| {
        let go = &g[o * d.out_len..][..d.out_len];
        for c in 0..d.c_in {
            let dk = &mut dst[c * d.kernel..][..d.kernel];
            let xc = &x[c * d.len..][..d.len];
            for (t, &gv) in go.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let xs = &xc[t * stride..][..d.kernel];
                for (acc, xv) in dk.iter_mut().zip(xs) {
                    *acc += gv * xv;
                }
            }
        }
    };
    let chunk = d.c_in * d.kernel;
    if big {
        gw.par_chunks_mut(chunk).enumerate().for_each(|(o, dst)| wrow(o, dst));
    } else {
        gw.chunks_mut(chunk).enumerate().for_each(|(o, dst)| wrow(o, dst));
    }

    let gin = if want_input_grad {
        // dX[c, tS + k] += sum_o g[o, t] * w[o, c, k]
        let mut gx = vec![0.0; d.c_in * d.len];
        let xrow = |c: usize, dst: &mut [f64]| {
            for o in 0..d.c_out {
                let wk = &w[(o * d.c_in + c) * d.kernel..][..d.kernel];
                let go = &g[o * d.out_len..][..d.out_len];
                for (t, &gv) in go.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    let ds = &mut dst[t * stride..][..d.kernel];
                    for (acc, wv) in ds.iter_mut().zip(wk) {
                        *acc += gv * wv;
                    }
                }
            }
        };
        if big {
            gx.par_chunks_mut(d.len).enumerate().for_each(|(c, dst)| xrow(c, dst));
        } else {
            gx.chunks_mut(d.len).enumerate().for_each(|(c, dst)| xrow(c, dst));
        }
        Some(TensorD::new(vec![d.c_in, d.len], gx)?)
    } else {
        None
    };

    Ok(Conv1dGrads {
        input: gin,
        weight: TensorD::new(weight.shape().to_vec(), gw)?,
        bias: TensorD::vector(gb),
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f64; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}
