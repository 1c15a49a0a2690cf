//! Elementwise and axis-wise nonlinearities with their adjoints.
//!
//! Backward functions take whichever forward quantity makes the adjoint
//! cheapest (the input for GELU/ReLU, the output for sigmoid/tanh/softmax).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tensor::ensure_same_shape;
use super::TensorD;
use crate::error::{Error, Result};

fn map(t: &TensorD, f: impl Fn(f64) -> f64) -> TensorD {
    TensorD::new(t.shape().to_vec(), t.values().iter().map(|&v| f(v)).collect()).expect("same element count")
}

fn zip_map(a: &TensorD, g: &TensorD, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<TensorD> {
    ensure_same_shape(a, g, op)?;
    TensorD::new(
        a.shape().to_vec(),
        a.values().iter().zip(g.values()).map(|(&x, &gv)| f(x, gv)).collect(),
    )
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &TensorD) -> TensorD {
    map(x, |v| v.max(0.0))
}

pub fn relu_backward(input: &TensorD, grad_out: &TensorD) -> Result<TensorD> {
    zip_map(input, grad_out, "relu_backward", |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF written through `erf`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(x: &TensorD) -> TensorD {
    map(x, gelu_scalar)
}

pub fn gelu_backward(input: &TensorD, grad_out: &TensorD) -> Result<TensorD> {
    zip_map(input, grad_out, "gelu_backward", |x, g| g * gelu_grad_scalar(x))
}

pub fn sigmoid(x: &TensorD) -> TensorD {
    map(x, sigmoid_scalar)
}

pub fn sigmoid_backward(output: &TensorD, grad_out: &TensorD) -> Result<TensorD> {
    zip_map(output, grad_out, "sigmoid_backward", |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &TensorD) -> TensorD {
    map(x, f64::tanh)
}

pub fn tanh_backward(output: &TensorD, grad_out: &TensorD) -> Result<TensorD> {
    zip_map(output, grad_out, "tanh_backward", |y, g| g * (1.0 - y * y))
}

/// Splits a shape around `axis` into (outer, axis length, inner) strides.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax(x: &TensorD, axis: usize) -> Result<TensorD> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let v = x.values();
    let mut out = vec![0.0; v.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| v[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..n {
                let e = (v[idx(k)] - m).exp();
                out[idx(k)] = e;
                s += e;
            }
            for k in 0..n {
                out[idx(k)] /= s;
            }
        }
    }
    TensorD::new(x.shape().to_vec(), out)
}

pub fn softmax_backward(output: &TensorD, grad_out: &TensorD, axis: usize) -> Result<TensorD> {
    ensure_same_shape(output, grad_out, "softmax_backward")?;
    let (outer, n, inner) = split_axis(output.shape(), axis)?;
    let y = output.values();
    let g = grad_out.values();
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dotp: f64 = (0..n).map(|k| y[idx(k)] * g[idx(k)]).sum();
            for k in 0..n {
                gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dotp);
            }
        }
    }
    TensorD::new(output.shape().to_vec(), gx)
}

/// Layer normalization over the trailing axis with learned scale and shift.
pub fn layer_norm(x: &TensorD, gamma: &TensorD, beta: &TensorD, eps: f64) -> Result<TensorD> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Shape(format!(
            "layer_norm: scale/shift {:?}/{:?} for width {d}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let v = x.values();
    let mut out = vec![0.0; v.len()];
    for (row, dst) in v.chunks(d).zip(out.chunks_mut(d)) {
        let (mean, inv) = row_stats(row, eps);
        for j in 0..d {
            dst[j] = (row[j] - mean) * inv * gamma.values()[j] + beta.values()[j];
        }
    }
    TensorD::new(x.shape().to_vec(), out)
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub input: TensorD,
    pub gamma: TensorD,
    pub beta: TensorD,
}

pub fn layer_norm_backward(x: &TensorD, gamma: &TensorD, eps: f64, grad_out: &TensorD) -> Result<LayerNormGrads> {
    ensure_same_shape(x, grad_out, "layer_norm_backward")?;
    let d = x.last_dim();
    let n = d as f64;
    let gm = gamma.values();
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for ((row, g), dst) in x
        .values()
        .chunks(d)
        .zip(grad_out.values().chunks(d))
        .zip(gx.chunks_mut(d))
    {
        let (mean, inv) = row_stats(row, eps);
        let mut sum_gh = 0.0;
        let mut sum_gh_xh = 0.0;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            gg[j] += g[j] * xh;
            gb[j] += g[j];
            let gh = g[j] * gm[j];
            sum_gh += gh;
            sum_gh_xh += gh * xh;
        }
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            let gh = g[j] * gm[j];
            dst[j] = inv * (gh - sum_gh / n - xh * sum_gh_xh / n);
        }
    }
    Ok(LayerNormGrads {
        input: TensorD::new(x.shape().to_vec(), gx)?,
        gamma: TensorD::vector(gg),
        beta: TensorD::vector(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0);
        assert!(sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn softmax_of_constants_is_uniform() {
        let x = TensorD::full(&[2, 4], 3.7);
        let y = softmax(&x, 1).unwrap();
        assert!(y.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one_on_both_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = TensorD::from_fn(&[3, 5, 2], |_| rng.gen_range(-20.0..20.0));
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            let (outer, n, inner) = split_axis(y.shape(), axis).unwrap();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..n).map(|k| y.values()[(o * n + k) * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = TensorD::from_fn(&[4, 16], |_| rng.gen_range(-5.0..5.0));
        let y = layer_norm(&x, &TensorD::full(&[16], 1.0), &TensorD::zeros(&[16]), 1e-12).unwrap();
        for row in y.values().chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // Phi(1) = 0.8413447460685429
        assert!((gelu_scalar(1.0) - 0.8413447460685429).abs() < 1e-15);
        assert!((gelu_scalar(-1.0) + 0.15865525393145707).abs() < 1e-15);
    }

    #[test]
    fn bad_axis_is_shape_error() {
        assert!(softmax(&TensorD::zeros(&[2]), 1).is_err());
    }
}
