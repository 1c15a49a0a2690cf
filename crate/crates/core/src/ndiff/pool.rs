use super::activation::split_axis;
use super::TensorD;
use crate::error::{Error, Result};

/// Arithmetic mean over `axis`; the axis is removed from the shape.
pub fn mean_pool(t: &TensorD, axis: usize) -> Result<TensorD> {
    let (outer, n, inner) = split_axis(t.shape(), axis)?;
    let v = t.values();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &v[(o * n + k) * inner..][..inner];
            for (d, s) in out[o * inner..][..inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|x| *x *= scale);
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    TensorD::new(shape, out)
}

pub fn mean_pool_backward(input_shape: &[usize], axis: usize, grad_out: &TensorD) -> Result<TensorD> {
    let (outer, n, inner) = split_axis(input_shape, axis)?;
    if grad_out.len() != outer * inner {
        return Err(Error::Shape(format!(
            "mean_pool_backward: grad of {} values for input {input_shape:?} axis {axis}",
            grad_out.len()
        )));
    }
    let g = grad_out.values();
    let scale = 1.0 / n as f64;
    let mut gx = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for k in 0..n {
            let dst = &mut gx[(o * n + k) * inner..][..inner];
            for (d, s) in dst.iter_mut().zip(&g[o * inner..][..inner]) {
                *d = s * scale;
            }
        }
    }
    TensorD::new(input_shape.to_vec(), gx)
}

/// Segment bounds used by adaptive average pooling (PyTorch convention).
pub fn adaptive_bounds(len_in: usize, len_out: usize, i: usize) -> (usize, usize) {
    let start = i * len_in / len_out;
    let end = ((i + 1) * len_in).div_ceil(len_out);
    (start, end)
}

/// Adaptive average pooling of a `[T_in, C]` tensor along time to `[T_out, C]`.
pub fn adaptive_avg_pool_time(x: &TensorD, len_out: usize) -> Result<TensorD> {
    if x.ndim() != 2 || len_out == 0 || x.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "adaptive pool: input {:?} to length {len_out}",
            x.shape()
        )));
    }
    let (t_in, c) = (x.shape()[0], x.shape()[1]);
    let v = x.values();
    let mut out = vec![0.0; len_out * c];
    for i in 0..len_out {
        let (s, e) = adaptive_bounds(t_in, len_out, i);
        let inv = 1.0 / (e - s) as f64;
        let dst = &mut out[i * c..][..c];
        for t in s..e {
            for (d, src) in dst.iter_mut().zip(&v[t * c..][..c]) {
                *d += src;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    TensorD::new(vec![len_out, c], out)
}

pub fn adaptive_avg_pool_time_backward(t_in: usize, grad_out: &TensorD) -> Result<TensorD> {
    let (len_out, c) = (grad_out.shape()[0], grad_out.shape()[1]);
    let g = grad_out.values();
    let mut gx = vec![0.0; t_in * c];
    for i in 0..len_out {
        let (s, e) = adaptive_bounds(t_in, len_out, i);
        let inv = 1.0 / (e - s) as f64;
        for t in s..e {
            for (d, src) in gx[t * c..][..c].iter_mut().zip(&g[i * c..][..c]) {
                *d += src * inv;
            }
        }
    }
    TensorD::new(vec![t_in, c], gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_vector() {
        let t = TensorD::vector(vec![1.0, 2.0, 3.0]);
        let m = mean_pool(&t, 0).unwrap();
        assert_eq!(m.shape(), &[] as &[usize]);
        assert_eq!(m.values(), &[2.0]);
    }

    #[test]
    fn constant_tensor_keeps_value() {
        let t = TensorD::full(&[3, 4, 5], 1.25);
        for axis in 0..3 {
            let m = mean_pool(&t, axis).unwrap();
            assert_eq!(m.ndim(), 2);
            assert!(m.values().iter().all(|&v| v == 1.25));
        }
    }

    #[test]
    fn axis_out_of_range() {
        assert!(mean_pool(&TensorD::zeros(&[2, 2]), 2).is_err());
    }

    #[test]
    fn adaptive_bounds_cover_input() {
        let (t_in, t_out) = (374, 98);
        assert_eq!(adaptive_bounds(t_in, t_out, 0).0, 0);
        assert_eq!(adaptive_bounds(t_in, t_out, t_out - 1).1, t_in);
        for i in 0..t_out {
            let (s, e) = adaptive_bounds(t_in, t_out, i);
            assert!(e > s);
        }
    }

    #[test]
    fn adaptive_pool_identity_when_lengths_match() {
        let x = TensorD::from_fn(&[5, 2], |i| i as f64);
        assert_eq!(adaptive_avg_pool_time(&x, 5).unwrap().values(), x.values());
    }
}
