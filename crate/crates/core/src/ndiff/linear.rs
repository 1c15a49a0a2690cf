use super::conv::dot;
use super::TensorD;
use crate::error::{Error, Result};

fn rows_of(input: &TensorD, d_in: usize) -> Result<usize> {
    if input.ndim() == 0 || input.last_dim() != d_in {
        return Err(Error::Shape(format!(
            "linear: input shape {:?} does not end in {d_in}",
            input.shape()
        )));
    }
    Ok(input.len() / d_in)
}

/// Affine map on the trailing axis: `y = x W^T + b` with `W` of shape `[D_out, D_in]`.
pub fn linear(input: &TensorD, weight: &TensorD, bias: &TensorD) -> Result<TensorD> {
    if weight.ndim() != 2 {
        return Err(Error::Shape(format!(
            "linear: weight must be rank 2, got {:?}",
            weight.shape()
        )));
    }
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    if bias.shape() != [d_out] {
        return Err(Error::Shape(format!(
            "linear: bias shape {:?}, expected [{d_out}]",
            bias.shape()
        )));
    }
    let rows = rows_of(input, d_in)?;
    let x = input.values();
    let w = weight.values();
    let b = bias.values();
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..][..d_in];
        let yr = &mut out[r * d_out..][..d_out];
        for (o, y) in yr.iter_mut().enumerate() {
            *y = b[o] + dot(&w[o * d_in..][..d_in], xr);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    TensorD::new(shape, out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: TensorD,
    pub weight: TensorD,
    pub bias: TensorD,
}

pub fn linear_backward(input: &TensorD, weight: &TensorD, grad_out: &TensorD) -> Result<LinearGrads> {
    let (d_out, d_in) = (weight.shape()[0], weight.shape()[1]);
    let rows = rows_of(input, d_in)?;
    if grad_out.len() != rows * d_out || grad_out.last_dim() != d_out {
        return Err(Error::Shape(format!(
            "linear_backward: grad shape {:?} for {rows} rows of width {d_out}",
            grad_out.shape()
        )));
    }
    let x = input.values();
    let w = weight.values();
    let g = grad_out.values();
    let mut gx = vec![0.0; rows * d_in];
    let mut gw = vec![0.0; d_out * d_in];
    let mut gb = vec![0.0; d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..][..d_in];
        let gr = &g[r * d_out..][..d_out];
        let gxr = &mut gx[r * d_in..][..d_in];
        for (o, &gv) in gr.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            gb[o] += gv;
            let wo = &w[o * d_in..][..d_in];
            let gwo = &mut gw[o * d_in..][..d_in];
            for i in 0..d_in {
                gxr[i] += gv * wo[i];
                gwo[i] += gv * xr[i];
            }
        }
    }
    Ok(LinearGrads {
        input: TensorD::new(input.shape().to_vec(), gx)?,
        weight: TensorD::new(weight.shape().to_vec(), gw)?,
        bias: TensorD::vector(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_case() {
        let y = linear(
            &TensorD::vector(vec![5.0]),
            &TensorD::new(vec![1, 1], vec![2.0]).unwrap(),
            &TensorD::vector(vec![3.0]),
        )
        .unwrap();
        assert_eq!(y.values(), &[13.0]);
    }

    #[test]
    fn identity_weight() {
        let x = TensorD::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let w = TensorD::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = linear(&x, &w, &TensorD::zeros(&[3])).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = TensorD::from_fn(&[2, 3], |_| rng.gen_range(-1.0..1.0));
        let w = TensorD::from_fn(&[4, 3], |_| rng.gen_range(-1.0..1.0));
        let b = TensorD::from_fn(&[4], |_| rng.gen_range(-1.0..1.0));
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        for r in 0..2 {
            for o in 0..4 {
                let mut e = b.values()[o];
                for i in 0..3 {
                    e += w.values()[o * 3 + i] * x.values()[r * 3 + i];
                }
                assert!((y.values()[r * 4 + o] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatch_is_shape_error() {
        let x = TensorD::zeros(&[2, 4]);
        let w = TensorD::zeros(&[3, 3]);
        assert!(linear(&x, &w, &TensorD::zeros(&[3])).is_err());
    }
}
