use super::conv::dot;
use super::linear::{linear, linear_backward};
use super::TensorD;
use crate::error::{Error, Result};
use crate::impl_parameters;

/// Query/key/value/output projections, each `[D, D]` with a `[D]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams {
    pub wq: TensorD,
    pub bq: TensorD,
    pub wk: TensorD,
    pub bk: TensorD,
    pub wv: TensorD,
    pub bv: TensorD,
    pub wo: TensorD,
    pub bo: TensorD,
}

impl_parameters!(MhsaParams {
    wq,
    bq,
    wk,
    bk,
    wv,
    bv,
    wo,
    bo
});

impl MhsaParams {
    pub fn zeros(dim: usize) -> Self {
        let m = || TensorD::zeros(&[dim, dim]);
        let v = || TensorD::zeros(&[dim]);
        Self {
            wq: m(),
            bq: v(),
            wk: m(),
            bk: v(),
            wv: m(),
            bv: v(),
            wo: m(),
            bo: v(),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }
}

/// Forward intermediates kept for the adjoint pass.
#[derive(Debug, Clone)]
pub struct MhsaCache {
    pub q: TensorD,
    pub k: TensorD,
    pub v: TensorD,
    /// Attention weights, `[heads, N, N]`, rows sum to one.
    pub probs: TensorD,
    /// Concatenated head outputs before the output projection, `[N, D]`.
    pub context: TensorD,
}

fn check(seq: &TensorD, params: &MhsaParams, heads: usize) -> Result<(usize, usize)> {
    let d = params.dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "embedding dim {d} is not divisible by {heads} heads"
        )));
    }
    if seq.ndim() != 2 || seq.shape()[1] != d {
        return Err(Error::Shape(format!(
            "attention expects [N, {d}], got {:?}",
            seq.shape()
        )));
    }
    Ok((seq.shape()[0], d))
}

pub fn multi_head_self_attention(seq: &TensorD, params: &MhsaParams, heads: usize) -> Result<TensorD> {
    mhsa_forward(seq, params, heads).map(|(y, _)| y)
}

pub fn mhsa_forward(seq: &TensorD, params: &MhsaParams, heads: usize) -> Result<(TensorD, MhsaCache)> {
    let (n, d) = check(seq, params, heads)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(seq, &params.wq, &params.bq)?;
    let k = linear(seq, &params.wk, &params.bk)?;
    let v = linear(seq, &params.wv, &params.bv)?;
    let (qv, kv, vv) = (q.values(), k.values(), v.values());

    let mut probs = vec![0.0; heads * n * n];
    let mut context = vec![0.0; n * d];
    let mut kh = vec![0.0; n * dh];
    for h in 0..heads {
        let off = h * dh;
        for j in 0..n {
            kh[j * dh..][..dh].copy_from_slice(&kv[j * d + off..][..dh]);
        }
        for i in 0..n {
            let qi = &qv[i * d + off..][..dh];
            let row = &mut probs[(h * n + i) * n..][..n];
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                let s = dot(qi, &kh[j * dh..][..dh]) * scale;
                row[j] = s;
                m = m.max(s);
            }
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = (*p - m).exp();
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            let ctx = &mut context[i * d + off..][..dh];
            for (j, &p) in row.iter().enumerate() {
                for (c, vvj) in ctx.iter_mut().zip(&vv[j * d + off..][..dh]) {
                    *c += p * vvj;
                }
            }
        }
    }
    let probs = TensorD::new(vec![heads, n, n], probs)?;
    let context = TensorD::new(vec![n, d], context)?;
    let out = linear(&context, &params.wo, &params.bo)?;
    Ok((
        out,
        MhsaCache {
            q,
            k,
            v,
            probs,
            context,
        },
    ))
}

/// Returns the gradient with respect to the sequence and to every projection.
pub fn mhsa_backward(
    seq: &TensorD,
    params: &MhsaParams,
    heads: usize,
    cache: &MhsaCache,
    grad_out: &TensorD,
) -> Result<(TensorD, MhsaParams)> {
    let (n, d) = check(seq, params, heads)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let out_g = linear_backward(&cache.context, &params.wo, grad_out)?;
    let gctx = out_g.input.values();
    let (qv, kv, vv) = (cache.q.values(), cache.k.values(), cache.v.values());
    let pv = cache.probs.values();

    let mut gq = vec![0.0; n * d];
    let mut gk = vec![0.0; n * d];
    let mut gv = vec![0.0; n * d];
    let mut gp = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let row = &pv[(h * n + i) * n..][..n];
            let gci = &gctx[i * d + off..][..dh];
            // dP[i, j] = dCtx[i] . V[j];  dV[j] += P[i, j] dCtx[i]
            for j in 0..n {
                gp[j] = dot(gci, &vv[j * d + off..][..dh]);
                let p = row[j];
                for (g, c) in gv[j * d + off..][..dh].iter_mut().zip(gci) {
                    *g += p * c;
                }
            }
            let dotp: f64 = row.iter().zip(&gp).map(|(p, g)| p * g).sum();
            let qi = &qv[i * d + off..][..dh];
            for j in 0..n {
                let gs = row[j] * (gp[j] - dotp) * scale;
                if gs == 0.0 {
                    continue;
                }
                let kj = &kv[j * d + off..][..dh];
                for c in 0..dh {
                    gq[i * d + off + c] += gs * kj[c];
                    gk[j * d + off + c] += gs * qi[c];
                }
            }
        }
    }
    let gq = TensorD::new(vec![n, d], gq)?;
    let gk = TensorD::new(vec![n, d], gk)?;
    let gv = TensorD::new(vec![n, d], gv)?;
    let q_g = linear_backward(seq, &params.wq, &gq)?;
    let k_g = linear_backward(seq, &params.wk, &gk)?;
    let v_g = linear_backward(seq, &params.wv, &gv)?;
    let mut gx = q_g.input;
    gx.add_assign(&k_g.input)?;
    gx.add_assign(&v_g.input)?;
    Ok((
        gx,
        MhsaParams {
            wq: q_g.weight,
            bq: q_g.bias,
            wk: k_g.weight,
            bk: k_g.bias,
            wv: v_g.weight,
            bv: v_g.bias,
            wo: out_g.weight,
            bo: out_g.bias,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Parameters;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, rng: &mut ChaCha8Rng) -> MhsaParams {
        let mut p = MhsaParams::zeros(d);
        p.visit_mut("", &mut |_, t| {
            t.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8))
        });
        p
    }

    #[test]
    fn single_token_passes_value_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(4, &mut rng);
        let x = TensorD::from_fn(&[1, 4], |_| rng.gen_range(-1.0..1.0));
        let (y, cache) = mhsa_forward(&x, &p, 2).unwrap();
        assert!(cache.probs.values().iter().all(|&w| w == 1.0));
        let v = linear(&x, &p.wv, &p.bv).unwrap();
        let expect = linear(&v, &p.wo, &p.bo).unwrap();
        for (a, b) in y.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(8, &mut rng);
        let x = TensorD::from_fn(&[6, 8], |_| rng.gen_range(-2.0..2.0));
        let (_, cache) = mhsa_forward(&x, &p, 4).unwrap();
        for row in cache.probs.values().chunks(6) {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_head_matches_explicit_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d) = (3, 4);
        let p = random_params(d, &mut rng);
        let x = TensorD::from_fn(&[n, d], |_| rng.gen_range(-1.0..1.0));
        let y = multi_head_self_attention(&x, &p, 1).unwrap();

        // softmax(Q K^T / sqrt(d)) V W_o^T + b_o, written out with plain loops.
        let proj = |w: &TensorD, b: &TensorD| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| {
                    (0..d)
                        .map(|o| {
                            b.values()[o]
                                + (0..d)
                                    .map(|c| w.values()[o * d + c] * x.values()[i * d + c])
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let (q, k, v) = (proj(&p.wq, &p.bq), proj(&p.wk, &p.bk), proj(&p.wv, &p.bv));
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let ctx: Vec<f64> = (0..d)
                .map(|c| (0..n).map(|j| scores[j].exp() / z * v[j][c]).sum())
                .collect();
            for o in 0..d {
                let e = p.bo.values()[o] + (0..d).map(|c| p.wo.values()[o * d + c] * ctx[c]).sum::<f64>();
                assert!((y.values()[i * d + o] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let p = MhsaParams::zeros(6);
        let x = TensorD::zeros(&[2, 6]);
        assert!(matches!(mhsa_forward(&x, &p, 4), Err(Error::Config(_))));
    }
}
