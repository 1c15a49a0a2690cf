//! Pre-norm transformer encoder block:
//! `x + MHSA(LN(x))`, then `h + FF(LN(h))` with a GELU feed-forward of width 4D.

use super::activation::{gelu, gelu_backward, layer_norm, layer_norm_backward};
use super::attention::{mhsa_backward, mhsa_forward, MhsaCache, MhsaParams};
use super::linear::{linear, linear_backward};
use super::TensorD;
use crate::error::Result;
use crate::impl_parameters;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: TensorD,
    pub ln1_b: TensorD,
    pub ln2_g: TensorD,
    pub ln2_b: TensorD,
    pub ff1_w: TensorD,
    pub ff1_b: TensorD,
    pub ff2_w: TensorD,
    pub ff2_b: TensorD,
    pub attn: MhsaParams,
}

impl_parameters!(BlockParams { ln1_g, ln1_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b } nested { attn });

impl BlockParams {
    /// Zero projections with unit layer-norm scale.
    pub fn zeros(dim: usize) -> Self {
        Self {
            ln1_g: TensorD::full(&[dim], 1.0),
            ln1_b: TensorD::zeros(&[dim]),
            ln2_g: TensorD::full(&[dim], 1.0),
            ln2_b: TensorD::zeros(&[dim]),
            ff1_w: TensorD::zeros(&[4 * dim, dim]),
            ff1_b: TensorD::zeros(&[4 * dim]),
            ff2_w: TensorD::zeros(&[dim, 4 * dim]),
            ff2_b: TensorD::zeros(&[dim]),
            attn: MhsaParams::zeros(dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: TensorD,
    n1: TensorD,
    attn: MhsaCache,
    h: TensorD,
    n2: TensorD,
    f1: TensorD,
    a1: TensorD,
}

pub fn transformer_block(seq: &TensorD, params: &BlockParams, heads: usize) -> Result<TensorD> {
    block_forward(seq, params, heads).map(|(y, _)| y)
}

pub fn block_forward(seq: &TensorD, p: &BlockParams, heads: usize) -> Result<(TensorD, BlockCache)> {
    let n1 = layer_norm(seq, &p.ln1_g, &p.ln1_b, LN_EPS)?;
    let (att, attn) = mhsa_forward(&n1, &p.attn, heads)?;
    let h = seq.add(&att)?;
    let n2 = layer_norm(&h, &p.ln2_g, &p.ln2_b, LN_EPS)?;
    let f1 = linear(&n2, &p.ff1_w, &p.ff1_b)?;
    let a1 = gelu(&f1);
    let f2 = linear(&a1, &p.ff2_w, &p.ff2_b)?;
    let y = h.add(&f2)?;
    Ok((
        y,
        BlockCache {
            x: seq.clone(),
            n1,
            attn,
            h,
            n2,
            f1,
            a1,
        },
    ))
}

pub fn block_backward(
    p: &BlockParams,
    heads: usize,
    cache: &BlockCache,
    grad_out: &TensorD,
) -> Result<(TensorD, BlockParams)> {
    let ff2 = linear_backward(&cache.a1, &p.ff2_w, grad_out)?;
    let ga1 = gelu_backward(&cache.f1, &ff2.input)?;
    let ff1 = linear_backward(&cache.n2, &p.ff1_w, &ga1)?;
    let ln2 = layer_norm_backward(&cache.h, &p.ln2_g, LN_EPS, &ff1.input)?;
    let mut gh = grad_out.clone();
    gh.add_assign(&ln2.input)?;

    let (gn1, attn) = mhsa_backward(&cache.n1, &p.attn, heads, &cache.attn, &gh)?;
    let ln1 = layer_norm_backward(&cache.x, &p.ln1_g, LN_EPS, &gn1)?;
    let mut gx = gh;
    gx.add_assign(&ln1.input)?;
    Ok((
        gx,
        BlockParams {
            ln1_g: ln1.gamma,
            ln1_b: ln1.beta,
            ln2_g: ln2.gamma,
            ln2_b: ln2.beta,
            ff1_w: ff1.weight,
            ff1_b: ff1.bias,
            ff2_w: ff2.weight,
            ff2_b: ff2.bias,
            attn,
        },
    ))
}
