//! Finite-difference sweep over every differentiable primitive.
//!
//! Each primitive is wrapped as `L = sum(c * op(inputs))` with a fixed random
//! cotangent `c`, so every output element contributes to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::*;
use super::attention::{mhsa_backward, mhsa_forward, MhsaParams};
use super::conv::{conv1d, conv1d_backward};
use super::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use super::gru::{bigru_backward, bigru_forward, gru_cell, gru_cell_backward, GruCellParams};
use super::linear::{linear, linear_backward};
use super::pool::{adaptive_avg_pool_time, adaptive_avg_pool_time_backward, mean_pool, mean_pool_backward};
use super::transformer::{block_backward, block_forward, BlockParams};
use super::{Parameters, TensorD};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

type Forward<'a> = Box<dyn Fn(&[TensorD]) -> Result<TensorD> + 'a>;
type Backward<'a> = Box<dyn Fn(&[TensorD], &TensorD) -> Result<Vec<TensorD>> + 'a>;

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> TensorD {
    TensorD::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn check_op(
    op: &'static str,
    inputs: Vec<(String, TensorD)>,
    forward: Forward<'_>,
    backward: Backward<'_>,
    rng: &mut ChaCha8Rng,
    opts: GradCheckOptions,
) -> Result<OpCheck> {
    let (names, mut values): (Vec<String>, Vec<TensorD>) = inputs.into_iter().unzip();
    let out = forward(&values)?;
    let cot = rand_tensor(out.shape(), 1.0, rng);
    let grads = backward(&values, &cot)?;
    for (v, g) in values.iter_mut().zip(&grads) {
        v.set_requires_grad(true);
        v.accumulate_grad(g.values())?;
    }
    let objective = |ts: &[TensorD]| -> Result<f64> {
        let y = forward(ts)?;
        Ok(y.values().iter().zip(cot.values()).map(|(a, b)| a * b).sum())
    };
    let report = grad_check(objective, &values, &names, opts)?;
    Ok(OpCheck { op, report })
}

fn named(prefix: &str, p: &impl Parameters) -> Vec<(String, TensorD)> {
    p.named()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
}

fn rebuild<P: Parameters + Clone>(template: &P, flat: &[TensorD]) -> P {
    let mut p = template.clone();
    let mut i = 0;
    p.visit_mut("", &mut |_, t| {
        *t = flat[i].clone();
        i += 1;
    });
    p
}

fn flatten(p: &impl Parameters) -> Vec<TensorD> {
    p.named().into_iter().map(|(_, t)| t.clone()).collect()
}

fn randomize<P: Parameters>(mut p: P, scale: f64, rng: &mut ChaCha8Rng) -> P {
    p.visit_mut("", &mut |_, t| {
        t.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-scale..scale))
    });
    p
}

/// Runs the gradient check on a small random instance of every primitive.
pub fn run_primitive_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // conv1d
    let x = rand_tensor(&[2, 11], 1.0, &mut rng);
    let w = rand_tensor(&[3, 2, 4], 0.5, &mut rng);
    let b = rand_tensor(&[3], 0.5, &mut rng);
    out.push(check_op(
        "conv1d",
        vec![("input".into(), x), ("weight".into(), w), ("bias".into(), b)],
        Box::new(|t| conv1d(&t[0], &t[1], &t[2], 2)),
        Box::new(|t, g| {
            let r = conv1d_backward(&t[0], &t[1], 2, g, true)?;
            Ok(vec![r.input.expect("requested"), r.weight, r.bias])
        }),
        &mut rng,
        opts,
    )?);

    // linear
    let x = rand_tensor(&[2, 3, 4], 1.0, &mut rng);
    let w = rand_tensor(&[5, 4], 0.5, &mut rng);
    let b = rand_tensor(&[5], 0.5, &mut rng);
    out.push(check_op(
        "linear",
        vec![("input".into(), x), ("weight".into(), w), ("bias".into(), b)],
        Box::new(|t| linear(&t[0], &t[1], &t[2])),
        Box::new(|t, g| {
            let r = linear_backward(&t[0], &t[1], g)?;
            Ok(vec![r.input, r.weight, r.bias])
        }),
        &mut rng,
        opts,
    )?);

    // relu: keep inputs away from the kink
    let x = TensorD::from_fn(&[12], |i| {
        let m = 0.1 + (i as f64) * 0.07;
        if i % 2 == 0 {
            m
        } else {
            -m
        }
    });
    out.push(check_op(
        "relu",
        vec![("input".into(), x)],
        Box::new(|t| Ok(relu(&t[0]))),
        Box::new(|t, g| Ok(vec![relu_backward(&t[0], g)?])),
        &mut rng,
        opts,
    )?);

    let x = rand_tensor(&[3, 4], 3.0, &mut rng);
    out.push(check_op(
        "gelu",
        vec![("input".into(), x.clone())],
        Box::new(|t| Ok(gelu(&t[0]))),
        Box::new(|t, g| Ok(vec![gelu_backward(&t[0], g)?])),
        &mut rng,
        opts,
    )?);
    out.push(check_op(
        "sigmoid",
        vec![("input".into(), x.clone())],
        Box::new(|t| Ok(sigmoid(&t[0]))),
        Box::new(|t, g| Ok(vec![sigmoid_backward(&sigmoid(&t[0]), g)?])),
        &mut rng,
        opts,
    )?);
    out.push(check_op(
        "tanh",
        vec![("input".into(), x.clone())],
        Box::new(|t| Ok(tanh(&t[0]))),
        Box::new(|t, g| Ok(vec![tanh_backward(&tanh(&t[0]), g)?])),
        &mut rng,
        opts,
    )?);
    for axis in [0usize, 1] {
        out.push(check_op(
            if axis == 0 {
                "softmax(axis=0)"
            } else {
                "softmax(axis=1)"
            },
            vec![("input".into(), x.clone())],
            Box::new(move |t| softmax(&t[0], axis)),
            Box::new(move |t, g| Ok(vec![softmax_backward(&softmax(&t[0], axis)?, g, axis)?])),
            &mut rng,
            opts,
        )?);
    }

    let x = rand_tensor(&[3, 6], 2.0, &mut rng);
    let gm = rand_tensor(&[6], 1.0, &mut rng);
    let bt = rand_tensor(&[6], 1.0, &mut rng);
    out.push(check_op(
        "layer_norm",
        vec![("input".into(), x), ("gamma".into(), gm), ("beta".into(), bt)],
        Box::new(|t| layer_norm(&t[0], &t[1], &t[2], 1e-5)),
        Box::new(|t, g| {
            let r = layer_norm_backward(&t[0], &t[1], 1e-5, g)?;
            Ok(vec![r.input, r.gamma, r.beta])
        }),
        &mut rng,
        opts,
    )?);

    let x = rand_tensor(&[3, 4, 5], 1.0, &mut rng);
    for axis in 0..3usize {
        let shape = x.shape().to_vec();
        out.push(check_op(
            ["mean_pool(axis=0)", "mean_pool(axis=1)", "mean_pool(axis=2)"][axis],
            vec![("input".into(), x.clone())],
            Box::new(move |t| mean_pool(&t[0], axis)),
            Box::new(move |_, g| Ok(vec![mean_pool_backward(&shape, axis, g)?])),
            &mut rng,
            opts,
        )?);
    }

    let x = rand_tensor(&[13, 3], 1.0, &mut rng);
    out.push(check_op(
        "adaptive_avg_pool",
        vec![("input".into(), x)],
        Box::new(|t| adaptive_avg_pool_time(&t[0], 5)),
        Box::new(|_, g| Ok(vec![adaptive_avg_pool_time_backward(13, g)?])),
        &mut rng,
        opts,
    )?);

    // multi-head self-attention
    let heads = 2;
    let attn = randomize(MhsaParams::zeros(4), 0.8, &mut rng);
    let x = rand_tensor(&[3, 4], 1.0, &mut rng);
    let mut inputs = vec![("input".to_string(), x)];
    inputs.extend(named("attn", &attn));
    let tmpl = attn.clone();
    let tmpl2 = attn.clone();
    out.push(check_op(
        "multi_head_self_attention",
        inputs,
        Box::new(move |t| mhsa_forward(&t[0], &rebuild(&tmpl, &t[1..]), heads).map(|r| r.0)),
        Box::new(move |t, g| {
            let p = rebuild(&tmpl2, &t[1..]);
            let (_, cache) = mhsa_forward(&t[0], &p, heads)?;
            let (gx, gp) = mhsa_backward(&t[0], &p, heads, &cache, g)?;
            let mut v = vec![gx];
            v.extend(flatten(&gp));
            Ok(v)
        }),
        &mut rng,
        opts,
    )?);

    // transformer block
    let block = randomize(BlockParams::zeros(4), 0.5, &mut rng);
    let x = rand_tensor(&[3, 4], 1.0, &mut rng);
    let mut inputs = vec![("input".to_string(), x)];
    inputs.extend(named("block", &block));
    let tmpl = block.clone();
    let tmpl2 = block.clone();
    out.push(check_op(
        "transformer_block",
        inputs,
        Box::new(move |t| block_forward(&t[0], &rebuild(&tmpl, &t[1..]), heads).map(|r| r.0)),
        Box::new(move |t, g| {
            let p = rebuild(&tmpl2, &t[1..]);
            let (_, cache) = block_forward(&t[0], &p, heads)?;
            let (gx, gp) = block_backward(&p, heads, &cache, g)?;
            let mut v = vec![gx];
            v.extend(flatten(&gp));
            Ok(v)
        }),
        &mut rng,
        opts,
    )?);

    // GRU cell
    let cell = randomize(GruCellParams::zeros(3, 4), 0.8, &mut rng);
    let x = rand_tensor(&[3], 1.0, &mut rng);
    let h = rand_tensor(&[4], 0.9, &mut rng);
    let mut inputs = vec![("x".to_string(), x), ("h_prev".to_string(), h)];
    inputs.extend(named("cell", &cell));
    let tmpl = cell.clone();
    let tmpl2 = cell.clone();
    out.push(check_op(
        "gru_cell",
        inputs,
        Box::new(move |t| gru_cell(&t[0], &t[1], &rebuild(&tmpl, &t[2..]))),
        Box::new(move |t, g| {
            let r = gru_cell_backward(&t[0], &t[1], &rebuild(&tmpl2, &t[2..]), g)?;
            let mut v = vec![r.x, r.h_prev];
            v.extend(flatten(&r.params));
            Ok(v)
        }),
        &mut rng,
        opts,
    )?);

    // bidirectional GRU
    let fwd = randomize(GruCellParams::zeros(3, 2), 0.8, &mut rng);
    let bwd = randomize(GruCellParams::zeros(3, 2), 0.8, &mut rng);
    let nf = fwd.named().len();
    let x = rand_tensor(&[5, 3], 1.0, &mut rng);
    let mut inputs = vec![("seq".to_string(), x)];
    inputs.extend(named("fwd", &fwd));
    inputs.extend(named("bwd", &bwd));
    let (tf, tb) = (fwd.clone(), bwd.clone());
    let (tf2, tb2) = (fwd.clone(), bwd.clone());
    out.push(check_op(
        "bigru",
        inputs,
        Box::new(move |t| {
            let f = rebuild(&tf, &t[1..1 + nf]);
            let b = rebuild(&tb, &t[1 + nf..]);
            bigru_forward(&t[0], &f, &b).map(|r| r.0)
        }),
        Box::new(move |t, g| {
            let f = rebuild(&tf2, &t[1..1 + nf]);
            let b = rebuild(&tb2, &t[1 + nf..]);
            let (_, cache) = bigru_forward(&t[0], &f, &b)?;
            let r = bigru_backward(&t[0], &f, &b, &cache, g)?;
            let mut v = vec![r.seq];
            v.extend(flatten(&r.fwd));
            v.extend(flatten(&r.bwd));
            Ok(v)
        }),
        &mut rng,
        opts,
    )?);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        let checks = run_primitive_suite(2024, GradCheckOptions::default()).unwrap();
        assert!(checks.len() >= 15);
        for c in &checks {
            for t in &c.report.tensors {
                assert!(
                    t.max_rel_err < 1e-4,
                    "{} / {}: rel err {:.3e}",
                    c.op,
                    t.name,
                    t.max_rel_err
                );
            }
        }
    }
}
