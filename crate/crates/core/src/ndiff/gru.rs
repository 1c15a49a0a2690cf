//! Gated recurrent unit and its bidirectional wrapper.
//!
//! Gates follow the usual formulation:
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r * h) + b_h)
//! h' = (1 - z) * h + z * h~
//! ```

use super::activation::sigmoid_scalar;
use super::conv::dot;
use super::TensorD;
use crate::error::{Error, Result};
use crate::impl_parameters;

#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub w_z: TensorD,
    pub u_z: TensorD,
    pub b_z: TensorD,
    pub w_r: TensorD,
    pub u_r: TensorD,
    pub b_r: TensorD,
    pub w_h: TensorD,
    pub u_h: TensorD,
    pub b_h: TensorD,
}

impl_parameters!(GruCellParams {
    w_z,
    u_z,
    b_z,
    w_r,
    u_r,
    b_r,
    w_h,
    u_h,
    b_h
});

impl GruCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || TensorD::zeros(&[hidden, input]);
        let u = || TensorD::zeros(&[hidden, hidden]);
        let b = || TensorD::zeros(&[hidden]);
        Self {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn input(&self) -> usize {
        self.w_z.last_dim()
    }

    fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden(), self.input());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|t| t.shape() == [h, d])
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|t| t.shape() == [h, h])
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|t| t.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "inconsistent GRU parameter shapes for input {d}, hidden {h}"
            )))
        }
    }
}

/// Gate activations of one step, needed for the adjoint.
#[derive(Debug, Clone)]
pub struct GruStep {
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

fn affine(w: &TensorD, x: &[f64], u: &TensorD, h: &[f64], b: &TensorD) -> Vec<f64> {
    let (hd, d) = (b.len(), x.len());
    (0..hd)
        .map(|i| b.values()[i] + dot(&w.values()[i * d..][..d], x) + dot(&u.values()[i * hd..][..hd], h))
        .collect()
}

fn step_forward(x: &[f64], h: &[f64], p: &GruCellParams) -> (Vec<f64>, GruStep) {
    let z: Vec<f64> = affine(&p.w_z, x, &p.u_z, h, &p.b_z)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let r: Vec<f64> = affine(&p.w_r, x, &p.u_r, h, &p.b_r)
        .into_iter()
        .map(sigmoid_scalar)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(&p.w_h, x, &p.u_h, &rh, &p.b_h)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let out = (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
    (out, GruStep { z, r, cand })
}

// Accumulates parameter gradients into `gp`; returns (dx, dh_prev).
fn step_backward(
    x: &[f64],
    h: &[f64],
    p: &GruCellParams,
    st: &GruStep,
    gout: &[f64],
    gp: &mut GruCellParams,
) -> (Vec<f64>, Vec<f64>) {
    let (hd, d) = (h.len(), x.len());
    let mut gx = vec![0.0; d];
    let mut gh = vec![0.0; hd];
    let mut ga_z = vec![0.0; hd];
    let mut ga_h = vec![0.0; hd];
    for i in 0..hd {
        let gz = gout[i] * (st.cand[i] - h[i]);
        let gc = gout[i] * st.z[i];
        gh[i] += gout[i] * (1.0 - st.z[i]);
        ga_h[i] = gc * (1.0 - st.cand[i] * st.cand[i]);
        ga_z[i] = gz * st.z[i] * (1.0 - st.z[i]);
    }
    let rh: Vec<f64> = st.r.iter().zip(h).map(|(a, b)| a * b).collect();

    // candidate path
    let mut g_rh = vec![0.0; hd];
    acc_affine(
        &p.w_h,
        &p.u_h,
        x,
        &rh,
        &ga_h,
        &mut gx,
        &mut g_rh,
        &mut gp.w_h,
        &mut gp.u_h,
        &mut gp.b_h,
    );
    let mut ga_r = vec![0.0; hd];
    for i in 0..hd {
        gh[i] += g_rh[i] * st.r[i];
        let gr = g_rh[i] * h[i];
        ga_r[i] = gr * st.r[i] * (1.0 - st.r[i]);
    }
    acc_affine(
        &p.w_r,
        &p.u_r,
        x,
        h,
        &ga_r,
        &mut gx,
        &mut gh,
        &mut gp.w_r,
        &mut gp.u_r,
        &mut gp.b_r,
    );
    acc_affine(
        &p.w_z,
        &p.u_z,
        x,
        h,
        &ga_z,
        &mut gx,
        &mut gh,
        &mut gp.w_z,
        &mut gp.u_z,
        &mut gp.b_z,
    );
    (gx, gh)
}

#[allow(clippy::too_many_arguments)]
fn acc_affine(
    w: &TensorD,
    u: &TensorD,
    x: &[f64],
    h: &[f64],
    ga: &[f64],
    gx: &mut [f64],
    gh: &mut [f64],
    gw: &mut TensorD,
    gu: &mut TensorD,
    gb: &mut TensorD,
) {
    let (hd, d) = (ga.len(), x.len());
    for i in 0..hd {
        let g = ga[i];
        gb.values_mut()[i] += g;
        let wr = &w.values()[i * d..][..d];
        let gwr = &mut gw.values_mut()[i * d..][..d];
        for j in 0..d {
            gwr[j] += g * x[j];
            gx[j] += g * wr[j];
        }
        let ur = &u.values()[i * hd..][..hd];
        let gur = &mut gu.values_mut()[i * hd..][..hd];
        for j in 0..hd {
            gur[j] += g * h[j];
            gh[j] += g * ur[j];
        }
    }
}

fn check_step(x: &TensorD, h_prev: &TensorD, params: &GruCellParams) -> Result<()> {
    params.validate()?;
    if x.len() != params.input() || h_prev.len() != params.hidden() {
        return Err(Error::Shape(format!(
            "gru_cell: x {:?} / h {:?} vs input {} hidden {}",
            x.shape(),
            h_prev.shape(),
            params.input(),
            params.hidden()
        )));
    }
    Ok(())
}

pub fn gru_cell(x: &TensorD, h_prev: &TensorD, params: &GruCellParams) -> Result<TensorD> {
    check_step(x, h_prev, params)?;
    let (h, _) = step_forward(x.values(), h_prev.values(), params);
    Ok(TensorD::vector(h))
}

#[derive(Debug, Clone)]
pub struct GruCellGrads {
    pub x: TensorD,
    pub h_prev: TensorD,
    pub params: GruCellParams,
}

pub fn gru_cell_backward(
    x: &TensorD,
    h_prev: &TensorD,
    params: &GruCellParams,
    grad_out: &TensorD,
) -> Result<GruCellGrads> {
    check_step(x, h_prev, params)?;
    let (_, st) = step_forward(x.values(), h_prev.values(), params);
    let mut gp = params.zeros_like_shape();
    let (gx, gh) = step_backward(x.values(), h_prev.values(), params, &st, grad_out.values(), &mut gp);
    Ok(GruCellGrads {
        x: TensorD::vector(gx),
        h_prev: TensorD::vector(gh),
        params: gp,
    })
}

impl GruCellParams {
    fn zeros_like_shape(&self) -> Self {
        Self::zeros(self.input(), self.hidden())
    }
}

/// Hidden trajectory of one direction; `states[t]` is the state after step t.
#[derive(Debug, Clone)]
pub struct GruTrace {
    states: Vec<Vec<f64>>,
    steps: Vec<GruStep>,
}

fn run_direction(seq: &[f64], t: usize, d: usize, p: &GruCellParams, reverse: bool) -> GruTrace {
    let hd = p.hidden();
    let mut h = vec![0.0; hd];
    let mut states = vec![Vec::new(); t];
    let mut steps = Vec::with_capacity(t);
    let order: Vec<usize> = if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    };
    let mut step_slots: Vec<Option<GruStep>> = vec![None; t];
    for &i in &order {
        let (next, st) = step_forward(&seq[i * d..][..d], &h, p);
        step_slots[i] = Some(st);
        states[i] = next.clone();
        h = next;
    }
    steps.extend(step_slots.into_iter().map(|s| s.expect("every step visited")));
    GruTrace { states, steps }
}

#[derive(Debug, Clone)]
pub struct BigruCache {
    fwd: GruTrace,
    bwd: GruTrace,
}

pub fn bigru(seq: &TensorD, fwd: &GruCellParams, bwd: &GruCellParams) -> Result<TensorD> {
    bigru_forward(seq, fwd, bwd).map(|(y, _)| y)
}

/// Output row t is `[h_fwd(t) ; h_bwd(t)]`, both directions starting from zero.
pub fn bigru_forward(seq: &TensorD, fwd: &GruCellParams, bwd: &GruCellParams) -> Result<(TensorD, BigruCache)> {
    fwd.validate()?;
    bwd.validate()?;
    if seq.ndim() != 2 || seq.shape()[1] != fwd.input() || fwd.input() != bwd.input() {
        return Err(Error::Shape(format!(
            "bigru: sequence {:?} for input width {}",
            seq.shape(),
            fwd.input()
        )));
    }
    let (t, d) = (seq.shape()[0], seq.shape()[1]);
    if t == 0 {
        return Err(Error::Precondition("bigru: empty sequence".into()));
    }
    let ftr = run_direction(seq.values(), t, d, fwd, false);
    let btr = run_direction(seq.values(), t, d, bwd, true);
    let (hf, hb) = (fwd.hidden(), bwd.hidden());
    let mut out = Vec::with_capacity(t * (hf + hb));
    for i in 0..t {
        out.extend_from_slice(&ftr.states[i]);
        out.extend_from_slice(&btr.states[i]);
    }
    Ok((TensorD::new(vec![t, hf + hb], out)?, BigruCache { fwd: ftr, bwd: btr }))
}

#[derive(Debug, Clone)]
pub struct BigruGrads {
    pub seq: TensorD,
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
}

pub fn bigru_backward(
    seq: &TensorD,
    fwd: &GruCellParams,
    bwd: &GruCellParams,
    cache: &BigruCache,
    grad_out: &TensorD,
) -> Result<BigruGrads> {
    let (t, d) = (seq.shape()[0], seq.shape()[1]);
    let (hf, hb) = (fwd.hidden(), bwd.hidden());
    if grad_out.shape() != [t, hf + hb] {
        return Err(Error::Shape(format!(
            "bigru_backward: grad {:?}, expected [{t}, {}]",
            grad_out.shape(),
            hf + hb
        )));
    }
    let g = grad_out.values();
    let x = seq.values();
    let mut gx = vec![0.0; t * d];
    let mut gpf = fwd.zeros_like_shape();
    let mut gpb = bwd.zeros_like_shape();
    let zf = vec![0.0; hf];
    let zb = vec![0.0; hb];

    // forward direction: walk time backwards
    let mut carry = vec![0.0; hf];
    for i in (0..t).rev() {
        let mut gh: Vec<f64> = g[i * (hf + hb)..][..hf].to_vec();
        gh.iter_mut().zip(&carry).for_each(|(a, b)| *a += b);
        let h_prev = if i == 0 { &zf } else { &cache.fwd.states[i - 1] };
        let (gxi, ghp) = step_backward(&x[i * d..][..d], h_prev, fwd, &cache.fwd.steps[i], &gh, &mut gpf);
        gx[i * d..][..d].iter_mut().zip(&gxi).for_each(|(a, b)| *a += b);
        carry = ghp;
    }
    // backward direction: its recurrence runs right to left, so unroll left to right
    let mut carry = vec![0.0; hb];
    for i in 0..t {
        let mut gh: Vec<f64> = g[i * (hf + hb) + hf..][..hb].to_vec();
        gh.iter_mut().zip(&carry).for_each(|(a, b)| *a += b);
        let h_prev = if i + 1 == t { &zb } else { &cache.bwd.states[i + 1] };
        let (gxi, ghp) = step_backward(&x[i * d..][..d], h_prev, bwd, &cache.bwd.steps[i], &gh, &mut gpb);
        gx[i * d..][..d].iter_mut().zip(&gxi).for_each(|(a, b)| *a += b);
        carry = ghp;
    }
    Ok(BigruGrads {
        seq: TensorD::new(vec![t, d], gx)?,
        fwd: gpf,
        bwd: gpb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Parameters;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(d: usize, h: usize, rng: &mut ChaCha8Rng) -> GruCellParams {
        let mut p = GruCellParams::zeros(d, h);
        p.visit_mut("", &mut |_, t| {
            t.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0))
        });
        p
    }

    #[test]
    fn closed_update_gate_carries_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = random_cell(3, 4, &mut rng);
        p.b_z = TensorD::full(&[4], -60.0);
        let x = TensorD::vector(vec![0.3, -0.2, 0.9]);
        let h = TensorD::vector(vec![0.5, -0.5, 0.1, 0.9]);
        let out = gru_cell(&x, &h, &p).unwrap();
        for (a, b) in out.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_bigru_is_two_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_cell(3, 2, &mut rng);
        let b = random_cell(3, 2, &mut rng);
        let x = TensorD::from_fn(&[1, 3], |_| rng.gen_range(-1.0..1.0));
        let y = bigru(&x, &f, &b).unwrap();
        let xv = TensorD::vector(x.values().to_vec());
        let h0 = TensorD::zeros(&[2]);
        let mut expect = gru_cell(&xv, &h0, &f).unwrap().into_values();
        expect.extend(gru_cell(&xv, &h0, &b).unwrap().into_values());
        assert_eq!(y.values(), expect.as_slice());
    }

    #[test]
    fn reversing_input_swaps_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (t, d, h) = (6, 3, 4);
        let f = random_cell(d, h, &mut rng);
        let b = random_cell(d, h, &mut rng);
        let x = TensorD::from_fn(&[t, d], |_| rng.gen_range(-1.0..1.0));
        let mut xr = vec![0.0; t * d];
        for i in 0..t {
            xr[i * d..][..d].copy_from_slice(&x.values()[(t - 1 - i) * d..][..d]);
        }
        let xr = TensorD::new(vec![t, d], xr).unwrap();
        // Swapping both the input order and the parameter roles mirrors the output.
        let y = bigru(&x, &f, &b).unwrap();
        let yr = bigru(&xr, &b, &f).unwrap();
        for i in 0..t {
            let row = &y.values()[i * 2 * h..][..2 * h];
            let rrow = &yr.values()[(t - 1 - i) * 2 * h..][..2 * h];
            assert_eq!(&row[..h], &rrow[h..]);
            assert_eq!(&row[h..], &rrow[..h]);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let f = GruCellParams::zeros(2, 2);
        let x = TensorD::zeros(&[0, 2]);
        assert!(matches!(bigru(&x, &f, &f), Err(Error::Precondition(_))));
    }
}
