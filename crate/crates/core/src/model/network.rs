//! Forward pass with retained intermediates, and its hand-written adjoint.

use super::{ModelInput, WlannConfig, WlannParams};
use crate::dsp::{LogMelSpectrogram, MEL_BINS};
use crate::error::{Error, Result};
use crate::ndiff::activation::{gelu_backward, layer_norm_backward, sigmoid_backward};
use crate::ndiff::gru::{bigru_backward, bigru_forward, BigruCache};
use crate::ndiff::pool::{adaptive_avg_pool_time, adaptive_avg_pool_time_backward, mean_pool_backward};
use crate::ndiff::transformer::{block_backward, block_forward, BlockCache, LN_EPS};
use crate::ndiff::{
    conv1d, conv1d_backward, gelu, layer_norm, linear, linear_backward, mean_pool, sigmoid, Parameters, TensorD,
};

struct ConvTrace {
    input: TensorD,
    /// Convolution output transposed to `[T, C]`.
    pre_norm: TensorD,
    normed: TensorD,
}

pub struct WaveformTrace {
    layers: Vec<ConvTrace>,
    t_raw: usize,
    /// `[F, T_common, C_w / F]`
    pub wo: TensorD,
}

pub struct AstTrace {
    patches: TensorD,
    blocks: Vec<BlockCache>,
    pre_norm: TensorD,
    /// `[F, T_p, D]`
    pub ao: TensorD,
}

pub struct HeadTrace {
    fused: TensorD,
    freq_pooled: TensorD,
    gru: BigruCache,
    pub frame_features: TensorD,
    time_pooled: TensorD,
    pub probabilities: TensorD,
}

pub struct ForwardTrace {
    pub waveform: WaveformTrace,
    pub ast: AstTrace,
    pub head: HeadTrace,
}

impl ForwardTrace {
    pub fn probabilities(&self) -> &TensorD {
        &self.head.probabilities
    }

    pub fn fused_shape(&self) -> &[usize] {
        self.head.fused.shape()
    }
}

pub fn waveform_forward(waveform: &TensorD, p: &WlannParams, cfg: &WlannConfig) -> Result<WaveformTrace> {
    if waveform.shape() != [1, cfg.input_samples()] {
        return Err(Error::Config(format!(
            "waveform shape {:?}, config expects [1, {}]",
            waveform.shape(),
            cfg.input_samples()
        )));
    }
    let mut x = waveform.clone();
    let mut layers = Vec::with_capacity(p.cnn.len());
    for (layer, stride) in p.cnn.iter().zip(cfg.cnn.strides()) {
        let z = conv1d(&x, &layer.weight, &layer.bias, stride)?.transpose2()?;
        let n = layer_norm(&z, &layer.ln_g, &layer.ln_b, LN_EPS)?;
        let a = gelu(&n);
        let next = a.transpose2()?;
        layers.push(ConvTrace {
            input: x,
            pre_norm: z,
            normed: n,
        });
        x = next;
    }
    // x is [C_w, T_raw]; pool along time in [T, C] layout
    let co = x.transpose2()?;
    let t_raw = co.shape()[0];
    let pooled = adaptive_avg_pool_time(&co, cfg.t_common())?;
    let (f, t, cw) = (cfg.f_common, cfg.t_common(), cfg.cnn.out_channels());
    let g = cw / f;
    let src = pooled.values();
    let wo = TensorD::from_fn(&[f, t, g], |i| {
        let (fi, rest) = (i / (t * g), i % (t * g));
        let (ti, gi) = (rest / g, rest % g);
        src[ti * cw + gi * f + fi]
    });
    Ok(WaveformTrace { layers, t_raw, wo })
}

/// Raw waveform to `WO` with shape `[F, T_common, C_w / F]`.
pub fn waveform_branch(waveform: &TensorD, p: &WlannParams, cfg: &WlannConfig) -> Result<TensorD> {
    Ok(waveform_forward(waveform, p, cfg)?.wo)
}

/// Standardized 16x16 patches at stride 8, one row per grid cell in
/// frequency-major order, each flattened mel-major.
pub fn extract_patches(spec: &LogMelSpectrogram, cfg: &WlannConfig) -> Result<TensorD> {
    let (ps, st) = (cfg.ast.patch, cfg.ast.patch_stride);
    if spec.n_mels() != MEL_BINS {
        return Err(Error::Precondition(format!(
            "spectrogram has {} mel bins, expected {MEL_BINS}",
            spec.n_mels()
        )));
    }
    if spec.n_frames() < ps {
        return Err(Error::Precondition(format!(
            "spectrogram has {} frames, fewer than one {ps}-frame patch",
            spec.n_frames()
        )));
    }
    let nf = (MEL_BINS - ps) / st + 1;
    let nt = (spec.n_frames() - ps) / st + 1;
    let (mean, std) = (cfg.ast.norm_mean, cfg.ast.norm_std);
    let area = ps * ps;
    Ok(TensorD::from_fn(&[nf * nt, area], |i| {
        let (cell, k) = (i / area, i % area);
        let (fi, ti) = (cell / nt, cell % nt);
        let (a, b) = (k / ps, k % ps);
        (spec.get(fi * st + a, ti * st + b) - mean) / std
    }))
}

pub fn ast_forward(spec: &LogMelSpectrogram, p: &WlannParams, cfg: &WlannConfig) -> Result<AstTrace> {
    let patches = extract_patches(spec, cfg)?;
    if patches.shape()[0] != p.ast.pos.shape()[0] {
        return Err(Error::Config(format!(
            "{} patches but {} positional embeddings",
            patches.shape()[0],
            p.ast.pos.shape()[0]
        )));
    }
    let mut x = linear(&patches, &p.ast.patch_w, &p.ast.patch_b)?.add(&p.ast.pos)?;
    let mut blocks = Vec::with_capacity(p.ast.blocks.len());
    for b in &p.ast.blocks {
        let (y, cache) = block_forward(&x, b, cfg.ast.heads)?;
        blocks.push(cache);
        x = y;
    }
    let out = layer_norm(&x, &p.ast.ln_g, &p.ast.ln_b, LN_EPS)?;
    let nf = cfg.f_common;
    let nt = out.shape()[0] / nf;
    let ao = out.reshape(&[nf, nt, cfg.ast.embed_dim])?;
    Ok(AstTrace {
        patches,
        blocks,
        pre_norm: x,
        ao,
    })
}

/// Log-mel spectrogram to `AO` with shape `[F, T_p, D]`.
pub fn ast_branch(spec: &LogMelSpectrogram, p: &WlannParams, cfg: &WlannConfig) -> Result<TensorD> {
    Ok(ast_forward(spec, p, cfg)?.ao)
}

/// Channel concatenation, `AO` channels first.
pub fn fuse(wo: &TensorD, ao: &TensorD) -> Result<TensorD> {
    if wo.ndim() != 3 || ao.ndim() != 3 || wo.shape()[..2] != ao.shape()[..2] {
        return Err(Error::Shape(format!(
            "fuse: WO {:?} and AO {:?} differ in the F x T grid",
            wo.shape(),
            ao.shape()
        )));
    }
    let (f, t, cw, ca) = (wo.shape()[0], wo.shape()[1], wo.shape()[2], ao.shape()[2]);
    let c = ca + cw;
    let mut out = Vec::with_capacity(f * t * c);
    for cell in 0..f * t {
        out.extend_from_slice(&ao.values()[cell * ca..][..ca]);
        out.extend_from_slice(&wo.values()[cell * cw..][..cw]);
    }
    TensorD::new(vec![f, t, c], out)
}

fn split_fused(g: &TensorD, ca: usize) -> Result<(TensorD, TensorD)> {
    let (f, t, c) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let cw = c - ca;
    let mut ga = Vec::with_capacity(f * t * ca);
    let mut gw = Vec::with_capacity(f * t * cw);
    for row in g.values().chunks(c) {
        ga.extend_from_slice(&row[..ca]);
        gw.extend_from_slice(&row[ca..]);
    }
    Ok((TensorD::new(vec![f, t, ca], ga)?, TensorD::new(vec![f, t, cw], gw)?))
}

pub fn head_forward(fused: TensorD, p: &WlannParams) -> Result<HeadTrace> {
    let freq_pooled = mean_pool(&fused, 0)?;
    let (frame_features, gru) = bigru_forward(&freq_pooled, &p.gru_fwd, &p.gru_bwd)?;
    let time_pooled = mean_pool(&frame_features, 0)?;
    let width = time_pooled.len();
    let time_pooled = time_pooled.reshape(&[1, width])?;
    let logits = linear(&time_pooled, &p.head_w, &p.head_b)?;
    let n = logits.len();
    let probabilities = sigmoid(&logits).reshape(&[n])?;
    Ok(HeadTrace {
        fused,
        freq_pooled,
        gru,
        frame_features,
        time_pooled,
        probabilities,
    })
}

/// Frequency mean-pool, Bi-GRU, time mean-pool, linear and sigmoid. Returns
/// per-class scores and the `[T, 2H]` frame features.
pub fn classify_head(fused: &TensorD, p: &WlannParams) -> Result<(TensorD, TensorD)> {
    let h = head_forward(fused.clone(), p)?;
    Ok((h.probabilities, h.frame_features))
}

pub fn forward_trace(input: &ModelInput, p: &WlannParams, cfg: &WlannConfig) -> Result<ForwardTrace> {
    let waveform = waveform_forward(&input.waveform, p, cfg)?;
    let ast = ast_forward(&input.spec, p, cfg)?;
    let head = head_forward(fuse(&waveform.wo, &ast.ao)?, p)?;
    if !head.probabilities.all_finite() {
        return Err(Error::Numeric("non-finite class scores".into()));
    }
    Ok(ForwardTrace { waveform, ast, head })
}

/// Per-class sigmoid scores.
pub fn forward(input: &ModelInput, p: &WlannParams, cfg: &WlannConfig) -> Result<TensorD> {
    Ok(forward_trace(input, p, cfg)?.head.probabilities)
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the class scores.
pub fn backward(trace: &ForwardTrace, p: &WlannParams, cfg: &WlannConfig, grad_probs: &TensorD) -> Result<WlannParams> {
    let mut g = p.zeros_like();
    let h = &trace.head;

    // head
    let probs = h.probabilities.clone().reshape(&[1, cfg.classes])?;
    let g_logits = sigmoid_backward(&probs, &grad_probs.clone().reshape(&[1, cfg.classes])?)?;
    let lin = linear_backward(&h.time_pooled, &p.head_w, &g_logits)?;
    g.head_w = lin.weight;
    g.head_b = lin.bias;
    let width = lin.input.len();
    let g_frames = mean_pool_backward(h.frame_features.shape(), 0, &lin.input.reshape(&[width])?)?;
    let gru = bigru_backward(&h.freq_pooled, &p.gru_fwd, &p.gru_bwd, &h.gru, &g_frames)?;
    g.gru_fwd = gru.fwd;
    g.gru_bwd = gru.bwd;
    let g_fused = mean_pool_backward(h.fused.shape(), 0, &gru.seq)?;
    let (g_ao, g_wo) = split_fused(&g_fused, cfg.ast.embed_dim)?;

    // spectrogram branch
    let a = &trace.ast;
    let n = a.pre_norm.shape()[0];
    let ln = layer_norm_backward(
        &a.pre_norm,
        &p.ast.ln_g,
        LN_EPS,
        &g_ao.reshape(&[n, cfg.ast.embed_dim])?,
    )?;
    g.ast.ln_g = ln.gamma;
    g.ast.ln_b = ln.beta;
    let mut gx = ln.input;
    for (i, cache) in a.blocks.iter().enumerate().rev() {
        let (gin, gb) = block_backward(&p.ast.blocks[i], cfg.ast.heads, cache, &gx)?;
        g.ast.blocks[i] = gb;
        gx = gin;
    }
    let emb = linear_backward(&a.patches, &p.ast.patch_w, &gx)?;
    g.ast.patch_w = emb.weight;
    g.ast.patch_b = emb.bias;
    g.ast.pos = gx;

    // waveform branch
    let w = &trace.waveform;
    let (f, t, gr) = (g_wo.shape()[0], g_wo.shape()[1], g_wo.shape()[2]);
    let cw = f * gr;
    let mut g_pooled = vec![0.0; t * cw];
    for (i, &v) in g_wo.values().iter().enumerate() {
        let (fi, rest) = (i / (t * gr), i % (t * gr));
        let (ti, gi) = (rest / gr, rest % gr);
        g_pooled[ti * cw + gi * f + fi] = v;
    }
    let mut ga = adaptive_avg_pool_time_backward(w.t_raw, &TensorD::new(vec![t, cw], g_pooled)?)?;
    let strides = cfg.cnn.strides();
    for (i, layer) in w.layers.iter().enumerate().rev() {
        let gn = gelu_backward(&layer.normed, &ga)?;
        let ln = layer_norm_backward(&layer.pre_norm, &p.cnn[i].ln_g, LN_EPS, &gn)?;
        let conv = conv1d_backward(
            &layer.input,
            &p.cnn[i].weight,
            strides[i],
            &ln.input.transpose2()?,
            i > 0,
        )?;
        g.cnn[i].weight = conv.weight;
        g.cnn[i].bias = conv.bias;
        g.cnn[i].ln_g = ln.gamma;
        g.cnn[i].ln_b = ln.beta;
        if let Some(gi) = conv.input {
            ga = gi.transpose2()?;
        }
    }
    Ok(g)
}
