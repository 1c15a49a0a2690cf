use crate::model::{TrainConfig, WlannParams};
use crate::ndiff::Parameters;

/// Adam moment estimates, stored in the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: WlannParams,
    pub v: WlannParams,
    pub step: u64,
}

fn flatten(p: &WlannParams) -> Vec<f64> {
    p.named().into_iter().flat_map(|(_, t)| t.values().to_vec()).collect()
}

fn write_back(p: &mut WlannParams, flat: &[f64]) {
    let mut off = 0;
    p.visit_mut("", &mut |_, t| {
        let n = t.len();
        t.values_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    });
}

impl AdamState {
    pub fn new(params: &WlannParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Parameters and moments are rounded to
    /// 32-bit floats afterwards so a checkpointed state resumes bit-exactly.
    pub fn update(&mut self, params: &mut WlannParams, grads: &WlannParams, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let g = flatten(grads);
        let mut m = flatten(&self.m);
        let mut v = flatten(&self.v);
        let mut w = flatten(params);
        for k in 0..w.len() {
            m[k] = (b1 * m[k] + (1.0 - b1) * g[k]) as f32 as f64;
            v[k] = (b2 * v[k] + (1.0 - b2) * g[k] * g[k]) as f32 as f64;
            let step = cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.adam_eps);
            w[k] = (w[k] - step) as f32 as f64;
        }
        write_back(&mut self.m, &m);
        write_back(&mut self.v, &v);
        write_back(params, &w);
    }
}

pub fn global_norm(grads: &WlannParams) -> f64 {
    grads
        .named()
        .iter()
        .flat_map(|(_, t)| t.values())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut WlannParams, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        grads.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v *= k));
    }
    norm
}
