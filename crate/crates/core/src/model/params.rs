use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::WlannConfig;
use crate::impl_parameters;
use crate::ndiff::{tensor_join, BlockParams, GruCellParams, Parameters, TensorD};

/// Standard deviation of the truncated normal used for weights and
/// embeddings.
pub const INIT_STD: f64 = 0.02;
pub const INIT_SCHEME: &str =
    "trunc_normal(0.02) weights+embeddings, zero biases, unit layer-norm gain, normal(1/sqrt(H)) GRU";

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// `[C_out, C_in, K]`
    pub weight: TensorD,
    pub bias: TensorD,
    /// Layer norm over channels.
    pub ln_g: TensorD,
    pub ln_b: TensorD,
}

impl_parameters!(ConvLayerParams {
    weight,
    bias,
    ln_g,
    ln_b
});

#[derive(Debug, Clone, PartialEq)]
pub struct AstParams {
    /// `[D, patch * patch]`
    pub patch_w: TensorD,
    pub patch_b: TensorD,
    /// One learned vector per grid cell, `[N, D]`.
    pub pos: TensorD,
    pub blocks: Vec<BlockParams>,
    pub ln_g: TensorD,
    pub ln_b: TensorD,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlannParams {
    pub cnn: Vec<ConvLayerParams>,
    pub ast: AstParams,
    pub gru_fwd: GruCellParams,
    pub gru_bwd: GruCellParams,
    /// `[classes, 2H]`
    pub head_w: TensorD,
    pub head_b: TensorD,
}

impl Parameters for AstParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a TensorD)) {
        f(tensor_join(prefix, "patch_w"), &self.patch_w);
        f(tensor_join(prefix, "patch_b"), &self.patch_b);
        f(tensor_join(prefix, "pos"), &self.pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&tensor_join(prefix, &format!("blocks.{i}")), f);
        }
        f(tensor_join(prefix, "ln_g"), &self.ln_g);
        f(tensor_join(prefix, "ln_b"), &self.ln_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut TensorD)) {
        f(tensor_join(prefix, "patch_w"), &mut self.patch_w);
        f(tensor_join(prefix, "patch_b"), &mut self.patch_b);
        f(tensor_join(prefix, "pos"), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&tensor_join(prefix, &format!("blocks.{i}")), f);
        }
        f(tensor_join(prefix, "ln_g"), &mut self.ln_g);
        f(tensor_join(prefix, "ln_b"), &mut self.ln_b);
    }
}

impl Parameters for WlannParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a TensorD)) {
        for (i, l) in self.cnn.iter().enumerate() {
            l.visit(&tensor_join(prefix, &format!("cnn.{i}")), f);
        }
        self.ast.visit(&tensor_join(prefix, "ast"), f);
        self.gru_fwd.visit(&tensor_join(prefix, "gru_fwd"), f);
        self.gru_bwd.visit(&tensor_join(prefix, "gru_bwd"), f);
        f(tensor_join(prefix, "head_w"), &self.head_w);
        f(tensor_join(prefix, "head_b"), &self.head_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut TensorD)) {
        for (i, l) in self.cnn.iter_mut().enumerate() {
            l.visit_mut(&tensor_join(prefix, &format!("cnn.{i}")), f);
        }
        self.ast.visit_mut(&tensor_join(prefix, "ast"), f);
        self.gru_fwd.visit_mut(&tensor_join(prefix, "gru_fwd"), f);
        self.gru_bwd.visit_mut(&tensor_join(prefix, "gru_bwd"), f);
        f(tensor_join(prefix, "head_w"), &mut self.head_w);
        f(tensor_join(prefix, "head_b"), &mut self.head_b);
    }
}

fn trunc_normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> TensorD {
    let dist = Normal::new(0.0, std).expect("positive std");
    TensorD::from_fn(shape, |_| loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> TensorD {
    let dist = Normal::new(0.0, std).expect("positive std");
    TensorD::from_fn(shape, |_| dist.sample(rng))
}

impl WlannParams {
    /// All-zero parameters with unit layer-norm gains; the layout every
    /// initializer and gradient buffer shares.
    pub fn zeros(cfg: &WlannConfig) -> Self {
        let mut cin = 1;
        let cnn = cfg
            .cnn
            .widths
            .iter()
            .map(|&c| {
                let l = ConvLayerParams {
                    weight: TensorD::zeros(&[c, cin, cfg.cnn.kernel]),
                    bias: TensorD::zeros(&[c]),
                    ln_g: TensorD::full(&[c], 1.0),
                    ln_b: TensorD::zeros(&[c]),
                };
                cin = c;
                l
            })
            .collect();
        let d = cfg.ast.embed_dim;
        let blocks = (0..cfg.ast.depth).map(|_| BlockParams::zeros(d)).collect();
        let ast = AstParams {
            patch_w: TensorD::zeros(&[d, cfg.ast.patch * cfg.ast.patch]),
            patch_b: TensorD::zeros(&[d]),
            pos: TensorD::zeros(&[cfg.num_patches(), d]),
            blocks,
            ln_g: TensorD::full(&[d], 1.0),
            ln_b: TensorD::zeros(&[d]),
        };
        let h = cfg.gru_hidden;
        Self {
            cnn,
            ast,
            gru_fwd: GruCellParams::zeros(cfg.fused_channels(), h),
            gru_bwd: GruCellParams::zeros(cfg.fused_channels(), h),
            head_w: TensorD::zeros(&[cfg.classes, 2 * h]),
            head_b: TensorD::zeros(&[cfg.classes]),
        }
    }

    /// Seeded initialization. Tensors are filled in visiting order from one
    /// generator, so the result depends only on the seed and the layout.
    pub fn init(cfg: &WlannConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru_std = 1.0 / (cfg.gru_hidden as f64).sqrt();
        p.visit_mut("", &mut |name, t| {
            let leaf = name.rsplit('.').next().unwrap_or(&name).to_string();
            let shape = t.shape().to_vec();
            *t = if name.starts_with("gru_") && !leaf.starts_with("b_") {
                normal(&mut rng, &shape, gru_std)
            } else if leaf.starts_with("ln") && leaf.ends_with("_g") {
                TensorD::full(&shape, 1.0)
            } else if shape.len() >= 2 {
                trunc_normal(&mut rng, &shape, INIT_STD)
            } else {
                TensorD::zeros(&shape)
            };
        });
        p
    }

    /// Rounds every value to the nearest 32-bit float, the precision of the
    /// checkpoint format.
    pub fn round_to_f32(&mut self) {
        self.visit_mut("", &mut |_, t| {
            t.values_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let p = WlannParams::zeros(&WlannConfig::micro());
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(names[0], "cnn.0.weight");
        assert!(names.contains(&"ast.blocks.0.attn.wq".to_string()));
        assert_eq!(names.last().unwrap(), "head_b");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = WlannConfig::micro();
        let a = WlannParams::init(&cfg, 5);
        assert_eq!(a, WlannParams::init(&cfg, 5));
        assert_ne!(a, WlannParams::init(&cfg, 6));
        assert!(a.head_w.values().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(a.head_b.values().iter().all(|&v| v == 0.0));
        assert!(a.ast.ln_g.values().iter().all(|&v| v == 1.0));
        assert!(a.gru_fwd.w_z.values().iter().any(|v| v.abs() > 2.0 * INIT_STD));
    }
}
