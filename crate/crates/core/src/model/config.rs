use serde::{Deserialize, Serialize};

use crate::dsp::{frame_count, AugmentParams, FBANK_SAMPLE_RATE, MEL_BINS};
use crate::error::{Error, Result};
use crate::ndiff::conv1d_out_len;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Order of the lowpass prototype; the band-pass has twice as many poles.
    pub filter_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter_order: 4,
            low_hz: 40.0,
            high_hz: 850.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub kernel: usize,
    pub first_stride: usize,
    pub block_strides: Vec<usize>,
    /// Output channels of every convolution; the last entry is C_w.
    pub widths: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            kernel: 80,
            first_stride: 5,
            block_strides: vec![4, 4, 4],
            widths: vec![64, 128, 240, 240],
        }
    }
}

impl CnnConfig {
    pub fn strides(&self) -> Vec<usize> {
        std::iter::once(self.first_stride)
            .chain(self.block_strides.iter().copied())
            .collect()
    }

    pub fn out_channels(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstConfig {
    pub patch: usize,
    pub patch_stride: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Log-mel values are standardized as `(x - norm_mean) / norm_std`
    /// before patch extraction.
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl Default for AstConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            patch_stride: 8,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            norm_mean: -8.0,
            norm_std: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Focal loss is evaluated on the sigmoid scores rescaled to sum to one.
    pub loss_on_normalized_scores: bool,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            batch_size: 8,
            loss_on_normalized_scores: true,
            augment: true,
        }
    }
}

/// Every architectural and training hyperparameter. Serialized into each
/// checkpoint so a model file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlannConfig {
    pub fixed_input_seconds: f64,
    pub sample_rate: u32,
    pub preprocess: PreprocessConfig,
    pub cnn: CnnConfig,
    pub ast: AstConfig,
    pub f_common: usize,
    pub gru_hidden: usize,
    pub classes: usize,
    pub focal_gamma: f64,
    pub augment: AugmentParams,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for WlannConfig {
    fn default() -> Self {
        Self {
            fixed_input_seconds: 8.0,
            sample_rate: FBANK_SAMPLE_RATE,
            preprocess: PreprocessConfig::default(),
            cnn: CnnConfig::default(),
            ast: AstConfig::default(),
            f_common: 15,
            gru_hidden: 64,
            classes: 7,
            focal_gamma: 2.0,
            augment: AugmentParams::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Derived tensor geometry of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub input_samples: usize,
    pub spec_frames: usize,
    /// AST token grid: frequency rows by time columns.
    pub ast_grid: (usize, usize),
    pub cnn_t_raw: usize,
    pub t_common: usize,
    pub channel_groups: usize,
    pub wo_shape: [usize; 3],
    pub ao_shape: [usize; 3],
    pub fused_shape: [usize; 3],
    pub fused_channels: usize,
}

impl WlannConfig {
    /// Small configuration for 1 s inputs used by gradient checks and the
    /// quick training runs.
    pub fn micro() -> Self {
        let mut cfg = Self {
            fixed_input_seconds: 1.0,
            cnn: CnnConfig {
                widths: vec![4, 8, 16, 30],
                ..CnnConfig::default()
            },
            ast: AstConfig {
                embed_dim: 8,
                depth: 1,
                heads: 2,
                ..AstConfig::default()
            },
            gru_hidden: 8,
            ..Self::default()
        };
        cfg.train.learning_rate = 1e-2;
        cfg
    }

    pub fn input_samples(&self) -> usize {
        (self.fixed_input_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn spec_frames(&self) -> usize {
        frame_count(self.input_samples())
    }

    pub fn freq_patches(&self) -> usize {
        (MEL_BINS - self.ast.patch) / self.ast.patch_stride + 1
    }

    pub fn time_patches(&self) -> usize {
        let t = self.spec_frames();
        if t < self.ast.patch {
            0
        } else {
            (t - self.ast.patch) / self.ast.patch_stride + 1
        }
    }

    pub fn num_patches(&self) -> usize {
        self.freq_patches() * self.time_patches()
    }

    /// Time length after each convolution.
    pub fn cnn_lengths(&self) -> Vec<usize> {
        let mut len = self.input_samples();
        let mut out = Vec::new();
        for s in self.cnn.strides() {
            match conv1d_out_len(len, self.cnn.kernel, s) {
                Some(l) => {
                    out.push(l);
                    len = l;
                }
                None => break,
            }
        }
        out
    }

    pub fn cnn_t_raw(&self) -> usize {
        let lens = self.cnn_lengths();
        if lens.len() == self.cnn.widths.len() {
            *lens.last().unwrap_or(&0)
        } else {
            0
        }
    }

    pub fn t_common(&self) -> usize {
        self.time_patches()
    }

    pub fn channel_groups(&self) -> usize {
        self.cnn.out_channels() / self.f_common.max(1)
    }

    pub fn fused_channels(&self) -> usize {
        self.ast.embed_dim + self.channel_groups()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fixed_input_seconds > 0.0) || self.sample_rate != FBANK_SAMPLE_RATE {
            return bad(format!(
                "input must be a positive duration at {FBANK_SAMPLE_RATE} Hz (got {} s at {} Hz)",
                self.fixed_input_seconds, self.sample_rate
            ));
        }
        if self.cnn.widths.len() != self.cnn.block_strides.len() + 1 || self.cnn.widths.contains(&0) {
            return bad(format!(
                "cnn needs one positive width per convolution: {} widths for {} convolutions",
                self.cnn.widths.len(),
                self.cnn.block_strides.len() + 1
            ));
        }
        if self.cnn.kernel == 0 || self.cnn.strides().contains(&0) {
            return bad("cnn kernel and strides must be positive".into());
        }
        if self.cnn_t_raw() == 0 {
            return bad(format!(
                "{} input samples are too short for the convolution stack",
                self.input_samples()
            ));
        }
        if self.ast.patch == 0 || self.ast.patch_stride == 0 || self.ast.patch > MEL_BINS {
            return bad("invalid patch geometry".into());
        }
        if self.freq_patches() != self.f_common {
            return bad(format!(
                "patch geometry gives {} frequency rows but f_common is {}",
                self.freq_patches(),
                self.f_common
            ));
        }
        if self.time_patches() == 0 {
            return bad(format!(
                "{} spectrogram frames are fewer than the {}-frame patch",
                self.spec_frames(),
                self.ast.patch
            ));
        }
        if !self.cnn.out_channels().is_multiple_of(self.f_common) {
            return bad(format!(
                "C_w = {} is not divisible by F = {}",
                self.cnn.out_channels(),
                self.f_common
            ));
        }
        if self.ast.embed_dim == 0 || self.ast.heads == 0 || !self.ast.embed_dim.is_multiple_of(self.ast.heads) {
            return bad(format!(
                "embedding dimension {} is not divisible by {} heads",
                self.ast.embed_dim, self.ast.heads
            ));
        }
        if !(self.ast.norm_std > 0.0) {
            return bad("spectrogram normalization std must be positive".into());
        }
        if self.gru_hidden == 0 || self.classes < 2 {
            return bad("need a positive GRU width and at least two classes".into());
        }
        if !(self.focal_gamma >= 0.0) {
            return bad(format!("focal gamma {} must be non-negative", self.focal_gamma));
        }
        if self.augment.freq_mask_width >= MEL_BINS {
            return bad(format!(
                "frequency mask width {} must be below {MEL_BINS}",
                self.augment.freq_mask_width
            ));
        }
        if self.augment.time_warp_w > 0 && 2 * self.augment.time_warp_w >= self.spec_frames() {
            return bad("time warp distance is too large for the input length".into());
        }
        let t = &self.train;
        if !(t.learning_rate >= 0.0) || t.batch_size == 0 || !(t.clip_norm > 0.0) {
            return bad("learning rate must be non-negative, batch size and clip norm positive".into());
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive".into());
        }
        Ok(())
    }

    pub fn shape_report(&self) -> Result<ShapeReport> {
        self.validate()?;
        let (f, t, d, g) = (
            self.f_common,
            self.t_common(),
            self.ast.embed_dim,
            self.channel_groups(),
        );
        Ok(ShapeReport {
            input_samples: self.input_samples(),
            spec_frames: self.spec_frames(),
            ast_grid: (self.freq_patches(), self.time_patches()),
            cnn_t_raw: self.cnn_t_raw(),
            t_common: t,
            channel_groups: g,
            wo_shape: [f, t, g],
            ao_shape: [f, t, d],
            fused_shape: [f, t, d + g],
            fused_channels: d + g,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let r = WlannConfig::default().shape_report().unwrap();
        assert_eq!(r.input_samples, 128000);
        assert_eq!(r.spec_frames, 798);
        assert_eq!(r.ast_grid, (15, 98));
        assert_eq!(WlannConfig::default().cnn_lengths(), vec![25585, 6377, 1575, 374]);
        assert_eq!(r.fused_shape, [15, 98, 80]);
    }

    #[test]
    fn micro_geometry() {
        let c = WlannConfig::micro();
        let r = c.shape_report().unwrap();
        assert_eq!(r.spec_frames, 98);
        assert_eq!(r.ast_grid, (15, 11));
        assert_eq!(r.cnn_t_raw, 24);
        assert_eq!(r.channel_groups, 2);
    }

    #[test]
    fn invariants_enforced() {
        let mut c = WlannConfig::default();
        c.cnn.widths = vec![64, 128, 240, 250];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = WlannConfig::default();
        c.ast.heads = 3;
        assert!(c.validate().is_err());
        let c = WlannConfig {
            fixed_input_seconds: 0.1,
            ..WlannConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = WlannConfig::from_toml_str("gru_hidden = 8\n[ast]\nembed_dim = 16\n").unwrap();
        assert_eq!(c.gru_hidden, 8);
        assert_eq!(c.ast.embed_dim, 16);
        assert_eq!(c.ast.heads, 4);
        assert!(WlannConfig::from_toml_str("bogus = 1").is_err());
        let round = WlannConfig::from_json_str(&c.to_json()).unwrap();
        assert_eq!(round, c);
    }
}
