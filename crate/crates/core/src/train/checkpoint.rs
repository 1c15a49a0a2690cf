use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TensorArchive, TrainState};
use crate::error::{CheckpointError, Error, Result};
use crate::model::{WlannConfig, WlannParams, FUSION_ORDER, INIT_SCHEME};
use crate::ndiff::{Parameters, TensorD};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub init_scheme: String,
    pub fusion_order: String,
    pub loss: String,
    pub epoch_losses: Vec<f64>,
}

/// A self-describing model file: configuration, parameters and, for
/// resumable training, the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: WlannConfig,
    pub meta: CheckpointMeta,
    pub state: TrainState,
    /// Archive entries not recognized by this version, skipped on load.
    pub ignored: Vec<String>,
}

impl Checkpoint {
    pub fn from_state(config: &WlannConfig, state: &TrainState) -> Self {
        let loss = if config.train.loss_on_normalized_scores {
            format!("focal(gamma={}) on normalized sigmoid scores", config.focal_gamma)
        } else {
            format!("focal(gamma={}) on sigmoid scores", config.focal_gamma)
        };
        Self {
            config: config.clone(),
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                step: state.adam.step,
                epoch: state.epoch,
                seed: state.seed,
                init_scheme: INIT_SCHEME.into(),
                fusion_order: FUSION_ORDER.into(),
                loss,
                epoch_losses: state.epoch_losses.clone(),
            },
            state: state.clone(),
            ignored: Vec::new(),
        }
    }

    pub fn params(&self) -> &WlannParams {
        &self.state.params
    }

    pub fn to_archive(&self) -> TensorArchive {
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        let mut a = TensorArchive::new(self.config.to_json(), meta);
        for (prefix, p) in [
            ("", &self.state.params),
            ("adam.m", &self.state.adam.m),
            ("adam.v", &self.state.adam.v),
        ] {
            p.visit(prefix, &mut |name, t| a.push(name, t.clone()));
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let config = WlannConfig::from_json_str(&a.config)
            .map_err(|e| CheckpointError::MalformedHeader(format!("config: {e}")))?;
        config.validate()?;
        let meta: CheckpointMeta = serde_json::from_str(&a.metadata)
            .map_err(|e| CheckpointError::MalformedHeader(format!("metadata: {e}")))?;
        let layout = WlannParams::zeros(&config);
        let mut used = std::collections::HashSet::new();
        let mut fill = |prefix: &str, target: &mut WlannParams| -> Result<()> {
            let mut err = None;
            target.visit_mut(prefix, &mut |name, t| {
                if err.is_some() {
                    return;
                }
                match a.get(&name) {
                    None => err = Some(CheckpointError::MissingTensor(name)),
                    Some(src) if src.shape() != t.shape() => {
                        err = Some(CheckpointError::ShapeMismatch {
                            name,
                            expected: t.shape().to_vec(),
                            found: src.shape().to_vec(),
                        })
                    }
                    Some(src) => {
                        t.values_mut().copy_from_slice(src.values());
                        used.insert(name);
                    }
                }
            });
            err.map_or(Ok(()), |e| Err(e.into()))
        };
        let mut params = layout.clone();
        fill("", &mut params)?;
        let mut m = layout.clone();
        let mut v = layout;
        fill("adam.m", &mut m)?;
        fill("adam.v", &mut v)?;
        let ignored: Vec<String> = a
            .entries
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !used.contains(n))
            .collect();
        for n in &ignored {
            log::warn!("checkpoint entry '{n}' is not used by this version; skipping");
        }
        let state = TrainState {
            params,
            adam: AdamState { m, v, step: meta.step },
            epoch: meta.epoch,
            seed: meta.seed,
            epoch_losses: meta.epoch_losses.clone(),
        };
        Ok(Self {
            config,
            meta,
            state,
            ignored,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    ckpt.to_archive().write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_archive(&TensorArchive::read(path)?)
}

/// Reads one tensor from a feature archive written by the `features` command.
pub fn read_feature(path: impl AsRef<Path>, name: &str) -> Result<TensorD> {
    let path = path.as_ref();
    TensorArchive::read(path)?
        .get(name)
        .cloned()
        .ok_or_else(|| Error::from(CheckpointError::MissingTensor(name.into())))
}
