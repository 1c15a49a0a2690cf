use std::path::{Path, PathBuf};

use super::{
    load_annotations, load_wav, make_splits, slice_event, AudioClip, DatasetSplit, RespiratoryEvent, SplitManifest,
};
use crate::error::{Error, Result};

/// Directory layout shared by real and synthetic data:
/// `audio/<id>.wav`, `annotations/<id>.json`, `split.txt`.
#[derive(Debug, Clone)]
pub struct CorpusDir {
    root: PathBuf,
}

impl CorpusDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn wav_path(&self, recording_id: &str) -> PathBuf {
        self.root.join("audio").join(format!("{recording_id}.wav"))
    }

    /// Reads every annotation document (in file-name order) and partitions
    /// the events by the manifest.
    pub fn load_splits(&self) -> Result<[DatasetSplit; 3]> {
        let ann_dir = self.root.join("annotations");
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&ann_dir)
            .map_err(|e| Error::io(&ann_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut events = Vec::new();
        for p in &paths {
            events.extend(load_annotations(p)?);
        }
        let manifest = SplitManifest::load(self.root.join("split.txt"))?;
        make_splits(&events, &manifest)
    }

    pub fn event_clip(&self, event: &RespiratoryEvent) -> Result<AudioClip> {
        slice_event(&load_wav(self.wav_path(&event.recording_id))?, event)
    }
}
