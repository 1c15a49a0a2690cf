use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RespiratoryEvent, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    TestIntra,
    TestInter,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::TestIntra => "test_intra",
            SplitName::TestInter => "test_inter",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<SplitName> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "test_intra" | "intra" => Ok(SplitName::TestIntra),
            "test_inter" | "inter" => Ok(SplitName::TestInter),
            other => Err(Error::Validation(format!("unknown split name '{other}'"))),
        }
    }
}

pub type ClassCounts = [usize; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub events: Vec<RespiratoryEvent>,
}

impl DatasetSplit {
    pub fn new(name: SplitName) -> Self {
        Self {
            name,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut c = [0; NUM_CLASSES];
        for e in &self.events {
            c[e.label.index()] += 1;
        }
        c
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.patient_id.as_str()).collect()
    }
}

/// Recording id to split assignment, one `recording_id split` pair per line.
/// Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub assignments: BTreeMap<String, SplitName>,
}

impl SplitManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 'recording_id split'",
                    n + 1
                )));
            };
            if assignments.insert(id.to_string(), split.parse()?).is_some() {
                return Err(Error::Validation(format!("manifest assigns '{id}' more than once")));
            }
        }
        Ok(Self { assignments })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        self.assignments.iter().map(|(id, s)| format!("{id} {s}\n")).collect()
    }

    pub fn get(&self, recording_id: &str) -> Option<SplitName> {
        self.assignments.get(recording_id).copied()
    }
}

/// Partitions events by manifest and checks the patient constraints: no
/// inter-patient test patient may appear in training, and every intra-patient
/// test patient must.
pub fn make_splits(events: &[RespiratoryEvent], manifest: &SplitManifest) -> Result<[DatasetSplit; 3]> {
    let mut out = [
        DatasetSplit::new(SplitName::Train),
        DatasetSplit::new(SplitName::TestIntra),
        DatasetSplit::new(SplitName::TestInter),
    ];
    for e in events {
        let split = manifest.get(&e.recording_id).ok_or_else(|| {
            Error::Validation(format!(
                "recording '{}' is not assigned by the manifest",
                e.recording_id
            ))
        })?;
        out[split as usize].events.push(e.clone());
    }
    let train = out[0].patients();
    if let Some(p) = out[2].patients().into_iter().find(|p| train.contains(p)) {
        return Err(Error::Validation(format!(
            "patient '{p}' appears in both train and test_inter"
        )));
    }
    if let Some(p) = out[1].patients().into_iter().find(|p| !train.contains(p)) {
        return Err(Error::Validation(format!(
            "test_intra patient '{p}' has no training events"
        )));
    }
    for s in &out {
        log::info!("{}: {} events, per class {:?}", s.name, s.len(), s.class_counts());
    }
    Ok(out)
}

/// Total per-class counts of a split triple.
pub fn total_counts(splits: &[DatasetSplit]) -> ClassCounts {
    let mut c = [0; NUM_CLASSES];
    for s in splits {
        for (t, v) in c.iter_mut().zip(s.class_counts()) {
            *t += v;
        }
    }
    c
}
