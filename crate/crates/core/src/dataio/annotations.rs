use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 7;

/// Event-level label vocabulary. The discriminant is the class index used by
/// the model output and the confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal = 0,
    Rhonchi = 1,
    Wheeze = 2,
    Stridor = 3,
    CoarseCrackle = 4,
    FineCrackle = 5,
    WheezeAndCrackle = 6,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [
        Label::Normal,
        Label::Rhonchi,
        Label::Wheeze,
        Label::Stridor,
        Label::CoarseCrackle,
        Label::FineCrackle,
        Label::WheezeAndCrackle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn is_abnormal(self) -> bool {
        self != Label::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Rhonchi => "Rhonchi",
            Label::Wheeze => "Wheeze",
            Label::Stridor => "Stridor",
            Label::CoarseCrackle => "CoarseCrackle",
            Label::FineCrackle => "FineCrackle",
            Label::WheezeAndCrackle => "WheezeAndCrackle",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Accepts the canonical names and the dataset's spelling variants
    /// ("Fine Crackle", "Wheeze+Crackle", ...), ignoring case, spaces,
    /// underscores and hyphens.
    fn from_str(s: &str) -> Result<Label> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        let label = match key.as_str() {
            "normal" | "n" => Label::Normal,
            "rhonchi" | "rhonchus" => Label::Rhonchi,
            "wheeze" | "wheezes" | "wheezing" => Label::Wheeze,
            "stridor" => Label::Stridor,
            "coarsecrackle" | "coarsecrackles" => Label::CoarseCrackle,
            "finecrackle" | "finecrackles" | "crackle" | "crackles" => Label::FineCrackle,
            "wheeze+crackle" | "wheeze&crackle" | "wheezeandcrackle" | "wheeze+crackles" | "both" => {
                Label::WheezeAndCrackle
            }
            _ => return Err(Error::Validation(format!("unknown event label '{s}'"))),
        };
        Ok(label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RespiratoryEvent {
    pub recording_id: String,
    pub onset_ms: u64,
    pub offset_ms: u64,
    pub label: Label,
    pub patient_id: String,
}

impl RespiratoryEvent {
    pub fn duration_ms(&self) -> u64 {
        self.offset_ms - self.onset_ms
    }

    /// Stable identifier used in logs and error messages.
    pub fn id(&self) -> String {
        format!("{}@{}-{}", self.recording_id, self.onset_ms, self.offset_ms)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Millis {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Millis {
    fn value(&self, field: &str) -> Result<u64> {
        let v = match self {
            Millis::Int(v) => return Ok(*v),
            Millis::Float(v) => *v,
            Millis::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("{field} '{s}' is not a number")))?,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Validation(format!("{field} {v} must be a non-negative time")));
        }
        Ok(v.round() as u64)
    }
}

#[derive(Deserialize)]
struct RawEvent {
    start: Millis,
    end: Millis,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    patient_id: Option<String>,
    #[serde(default)]
    event_annotation: Vec<RawEvent>,
}

/// Patient ids default to the recording-name prefix before the first `_`.
fn patient_from_recording(recording_id: &str) -> String {
    recording_id.split('_').next().unwrap_or(recording_id).to_string()
}

pub fn parse_annotations(text: &str, recording_id: &str) -> Result<Vec<RespiratoryEvent>> {
    let doc: RawDocument =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("annotation for '{recording_id}': {e}")))?;
    let patient_id = doc.patient_id.unwrap_or_else(|| patient_from_recording(recording_id));
    doc.event_annotation
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let onset_ms = raw.start.value("start")?;
            let offset_ms = raw.end.value("end")?;
            if offset_ms <= onset_ms {
                return Err(Error::Validation(format!(
                    "{recording_id} event {i}: end {offset_ms} ms must exceed start {onset_ms} ms"
                )));
            }
            Ok(RespiratoryEvent {
                recording_id: recording_id.to_string(),
                onset_ms,
                offset_ms,
                label: raw.kind.parse()?,
                patient_id: patient_id.clone(),
            })
        })
        .collect()
}

/// Loads one per-recording annotation document. The recording id is the
/// file stem.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<RespiratoryEvent>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("{}: no usable file stem", path.display())))?;
    parse_annotations(&text, id)
}

/// Samples in `[onset_ms, offset_ms)`. An event running past the end of the
/// recording is cut at the end with a warning.
pub fn slice_event(clip: &AudioClip, event: &RespiratoryEvent) -> Result<AudioClip> {
    let rate = clip.sample_rate_hz() as u64;
    let start = (event.onset_ms * rate / 1000) as usize;
    let mut end = (event.offset_ms * rate / 1000) as usize;
    if end > clip.len() && start < clip.len() {
        log::warn!(
            "event {} ends at sample {end} past the clip end {}; truncating",
            event.id(),
            clip.len()
        );
        end = clip.len();
    }
    if end > clip.len() || start >= end {
        return Err(Error::Range(format!(
            "event {} spans samples {start}..{end} but the clip has {}",
            event.id(),
            clip.len()
        )));
    }
    AudioClip::new(clip.samples()[start..end].to_vec(), clip.sample_rate_hz())
}
