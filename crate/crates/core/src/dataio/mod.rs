//! Recording and annotation ingestion, event slicing, split management and
//! the synthetic stand-in corpus.

mod annotations;
mod clip;
mod corpus;
mod splits;
mod synth;
mod wav;

pub use annotations::{load_annotations, parse_annotations, slice_event, Label, RespiratoryEvent, NUM_CLASSES};
pub use clip::AudioClip;
pub use corpus::CorpusDir;
pub use splits::{make_splits, total_counts, ClassCounts, DatasetSplit, SplitManifest, SplitName};
pub use synth::{band_limited_noise, generate_synthetic_corpus, synthesize_clip, SurrogateClass, SYNTH_SAMPLE_RATE};
pub use wav::{load_wav, write_wav};
