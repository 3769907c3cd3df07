//! Dataset ingestion: manifests with raw payloads, windowing into batches,
//! subject-disjoint splitting, and a synthetic oscillation task.

mod batch;
pub mod manifest;
mod split;
pub mod synth;

pub use batch::{window, window_records, SignalBatch};
pub use manifest::{load_dataset, DatasetReader, Manifest, Record, RecordMeta};
pub use split::{subject_split, Split};
pub use synth::{synth_generate, SynthConfig, SynthDataset, ALPHA_BAND};
