//! Expressive drum performance modeling on a 16th-note groove grid.
//!
//! A performance is a [`GrooveTensor`]: hits, velocities and microtiming
//! offsets for 9 drum categories. Simple forward compressions (quantizing,
//! removing a voice, flattening to taps) turn performances into model
//! inputs; the models in [`baseline`] and [`neural`] learn to invert them.

pub mod baseline;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod midi_io;
pub mod neural;
pub mod representation;
pub mod transforms;

pub use checkpoint::{Family, Model};
pub use corpus::{Corpus, Split};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use midi_io::{parse_smf, write_smf, MidiSequence, NoteEvent};
pub use neural::{Seq2Seq, Seq2SeqDims, Task, TrainConfig};
pub use representation::{DrumCategory, GrooveTensor, TimedNote, NUM_INSTRUMENTS};
pub use transforms::TapTensor;
