//! Datasets: records, the on-disk manifest format, a synthetic generator and
//! annotation conversion.

pub mod convert;
pub mod manifest;
mod record;
pub mod synth;

pub use manifest::{load_manifest, load_sequence, save_manifest};
pub use record::{FrameData, SequenceRecord, LIFT_TOLERANCE_MM};
pub use synth::{synth_generate, SynthSpec};
