//! The cascaded pose/action network, its losses, training loop, evaluation
//! and checkpoints.

pub mod checkpoint;
mod config;
pub mod eval;
pub mod loss;
mod network;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ActionInputs, FrameEncoderKind, HttConfig, MODEL_KEYS};
pub use network::{ActionBlockOut, Affine, ClipOutput, ClipVars, FrameOutput, HttModel, ALPHA_INIT_STD};
pub use train::{train, EpochLog, Schedule, Trainer};
