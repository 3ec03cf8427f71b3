//! Hierarchical temporal transformer for egocentric 3D hand pose estimation
//! and action recognition.
//!
//! A short-window pose encoder turns per-frame features into per-frame hand
//! poses and object distributions; a long-window action encoder consumes
//! tokens built from those predictions and classifies the clip's action.
//! Everything runs on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod transformer;
pub mod windowing;

pub use error::{HttError, Result};
