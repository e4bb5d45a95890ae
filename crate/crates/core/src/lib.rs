//! Echolocation laboratory: procedural rooms, ray-cast RGB-D, binaural chirp
//! echoes, a small reverse-mode autodiff engine, and the networks and
//! experiments that learn visual features from echoes.

pub mod acoustics;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod geom;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
