//! Streaming missing-value imputation for multi-attribute sensor data.
//!
//! A stream of (possibly incomplete) sensor readings is cut into tumbling
//! windows. Each window becomes a similarity graph over its instances, and
//! missing attributes are reconstructed either by parameter-free feature
//! propagation ([`feaprop`]) or by a two-layer message-propagation network
//! trained transductively on the observed entries of that window ([`mpin`]).
//! The [`continuous`] module chains windows together with an importance-scored
//! data reservoir and warm-started model states.
//!
//! Data-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default); see [`exec::Execution`]. Both paths produce bitwise-identical
//! results.

pub mod checkpoint;
pub mod continuous;
pub mod error;
pub mod eval;
pub mod exec;
pub mod feaprop;
pub mod graph;
pub mod linalg;
pub mod mpin;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
