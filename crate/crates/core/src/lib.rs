//! Activation-hue toolkit.
//!
//! * [`activation`]: activation tensors, energy maps, pooled descriptors.
//! * [`hue_plane`]: N-channel hue angle diagnostic.
//! * [`memory`]: labeled pixel-vector memory with exact and forest K-NN.
//! * [`classifier`]: kernel-density likelihood classification.
//! * [`geometry`]: match-location statistics (angular bias, radial/tangential spread).
//! * [`hue_loss`]: angular labels and the combined one-hot + hue loss.
//! * [`trainer`]: a tiny CNN with explicit backprop, Adam and cosine annealing.
//! * [`synth`]: synthetic activation and image datasets with planted angular structure.
//! * [`io`]: AHUE/AHIX binary formats, manifests and CSV float formatting.

pub mod activation;
pub mod classifier;
pub mod error;
pub mod geometry;
pub mod hue_loss;
pub mod hue_plane;
pub mod io;
pub mod memory;
pub mod par;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use par::Parallelism;
