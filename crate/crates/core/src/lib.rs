//! Multi-task facial attribute learning engine.
//!
//! A shared convolutional trunk feeds four independent softmax heads
//! (emotion, gender, race, age). The crate contains everything needed to go
//! from raw PGM/PPM faces or a FER-style CSV to a trained checkpoint:
//!
//! * [`tensor`] and [`rng`]: dense row-major `f64` tensors and the seeded
//!   xoshiro256** generator every random decision flows through.
//! * [`layers`]: forward/backward kernels for each layer kind.
//! * [`model`] and [`checkpoint`]: the configurable architecture and its
//!   on-disk format.
//! * [`loss`]: per-head cross-entropy, masked weighted totals, accuracy.
//! * [`preprocess`] and [`data`]: image conditioning and dataset ingestion.
//! * [`train`]: Adam, plateau/early-stopping callbacks and the epoch loop.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use heads::Head;
pub use model::{Model, ModelConfig, Mode};
pub use rng::Rng;
pub use tensor::Tensor;
