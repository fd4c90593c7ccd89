//! Preconditioned Langevin training for deep networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`rng`]: dense `f64` arrays and seeded, forkable streams.
//! - [`nn`]: layers with analytic forward/backward passes and the
//!   softmax cross-entropy loss.
//! - [`optim`]: RMSprop, Adam and Adadelta preconditioners, the Langevin
//!   update, and layer masks for Layer Langevin.
//! - [`data`]: MNIST IDX and CIFAR-10 binary readers, batching, synthetic sets.
//! - [`harness`]: schedules, experiment configs, side-by-side runs and CSV
//!   output.

pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::{sample_gaussian, SeededRng};
pub use tensor::Tensor;
