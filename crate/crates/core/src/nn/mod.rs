//! Layers with analytic backprop, parameter initialization, and losses.

mod layer;
mod loss;
mod model;

pub use layer::{highway_forward, LayerSpec, CONV_KERNEL};
pub(crate) use loss::correct_count;
pub use loss::{accuracy, argmax, softmax_cross_entropy};
pub use model::{ForwardCache, Model, Parameter, HIGHWAY_GATE_BIAS};
