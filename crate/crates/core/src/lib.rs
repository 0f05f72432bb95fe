//! Convolutional network engine whose backward pass can be switched between
//! the true gradient (saliency map), DeconvNet and guided backpropagation,
//! plus closed-form and Monte-Carlo oracles describing what those
//! visualizations converge to on random networks.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod network;
pub mod tensor;
pub mod theory;
pub mod trainer;
pub mod visualize;

pub use error::{Error, Result};
pub use network::{ForwardTrace, LayerSpec, Network, NetworkSpec, SpliceMode};
pub use tensor::{Padding, PatchPlan, RngSpec, Tensor};
pub use visualize::{VisMethod, VisResult};
