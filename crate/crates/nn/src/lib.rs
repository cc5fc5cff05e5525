//! Translation network built on a small reverse-mode autodiff.
//!
//! [`tape`] provides the differentiable matrix operations, [`model`] the
//! network (J/Y mapping networks, dual-path attention, TAC fusion,
//! upscaling), [`train`] the optimiser loop and checkpoints, and
//! [`gradcheck`] finite-difference validation of the backward pass.

pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;

pub use model::{ModelConfig, ModelInput, PreparedExample, TtNet};
pub use params::ParamStore;
pub use tape::{Graph, Tensor, Var};
pub use train::{Curriculum, TrainConfig, Trainer};
