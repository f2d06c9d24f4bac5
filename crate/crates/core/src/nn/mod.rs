//! Minimal neural-network toolkit: tensors, a reverse-mode tape, the DMRB
//! encoder-decoder and the Adam optimizer.

pub mod adam;
pub mod blueprint;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use blueprint::{build_dmrb_stack, ArchSpec, Blueprint, Network};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
