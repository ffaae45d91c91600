//! Reverse-mode differentiation, function approximators and the optimizer.

pub mod adam;
pub mod arith;
pub mod gru;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use arith::{silu, sigmoid, Arith, Eval};
pub use gru::Gru;
pub use mlp::Mlp;
pub use params::{ParamBlock, ParamSet};
pub use tape::{Gradients, Tape, Var};
