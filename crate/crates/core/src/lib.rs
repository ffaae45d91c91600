//! Structured neural ODEs identified from partial, noisy outputs.
//!
//! A model is a vector field with optional physical structure, trained
//! jointly with a recognition model that maps the first part of each
//! output trajectory to its unknown initial state. KKL observers run
//! backward in time provide the recognition features.

pub mod benchsys;
pub mod diffcore;
pub mod ekf;
pub mod error;
pub mod experiment;
pub mod observers;
pub mod odesolve;
pub mod par;
pub mod priors;
pub mod trainer;

pub use error::{Error, Result};
