//! Dominant transition pathways of delayed stochastic systems.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod ffs;
pub mod mam;
pub mod model;
pub mod path;
pub mod sdde;
pub mod transverse;

pub use error::{Error, Result};
