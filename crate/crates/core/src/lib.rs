//! Cross-modal relative-rotation domain adaptation for paired colour/depth data.
//!
//! This crate is `no_std` (with `alloc`) and holds every pure part of the
//! toolkit: a small tensor/layer stack with hand-written backward passes,
//! the paired-modality data types and toy generator, the rotation pretext
//! machinery, the two-stream model, all training objectives, the training
//! loop itself and the post-hoc analysis routines. File formats, the CLI and
//! anything touching the filesystem live in the `relrot` crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
mod error;
pub mod image;
pub mod model;
pub mod nn;
pub mod objectives;
mod real;
pub mod rng;
pub mod rotation;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
pub use real::{DType, Real};
pub use tensor::Tensor;
