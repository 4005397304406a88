//! Convolution on irregular point sets with parameterized filters.
//!
//! The crate bundles everything needed to train and evaluate SpiderCNN-style
//! networks on a CPU: a dense tensor type with a reverse-mode autodiff tape,
//! point-cloud geometry (k-d tree neighbors, normals, mesh sampling,
//! augmentation), the SpiderConv layer itself, network builders, and the
//! training and evaluation loops.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod optim;
pub mod par;
pub mod rng;
pub mod spiderconv;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
