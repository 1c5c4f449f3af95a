//! Sparse statistical learning for high-dimensional tabular data.
//!
//! The crate is organized by task:
//!
//! - [`data`]: feature matrices, standardization, stratified splits, CSV I/O
//! - [`mi`]: mutual-information and correlation screening
//! - [`penalty`]: SCAD, MCP and l1 penalties with their difference-of-convex parts
//! - [`ag`]: nonconvex accelerated gradient with schedule diagnostics
//! - [`pcg`]: proximal Hager-Zhang conjugate gradient and linear CG
//! - [`qgaussian`]: q-Gaussian density and penalized q-Gaussian regression
//! - [`bench`]: simulation generators, metrics and the benchmark harness

pub mod ag;
pub mod bench;
pub mod brent;
pub mod data;
mod error;
pub mod linalg;
pub mod mi;
pub mod pcg;
pub mod penalty;
pub mod qgaussian;

pub use error::{Error, Result};
