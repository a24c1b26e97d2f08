//! Bit-exact integer-only inference for a compact single-layer Transformer
//! encoder used for single-step time-series forecasting.
//!
//! - [`qcore`]: quantization parameters, calibration, dyadic requantization
//! - [`kernels`]: integer linear/add/matmul/softmax/BatchNorm/GAP/ReLU
//! - [`model`]: configuration, parameter budget, assembly and the forward pass
//! - [`reference`]: floating-point and rounding-identical rational oracles
//! - [`synth`]: seeded random models for verification runs
//! - [`dataio`]: CSV windows, scaling, RMSE, model artifacts, memory export
//! - [`cli`]: the `intformer` command-line front end

pub mod error;
pub mod qcore;
pub mod kernels;
pub mod model;
pub mod reference;
pub mod synth;
pub mod dataio;
pub mod cli;

pub use error::{Error, Result};
