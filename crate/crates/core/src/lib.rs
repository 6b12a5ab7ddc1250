//! Nighttime-light reconstruction toolkit.
//!
//! The crate covers the whole desk-scale pipeline: DMSP-OLS
//! inter-calibration ([`calib`]), paired-tile dataset construction
//! ([`dataset`]), a small reverse-mode tensor engine ([`autodiff`]), the
//! annual-difference super-resolution network ([`model`]), training and
//! evaluation metrics ([`train`]), and tiled inference plus the command line
//! ([`pipeline`], [`cli`]).

// `!(a < b)` is used on purpose so that NaN arguments are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod calib;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
