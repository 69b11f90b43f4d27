//! Time series as directed graphs with node features.
//!
//! The crate builds time-digraphs from sampled signals, runs directed
//! message passing and temporal convolutions over them, assembles the
//! encoder/decoder blocks into classifiers and autoencoders, and scores
//! reconstruction errors for unsupervised signal-quality detection.

pub mod alloc;
pub mod anomaly;
pub mod data;
pub mod digraph;
pub mod error;
pub mod gconv;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
