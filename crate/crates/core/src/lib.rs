//! Invariant-representation anomaly detection.
//!
//! A shared encoder is trained adversarially, together with a source-private
//! encoder, a source generator and a source discriminator, on plentiful
//! source-domain normals and a handful of target-domain normals. An isolation
//! forest fitted on the shared codes then scores target data.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaltheory;
pub mod iforest;
pub mod losses;
pub mod model;
pub mod numkit;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
