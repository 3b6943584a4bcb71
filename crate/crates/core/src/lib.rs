//! Alignment and uniformity of point sets on the unit hypersphere.
//!
//! Modules:
//! - [`sphere`]: feature sets, sampling and distances on `S^{m-1}`
//! - [`special`]: `0F1`, Bessel-I, vMF normalizer and uniformity bounds
//! - [`metrics`]: alignment, uniformity, contrastive and entropy estimators
//! - [`optimize`]: projected gradient descent on products of spheres
//! - [`synth`]: synthetic item/view datasets with class labels
//! - [`experiments`]: verification experiments producing JSON reports
//! - [`io`]: CSV and JSON file formats

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod optimize;
pub mod special;
pub mod sphere;
pub mod synth;

pub use error::{Error, Result};
pub use sphere::{FeatureSet, PairedFeatures};
