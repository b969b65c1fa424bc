//! Retinal OCT B-scan classification with discriminative dictionary learning.
//!
//! The crate covers the whole chain: contrast enhancement and flattening of
//! B-scans ([`preprocess`]), pyramid HOG descriptors ([`features`]), an
//! l1-regularized least-squares solver ([`sparsecode`]), the COPAR, FDDL and
//! LRSDL learners with their classification rules ([`dictlearn`]),
//! volume-level cross-validation ([`eval`]) and file formats plus pipeline
//! glue ([`io`]).

pub mod dictlearn;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod preprocess;
pub mod rng;
pub mod sparsecode;

pub use error::{Error, Result};
