//! Open-set semi-supervised learning at desk scale.
//!
//! This crate trains small fully-connected classifiers on partially labeled
//! data whose unlabeled pool is contaminated with samples from unseen
//! classes. It implements SCOMatch — a `(K+1)`-class self-training algorithm
//! that harvests its own out-of-distribution supervision through an MSP-driven
//! memory queue and a curriculum OOD threshold — alongside FixMatch and
//! supervised-only baselines, synthetic open-set benchmarks, MNIST ingestion
//! and a config-driven experiment harness.
//!
//! The long-form guide lives in `book/`; its code snippets compile and run as
//! doc-tests of this crate.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod harness;
pub mod rng;
pub mod scomatch;

pub use error::{Error, Result};

pub mod guide;
