//! Core algorithms for leakage-free within-query graded ranking.
//!
//! Everything in this crate is pure computation over in-memory data:
//! candidate pools, judge-label isolation, lexical and learned rankers,
//! graded ranking metrics, and the aggregation/significance stack. File
//! formats, the pipeline driver, and the CLI live in the companion
//! `nrank` crate.
//!
//! The crate is `no_std` (with `alloc`) and all floating-point math goes
//! through `libm`, so identical inputs produce identical results on every
//! platform. All randomness flows from [`rng::SplitMix64`] seeds; nothing
//! reads ambient entropy.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod distill;
pub mod embed;
pub mod error;
pub mod lexical;
pub mod metrics;
pub mod neural;
pub mod pools;
pub mod rng;
pub mod splits;
pub mod stats;
pub mod synth;
pub mod vault;

pub use error::{Error, Result};

/// Unique story identifier (unique corpus-wide).
pub type StoryId = alloc::string::String;
/// Canonical query identifier derived from the constraint triple.
pub type QueryId = alloc::string::String;
