//! Filesystem, file formats, pipeline orchestration, and reporting for
//! the within-query two-judge ranking harness. The algorithms live in
//! `nrank-core`; this crate owns everything that touches disk.

pub mod agreement;
pub mod config;
pub mod formats;
pub mod jsonl;
pub mod pipeline;
pub mod report;
