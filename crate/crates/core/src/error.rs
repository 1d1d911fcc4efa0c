//! Error type shared across the core modules.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the core operations.
///
/// The distinction matters to callers: `Leakage` and `Alignment` map to
/// dedicated process exit codes in the CLI, while `Domain` and `Data`
/// are ordinary input errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument outside its documented domain (bad age, k <= 0, ...).
    Domain(String),
    /// Inconsistent or corrupt input data (duplicate ids, dangling refs).
    Data(String),
    /// A judge-role violation: supervision labels requested in an
    /// evaluation phase or vice versa.
    Leakage(String),
    /// Prediction files do not rank identical candidate sets.
    Alignment(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Leakage(msg) => write!(f, "leakage violation: {msg}"),
            Error::Alignment(msg) => write!(f, "alignment violation: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
