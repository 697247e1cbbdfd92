use std::path::PathBuf;

use thiserror::Error;

/// A single invalid field in a configuration, addressed by a dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration has {} violation(s): {}", .0.len(), join_violations(.0))]
    ConfigViolations(Vec<ConfigViolation>),

    #[error("bubble {bubble} collapsed (radius {radius:e})")]
    Collapse { bubble: usize, radius: f64 },

    #[error("configuration is not admissible (min gap {min_gap:e})")]
    NotAdmissible { min_gap: f64 },

    #[error("point {point:?} is outside the domain: {reason}")]
    Domain { point: [f64; 3], reason: String },

    #[error("degenerate basis: {0}")]
    Degenerate(String),

    #[error("reflections did not converge after {sweeps} sweeps (last residual {last_residual:e})")]
    NonConvergence { sweeps: usize, last_residual: f64 },

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("unsupported sphere rule degree {requested}; supported range is 0..={max}")]
    UnsupportedDegree { requested: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
