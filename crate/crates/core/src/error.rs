use std::path::PathBuf;

use crate::kernel::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("kernel `{kernel}` is invalid: {}", join(diagnostics))]
    InvalidKernel {
        kernel: String,
        diagnostics: Vec<Diagnostic>,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid write-allocate policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid machine model: {0}")]
    InvalidMachine(String),

    #[error("invalid cache configuration: {0}")]
    InvalidCache(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown array `{0}`")]
    UnknownArray(String),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error(
        "kernel `{kernel}`: access {array}({dj:+},{dk:+}) leaves the allocated grid at iteration (j={j}, k={k})"
    )]
    OutOfBounds {
        kernel: String,
        array: String,
        dj: i32,
        dk: i32,
        j: i64,
        k: i64,
    },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("measurement CSV is missing column `{0}`")]
    MissingColumn(String),

    #[error("measurement CSV, record {record}: {message}")]
    Measurement { record: usize, message: String },

    #[error("malformed trace file: {0}")]
    Trace(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(diagnostics: &[Diagnostic]) -> String {
    diagnostics
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
