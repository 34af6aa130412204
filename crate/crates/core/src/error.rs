use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::isolation::TreeReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed hash-name '{text}': {reason}")]
    MalformedHashName { text: String, reason: &'static str },

    #[error("expected a 20-byte digest, got {0} bytes")]
    WrongLength(usize),

    #[error("invalid hash inputs: {0}")]
    InvalidHashInputs(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate key '{key}' at line {line}")]
    DuplicateKey { key: String, line: usize },

    #[error("unknown key '{key}' at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("missing required key '{0}'")]
    MissingKey(&'static str),

    #[error("export list names '{0}', which has no pin in the treetop")]
    ExportOfUnpinnedSymbol(String),

    #[error("symbol '{0}' is not pinned in [deps] or in the treetop")]
    UnpinnedSymbol(String),

    #[error("symbol '{0}' is resolved through a treetop, but the recipe names none")]
    TreetopRequired(String),

    #[error("treetop '{0}' not found")]
    TreetopNotFound(String),

    #[error("package {hashname} not found in any garden root{}", referrer.as_ref().map(|r| format!(" (referenced by {r})")).unwrap_or_default())]
    PackageNotFound {
        hashname: String,
        referrer: Option<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("staging directory {staging} is not on the same filesystem as {root}")]
    CrossDeviceStaging { staging: PathBuf, root: PathBuf },

    #[error("existing store entry {0} has no readable META")]
    CorruptExisting(PathBuf),

    #[error("canonical root {path} is not writable: {source}")]
    CanonicalUnwritable { path: PathBuf, source: io::Error },

    #[error("circular dependency: {}", .0.join(" -> "))]
    CircularDependency(Vec<String>),

    #[error("no build environment cache at {0}; run `garden configure` first")]
    CacheMissing(PathBuf),

    #[error("build environment cache {0} is out of date (recipe changed); run `garden configure` again")]
    CacheStale(PathBuf),

    #[error("malformed ELF at offset {offset:#x}: {message}")]
    MalformedElf { offset: u64, message: String },

    #[error("unsupported ELF class: {0}")]
    UnsupportedElfClass(String),

    #[error("malformed dyninfo manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },

    #[error("working tree has uncommitted changes: {}", .0.join(", "))]
    DirtyWorktree(Vec<String>),

    #[error("{0} is not a git working tree")]
    NotARepository(PathBuf),

    #[error("unknown revision '{0}'")]
    UnknownRevspec(String),

    #[error("git {args} failed: {stderr}")]
    Git { args: String, stderr: String },

    #[error("garden-helper failed ({status})\n{log}")]
    HelperFailed { status: String, log: String },

    #[error("garden-helper exited successfully but $out is missing or empty\n{log}")]
    OutUnpopulated { log: String },

    #[error("isolation check failed:\n{0}")]
    IsolationViolation(Box<TreeReport>),

    #[error("corrupt REFERENCES in {path} at line {line}")]
    CorruptReferences { path: PathBuf, line: usize },

    #[error("destination {path} is not writable: {source}")]
    DestUnwritable { path: PathBuf, source: io::Error },

    #[error("no central garden configured (set GARDEN_CENTRAL)")]
    CentralUnconfigured,

    #[error("{0} already exists (use --force to overwrite)")]
    TargetExists(PathBuf),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    /// Process exit status for this error: 2 for user errors, 1 for aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::HelperFailed { .. }
            | Error::OutUnpopulated { .. }
            | Error::IsolationViolation(_)
            | Error::CircularDependency(_)
            | Error::CorruptExisting(_)
            | Error::CorruptReferences { .. }
            | Error::CanonicalUnwritable { .. }
            | Error::DestUnwritable { .. }
            | Error::CrossDeviceStaging { .. }
            | Error::MalformedElf { .. }
            | Error::Git { .. }
            | Error::Io { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn not_found(hashname: impl ToString) -> Self {
        Error::PackageNotFound {
            hashname: hashname.to_string(),
            referrer: None,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        })
    }
}
