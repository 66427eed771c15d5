//! Minimal persistent identifiers ("Minids"): a name bound to a creator, a
//! creation time, a content checksum and one or more locations.
//!
//! The [`Registry`] is an append-only log of record versions with an
//! in-memory index rebuilt on open. Records are never deleted; superseding
//! a record by a DOI keeps it resolvable.

mod id;
mod registry;

use thiserror::Error;

use crate::bag::BagError;
use crate::jsonlog::LogError;

pub use id::{derive_suffix, normalize_namespace, parse_id, IdString, SuffixSource, CROCKFORD};
pub use registry::{
    is_doi, normalize_doi, Checksum, MinidFetcher, MinidRecord, MintRequest, Registry,
    RegistryOptions, Status,
};

#[derive(Debug, Error)]
pub enum IdError {
    #[error("malformed identifier at position {position}: {reason}")]
    MalformedId { position: usize, reason: String },
    #[error("a record needs at least one location")]
    EmptyLocations,
    #[error("malformed digest: {0}")]
    MalformedDigest(String),
    #[error("no record for {0}")]
    NotFound(String),
    #[error("{0} has been superseded and can no longer change")]
    SupersededImmutable(String),
    #[error("`{0}` is not a DOI of the form 10.<registrant>/<suffix>")]
    MalformedDoi(String),
    #[error("idempotency key already bound to {0} with different content")]
    KeyConflict(String),
    #[error("corrupt registry log at line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Bag(#[from] BagError),
}

impl IdError {
    pub fn code(&self) -> &'static str {
        match self {
            IdError::MalformedId { .. } => "MalformedId",
            IdError::EmptyLocations => "EmptyLocations",
            IdError::MalformedDigest(_) => "MalformedDigest",
            IdError::NotFound(_) => "NotFound",
            IdError::SupersededImmutable(_) => "SupersededImmutable",
            IdError::MalformedDoi(_) => "MalformedDoi",
            IdError::KeyConflict(_) => "KeyConflict",
            IdError::CorruptLog { .. } | IdError::Log(LogError::Corrupt { .. }) => "CorruptLog",
            IdError::Log(_) => "IoFailure",
            IdError::Bag(e) => e.code(),
        }
    }
}
