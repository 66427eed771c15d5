//! A versioned entity-relationship metadata catalog.
//!
//! Every mutation, whether to the model or to a record, is one entry in an
//! append-only operation log and one new snapshot. Records are addressed by
//! RIDs drawn from the identifier grammar, never change in place, and can be
//! read as of any earlier snapshot.

mod acl;
mod export;
mod model;
mod query;
mod store;
mod value;

use thiserror::Error;

use crate::bag::BagError;
use crate::idspace::IdError;
use crate::jsonlog::LogError;

pub use acl::{Access, AclPolicy, Principal, ANONYMOUS, EVERYONE};
pub use export::{ExportRequest, ExportResult, ImportReport};
pub use model::{
    fold_term, is_name, CatalogModel, ColumnDef, ColumnSpec, ForeignKey, ModelChange, TableDef,
    TableKind, TableRef, ValueType, VocabularyTerm, ASSET_CHECKSUM, ASSET_LENGTH, ASSET_URL, RCT,
    RID, RMT, SYSTEM_COLUMNS,
};
pub use query::{FacetCount, Filter, FilterOp, Query, QueryResult};
pub use store::{Catalog, CatalogOptions, LogEntry, Op, RecordVersion, Resolution};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{actor} lacks {needed:?} rights on {target}")]
    Forbidden {
        actor: String,
        needed: Access,
        target: String,
    },
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("name already in use: {0}")]
    DuplicateName(String),
    #[error("invalid model change: {0}")]
    InvalidChange(String),
    #[error("column {column}: {detail}")]
    TypeViolation { column: String, detail: String },
    #[error("column {column}: `{value}` is not a term of its vocabulary")]
    UnknownTerm { column: String, value: String },
    #[error("uniqueness violated: {0}")]
    KeyViolation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unknown path: {0}")]
    UnknownPath(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("record {rid} changed since it was read (now modified {current})")]
    Conflict { rid: String, current: String },
    #[error("idempotency key already bound to {0} with different values")]
    KeyConflict(String),
    #[error("asset not reachable: {0}")]
    UnreachableAsset(String),
    #[error("not an exported dataset: {0}")]
    InvalidPackage(String),
    #[error("corrupt catalog log at line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error(transparent)]
    Log(LogError),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Bag(#[from] BagError),
}

impl From<LogError> for CatalogError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Corrupt { line, detail, .. } => CatalogError::CorruptLog { line, detail },
            other => CatalogError::Log(other),
        }
    }
}

impl CatalogError {
    pub fn code(&self) -> &'static str {
        match self {
            CatalogError::Forbidden { .. } => "Forbidden",
            CatalogError::DanglingReference(_) => "DanglingReference",
            CatalogError::DuplicateName(_) => "DuplicateName",
            CatalogError::InvalidChange(_) => "InvalidChange",
            CatalogError::TypeViolation { .. } => "TypeViolation",
            CatalogError::UnknownTerm { .. } => "UnknownTerm",
            CatalogError::KeyViolation(_) => "KeyViolation",
            CatalogError::NotFound(_) => "NotFound",
            CatalogError::UnknownPath(_) => "UnknownPath",
            CatalogError::UnknownColumn(_) => "UnknownColumn",
            CatalogError::Conflict { .. } => "Conflict",
            CatalogError::KeyConflict(_) => "KeyConflict",
            CatalogError::UnreachableAsset(_) => "UnreachableAsset",
            CatalogError::InvalidPackage(_) => "InvalidPackage",
            CatalogError::CorruptLog { .. } => "CorruptLog",
            CatalogError::Log(_) => "IoFailure",
            CatalogError::Id(e) => e.code(),
            CatalogError::Bag(e) => e.code(),
        }
    }
}
