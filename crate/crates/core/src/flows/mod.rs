//! Declarative, resumable publication pipelines.
//!
//! A [`FlowDef`] lists typed steps wired together by named inputs. The
//! [`FlowEngine`] runs them in order against a [`FlowServices`] binding,
//! records every step transition in an append-only event log, and guards
//! each external effect (ingest, mint, register) with an idempotency key so
//! that retries, re-runs and resumes never repeat it.

mod def;
mod expr;
mod runner;
mod services;

use thiserror::Error;

use crate::idspace::IdError;
use crate::jsonlog::LogError;

pub use def::{define_flow, validate, FlowDef, OnError, Source, StepDef, StepKind};
pub use expr::Expr;
pub use runner::{
    check_audit, Action, AuditEvent, FlowEngine, FlowEngineOptions, FlowRun, RunStatus, StepState,
    StepStatus,
};
pub use services::{BasicExtractor, Extractor, FlowServices, Interrupted, LocalServices, Phase};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow spec at {line}:{column}: {detail}")]
    Parse {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("step `{step}` input `{input}` is not produced by an earlier step or a parameter")]
    UnboundInput { step: String, input: String },
    #[error("no run or flow named {0}")]
    NotFound(String),
    #[error("run {0} cannot be resumed")]
    NotResumable(String),
    #[error("run interrupted during step `{0}`")]
    Interrupted(String),
    #[error("corrupt flow log at line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error(transparent)]
    Log(LogError),
    #[error(transparent)]
    Id(#[from] IdError),
}

impl From<LogError> for FlowError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Corrupt { line, detail, .. } => FlowError::CorruptLog { line, detail },
            other => FlowError::Log(other),
        }
    }
}

impl FlowError {
    pub fn code(&self) -> &'static str {
        match self {
            FlowError::Parse { .. } => "ParseError",
            FlowError::UnboundInput { .. } => "UnboundInput",
            FlowError::NotFound(_) => "NotFound",
            FlowError::NotResumable(_) => "NotResumable",
            FlowError::Interrupted(_) => "Interrupted",
            FlowError::CorruptLog { .. } => "CorruptLog",
            FlowError::Log(_) => "IoFailure",
            FlowError::Id(e) => e.code(),
        }
    }
}
