use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::expr::Expr;
use super::FlowError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    IngestFile,
    ComputeChecksum,
    ExtractMetadata,
    BuildBag,
    MakeHoley,
    QualityCheck,
    MintId,
    RegisterRecord,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::IngestFile => "ingest_file",
            StepKind::ComputeChecksum => "compute_checksum",
            StepKind::ExtractMetadata => "extract_metadata",
            StepKind::BuildBag => "build_bag",
            StepKind::MakeHoley => "make_holey",
            StepKind::QualityCheck => "quality_check",
            StepKind::MintId => "mint_id",
            StepKind::RegisterRecord => "register_record",
        }
    }

    /// Inputs a step of this kind cannot run without.
    pub fn required_inputs(self) -> &'static [&'static str] {
        match self {
            StepKind::IngestFile
            | StepKind::ComputeChecksum
            | StepKind::ExtractMetadata
            | StepKind::BuildBag => &["file"],
            StepKind::MakeHoley => &["bag"],
            StepKind::MintId => &["digest", "location"],
            StepKind::QualityCheck | StepKind::RegisterRecord => &[],
        }
    }

    /// Names of the outputs a finished step of this kind provides.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            StepKind::IngestFile => &["url", "name", "length", "sha256"],
            StepKind::ComputeChecksum => &["algorithm", "digest", "length"],
            StepKind::ExtractMetadata => &["metadata"],
            StepKind::BuildBag => &["bag", "digest", "oxum"],
            StepKind::MakeHoley => &["bag", "digest", "fetched"],
            StepKind::QualityCheck => &["passed"],
            StepKind::MintId => &["id", "checksum"],
            StepKind::RegisterRecord => &["rid", "citation"],
        }
    }

    /// Steps whose effects outlive the run and are guarded by
    /// idempotency keys.
    pub fn is_effect(self) -> bool {
        matches!(
            self,
            StepKind::IngestFile | StepKind::MintId | StepKind::RegisterRecord
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    #[default]
    Halt,
    /// Up to `max` further attempts, waiting 1 s, 2 s, then 4 s between them.
    Retry { max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDef {
    pub name: String,
    pub kind: StepKind,
    #[serde(default)]
    pub params: Map<String, Value>,
    /// Input name → `params.<name>` or `<step>.<output>`.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDef {
    pub name: String,
    #[serde(default)]
    pub on_error: OnError,
    /// Parameters a run must supply. When absent, any `params.x` is
    /// accepted and checked when the run reaches it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
    #[serde(default)]
    pub steps: Vec<StepDef>,
}

/// Where an input comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Param(String),
    Output { step: String, output: String },
}

impl Source {
    pub fn parse(text: &str) -> Option<Source> {
        let (head, tail) = text.split_once('.')?;
        if head.is_empty() || tail.is_empty() {
            return None;
        }
        Some(if head == "params" {
            Source::Param(tail.to_string())
        } else {
            Source::Output {
                step: head.to_string(),
                output: tail.to_string(),
            }
        })
    }
}

/// Parses and validates a flow description. Every input must name a
/// declared parameter or an output of an earlier step.
pub fn define_flow(spec: &str) -> Result<FlowDef, FlowError> {
    let flow: FlowDef = serde_json::from_str(spec).map_err(|e| FlowError::Parse {
        line: e.line(),
        column: e.column(),
        detail: e.to_string(),
    })?;
    validate(&flow)?;
    Ok(flow)
}

pub fn validate(flow: &FlowDef) -> Result<(), FlowError> {
    let structural = |detail: String| FlowError::Parse {
        line: 0,
        column: 0,
        detail,
    };
    if flow.name.trim().is_empty() {
        return Err(structural("flow name is empty".into()));
    }
    let declared: Option<BTreeSet<&str>> = flow
        .params
        .as_ref()
        .map(|p| p.iter().map(String::as_str).collect());
    let mut earlier: BTreeMap<&str, StepKind> = BTreeMap::new();
    for step in &flow.steps {
        if step.name.is_empty() || step.name == "params" || step.name.contains('.') {
            return Err(structural(format!(
                "`{}` is not a usable step name",
                step.name
            )));
        }
        if earlier.contains_key(step.name.as_str()) {
            return Err(structural(format!("step `{}` appears twice", step.name)));
        }
        let unbound = |input: &str| FlowError::UnboundInput {
            step: step.name.clone(),
            input: input.to_string(),
        };
        for (input, reference) in &step.inputs {
            let bound = match Source::parse(reference) {
                Some(Source::Param(p)) => declared.as_ref().is_none_or(|d| d.contains(p.as_str())),
                Some(Source::Output { step: from, output }) => earlier
                    .get(from.as_str())
                    .is_some_and(|kind| kind.outputs().contains(&output.as_str())),
                None => false,
            };
            if !bound {
                return Err(unbound(input));
            }
        }
        if let Some(missing) = step
            .kind
            .required_inputs()
            .iter()
            .find(|i| !step.inputs.contains_key(**i))
        {
            return Err(unbound(missing));
        }
        match step.kind {
            StepKind::QualityCheck => {
                let predicate = step
                    .params
                    .get("predicate")
                    .and_then(Value::as_str)
                    .ok_or_else(|| structural(format!("step `{}` needs a predicate", step.name)))?;
                let expr = Expr::parse(predicate)
                    .map_err(|e| structural(format!("step `{}` predicate: {e}", step.name)))?;
                if let Some(name) = expr
                    .roots()
                    .into_iter()
                    .find(|r| !step.inputs.contains_key(r))
                {
                    return Err(unbound(&name));
                }
            }
            StepKind::RegisterRecord => {
                let table = step.params.get("table").and_then(Value::as_str);
                if table
                    .and_then(|t| crate::catalog::TableRef::parse(t).ok())
                    .is_none()
                {
                    return Err(structural(format!(
                        "step `{}` needs a Schema:Table `table` param",
                        step.name
                    )));
                }
            }
            _ => {}
        }
        earlier.insert(&step.name, step.kind);
    }
    Ok(())
}
