use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::def::{validate, FlowDef, OnError, Source, StepDef, StepKind};
use super::expr::Expr;
use super::services::{base_name, FlowServices, Interrupted, Phase};
use super::FlowError;
use crate::bag::{read_bag_bytes, Algorithm, ArchiveFormat, BagBuilder, BagPath, MetadataBlock};
use crate::catalog::TableRef;
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::idspace::{Checksum, IdString, MintRequest, SuffixSource};
use crate::jsonlog::{AppendLog, Durability};

const RUN_NAMESPACE: &str = "RUN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Start,
    Finish,
    Fail,
    Retry,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub timestamp: Timestamp,
    pub step: String,
    pub action: Action,
    #[serde(default)]
    pub detail: String,
    /// Present on `finish` and `skip`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Map<String, Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Failed { step: String, error: String },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum StepState {
    Pending,
    Running,
    Done { outputs: Map<String, Value> },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStatus {
    pub name: String,
    #[serde(flatten)]
    pub state: StepState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRun {
    pub run_id: IdString,
    pub flow: FlowDef,
    pub params: Map<String, Value>,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps: Vec<StepStatus>,
    pub audit: Vec<AuditEvent>,
}

impl FlowRun {
    fn new(run_id: IdString, flow: FlowDef, params: Map<String, Value>) -> Self {
        let steps = flow
            .steps
            .iter()
            .map(|s| StepStatus {
                name: s.name.clone(),
                state: StepState::Pending,
            })
            .collect();
        let mut run = FlowRun {
            run_id,
            flow,
            params,
            status: RunStatus::Running,
            steps,
            audit: Vec::new(),
        };
        run.refresh_status();
        run
    }

    pub fn outputs(&self, step: &str) -> Option<&Map<String, Value>> {
        self.steps
            .iter()
            .find(|s| s.name == step)
            .and_then(|s| match &s.state {
                StepState::Done { outputs } => Some(outputs),
                _ => None,
            })
    }

    /// Every output of every finished step, keyed `step.output`.
    pub fn all_outputs(&self) -> Map<String, Value> {
        let mut all = Map::new();
        for s in &self.steps {
            if let StepState::Done { outputs } = &s.state {
                for (k, v) in outputs {
                    all.insert(format!("{}.{k}", s.name), v.clone());
                }
            }
        }
        all
    }

    fn step_mut(&mut self, name: &str) -> Option<&mut StepStatus> {
        self.steps.iter_mut().find(|s| s.name == name)
    }

    fn in_progress(&self) -> Option<&str> {
        self.steps
            .iter()
            .find(|s| s.state == StepState::Running)
            .map(|s| s.name.as_str())
    }

    fn refresh_status(&mut self) {
        if self
            .steps
            .iter()
            .all(|s| matches!(s.state, StepState::Done { .. }))
        {
            self.status = RunStatus::Completed;
        }
    }

    fn apply(&mut self, event: &AuditEvent) -> Result<(), String> {
        let step = self
            .step_mut(&event.step)
            .ok_or_else(|| format!("audit event for unknown step `{}`", event.step))?;
        match event.action {
            Action::Start | Action::Retry => {
                step.state = StepState::Running;
                self.status = RunStatus::Running;
            }
            Action::Finish | Action::Skip => {
                step.state = StepState::Done {
                    outputs: event.outputs.clone().unwrap_or_default(),
                };
                self.status = RunStatus::Running;
                self.refresh_status();
            }
            Action::Fail => {
                step.state = StepState::Failed {
                    error: event.detail.clone(),
                };
                self.status = RunStatus::Failed {
                    step: event.step.clone(),
                    error: event.detail.clone(),
                };
            }
        }
        self.audit.push(event.clone());
        Ok(())
    }
}

/// Checks that each step's events read as `skip` or
/// `start retry* (finish | fail)` segments, with nothing but skips after a
/// finish.
pub fn check_audit(events: &[AuditEvent]) -> Result<(), String> {
    #[derive(Clone, Copy, PartialEq)]
    enum At {
        Idle,
        Open,
        Done,
    }
    let mut steps: HashMap<&str, At> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        let at = steps.entry(e.step.as_str()).or_insert(At::Idle);
        *at = match (*at, e.action) {
            (At::Idle, Action::Start) => At::Open,
            (At::Idle, Action::Skip) => At::Idle,
            (At::Open, Action::Retry) => At::Open,
            (At::Open, Action::Finish) => At::Done,
            (At::Open, Action::Fail) => At::Idle,
            (At::Done, Action::Skip) => At::Done,
            _ => {
                return Err(format!(
                    "event {i}: unexpected {:?} for step `{}`",
                    e.action, e.step
                ))
            }
        };
    }
    match steps.iter().find(|(_, at)| **at == At::Open) {
        Some((step, _)) => Err(format!("step `{step}` never finished or failed")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum FlowEvent {
    Define {
        flow: FlowDef,
    },
    Run {
        run_id: IdString,
        flow: FlowDef,
        params: Map<String, Value>,
    },
    Audit {
        run_id: IdString,
        entry: AuditEvent,
    },
    Effect {
        key: String,
        outputs: Map<String, Value>,
    },
}

#[derive(Clone)]
pub struct FlowEngineOptions {
    pub clock: Arc<dyn Clock>,
    pub suffixes: Arc<SuffixSource>,
    pub durability: Durability,
}

impl Default for FlowEngineOptions {
    fn default() -> Self {
        FlowEngineOptions {
            clock: Arc::new(SystemClock),
            suffixes: Arc::new(SuffixSource::from_entropy()),
            durability: Durability::Flush,
        }
    }
}

struct Inner {
    log: AppendLog<FlowEvent>,
    flows: BTreeMap<String, FlowDef>,
    runs: BTreeMap<IdString, FlowRun>,
    effects: HashMap<String, Map<String, Value>>,
    active: HashSet<IdString>,
}

impl Inner {
    fn apply(&mut self, event: &FlowEvent) -> Result<(), String> {
        match event {
            FlowEvent::Define { flow } => {
                self.flows.insert(flow.name.clone(), flow.clone());
            }
            FlowEvent::Run {
                run_id,
                flow,
                params,
            } => {
                if self.runs.contains_key(run_id) {
                    return Err(format!("run {run_id} started twice"));
                }
                self.runs.insert(
                    run_id.clone(),
                    FlowRun::new(run_id.clone(), flow.clone(), params.clone()),
                );
            }
            FlowEvent::Audit { run_id, entry } => {
                self.runs
                    .get_mut(run_id)
                    .ok_or_else(|| format!("audit event for unknown run {run_id}"))?
                    .apply(entry)?;
            }
            FlowEvent::Effect { key, outputs } => {
                self.effects.insert(key.clone(), outputs.clone());
            }
        }
        Ok(())
    }
}

/// Runs flows and keeps their history in a newline-delimited event log.
pub struct FlowEngine {
    options: FlowEngineOptions,
    inner: Mutex<Inner>,
}

/// Why a step did not finish.
struct StepFailure {
    detail: String,
    retryable: bool,
}

impl StepFailure {
    fn permanent(detail: impl Into<String>) -> Self {
        StepFailure {
            detail: detail.into(),
            retryable: false,
        }
    }

    fn transient(detail: impl Into<String>) -> Self {
        StepFailure {
            detail: detail.into(),
            retryable: true,
        }
    }
}

enum Outcome {
    Done,
    Failed,
}

/// Removes a run from the active set when execution ends, however it ends.
struct ActiveGuard<'a> {
    engine: &'a FlowEngine,
    run_id: IdString,
}

impl Drop for ActiveGuard<'_> {
    fn drop(&mut self) {
        self.engine.lock().active.remove(&self.run_id);
    }
}

impl FlowEngine {
    pub fn in_memory(options: FlowEngineOptions) -> Self {
        FlowEngine {
            options,
            inner: Mutex::new(Inner {
                log: AppendLog::memory(),
                flows: BTreeMap::new(),
                runs: BTreeMap::new(),
                effects: HashMap::new(),
                active: HashSet::new(),
            }),
        }
    }

    /// Replays the log at `path`. A run that was mid-step when the previous
    /// process stopped gets a `fail` event and can be resumed.
    pub fn open(path: &Path, options: FlowEngineOptions) -> Result<Self, FlowError> {
        let (log, events) = AppendLog::open(path, options.durability)?;
        let engine = FlowEngine::in_memory(options);
        {
            let mut inner = engine.lock();
            inner.log = log;
            for (i, event) in events.iter().enumerate() {
                inner.apply(event).map_err(|detail| FlowError::CorruptLog {
                    line: i + 1,
                    detail,
                })?;
            }
        }
        let dangling: Vec<IdString> = engine
            .lock()
            .runs
            .values()
            .filter(|r| r.in_progress().is_some())
            .map(|r| r.run_id.clone())
            .collect();
        for run_id in dangling {
            engine.close_dangling(&run_id)?;
        }
        Ok(engine)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn record(&self, event: FlowEvent) -> Result<(), FlowError> {
        let mut inner = self.lock();
        inner.log.append(&event)?;
        inner.apply(&event).map_err(|detail| FlowError::CorruptLog {
            line: inner.log.len(),
            detail,
        })
    }

    fn audit(
        &self,
        run_id: &IdString,
        step: &str,
        action: Action,
        detail: impl Into<String>,
        outputs: Option<Map<String, Value>>,
    ) -> Result<(), FlowError> {
        self.record(FlowEvent::Audit {
            run_id: run_id.clone(),
            entry: AuditEvent {
                timestamp: self.options.clock.now(),
                step: step.to_string(),
                action,
                detail: detail.into(),
                outputs,
            },
        })
    }

    fn close_dangling(&self, run_id: &IdString) -> Result<(), FlowError> {
        let step = self
            .lock()
            .runs
            .get(run_id)
            .and_then(|r| r.in_progress().map(str::to_string));
        match step {
            Some(step) => self.audit(run_id, &step, Action::Fail, "interrupted", None),
            None => Ok(()),
        }
    }

    /// Validates and stores a flow under its name, replacing any earlier
    /// flow of that name. Runs already started keep their frozen copy.
    pub fn define(&self, flow: &FlowDef) -> Result<(), FlowError> {
        validate(flow)?;
        self.record(FlowEvent::Define { flow: flow.clone() })
    }

    pub fn flow(&self, name: &str) -> Option<FlowDef> {
        self.lock().flows.get(name).cloned()
    }

    pub fn flows(&self) -> Vec<String> {
        self.lock().flows.keys().cloned().collect()
    }

    pub fn run(&self, run_id: &IdString) -> Option<FlowRun> {
        self.lock().runs.get(run_id).cloned()
    }

    pub fn runs(&self) -> Vec<IdString> {
        self.lock().runs.keys().cloned().collect()
    }

    pub fn audit_log(&self, run_id: &IdString) -> Result<Vec<AuditEvent>, FlowError> {
        self.run(run_id)
            .map(|r| r.audit)
            .ok_or_else(|| FlowError::NotFound(run_id.to_string()))
    }

    /// Starts a new run. Step failures end up in the returned run; only a
    /// broken log, an invalid flow or an interruption is an error.
    pub fn run_flow(
        &self,
        flow: &FlowDef,
        params: Map<String, Value>,
        services: &dyn FlowServices,
    ) -> Result<FlowRun, FlowError> {
        validate(flow)?;
        let run_id = self.options.suffixes.next_id(RUN_NAMESPACE)?;
        self.record(FlowEvent::Run {
            run_id: run_id.clone(),
            flow: flow.clone(),
            params,
        })?;
        self.execute(&run_id, services, false)
    }

    /// Runs the stored flow called `name`.
    pub fn run_named(
        &self,
        name: &str,
        params: Map<String, Value>,
        services: &dyn FlowServices,
    ) -> Result<FlowRun, FlowError> {
        let flow = self
            .flow(name)
            .ok_or_else(|| FlowError::NotFound(name.to_string()))?;
        self.run_flow(&flow, params, services)
    }

    /// Continues a failed or interrupted run from its first unfinished
    /// step. Finished steps are logged as skipped and not executed again.
    pub fn resume_flow(
        &self,
        run_id: &IdString,
        services: &dyn FlowServices,
    ) -> Result<FlowRun, FlowError> {
        {
            let inner = self.lock();
            let run = inner
                .runs
                .get(run_id)
                .ok_or_else(|| FlowError::NotFound(run_id.to_string()))?;
            if run.status == RunStatus::Completed || inner.active.contains(run_id) {
                return Err(FlowError::NotResumable(run_id.to_string()));
            }
        }
        self.close_dangling(run_id)?;
        self.execute(run_id, services, true)
    }

    fn execute(
        &self,
        run_id: &IdString,
        services: &dyn FlowServices,
        resuming: bool,
    ) -> Result<FlowRun, FlowError> {
        if !self.lock().active.insert(run_id.clone()) {
            return Err(FlowError::NotResumable(run_id.to_string()));
        }
        let _guard = ActiveGuard {
            engine: self,
            run_id: run_id.clone(),
        };
        let run = self
            .run(run_id)
            .ok_or_else(|| FlowError::NotFound(run_id.to_string()))?;
        for step in &run.flow.steps {
            let current = self.run(run_id).expect("run exists");
            if let Some(outputs) = current.outputs(&step.name) {
                if resuming {
                    self.audit(
                        run_id,
                        &step.name,
                        Action::Skip,
                        "done in an earlier attempt",
                        Some(outputs.clone()),
                    )?;
                }
                continue;
            }
            match self.run_step(&current, step, services)? {
                Outcome::Done => {}
                Outcome::Failed => break,
            }
        }
        Ok(self.run(run_id).expect("run exists"))
    }

    fn run_step(
        &self,
        run: &FlowRun,
        step: &StepDef,
        services: &dyn FlowServices,
    ) -> Result<Outcome, FlowError> {
        let run_id = &run.run_id;
        let interrupted = |_: Interrupted| FlowError::Interrupted(step.name.clone());
        let inputs = resolve_inputs(run, step);

        // An effect already performed under the same key is not repeated.
        if step.kind.is_effect() {
            if let Ok(inputs) = &inputs {
                if let Ok(key) = effect_key(&run.flow, step, inputs, services) {
                    let recorded = self.lock().effects.get(&key).cloned();
                    if let Some(outputs) = recorded {
                        self.audit(
                            run_id,
                            &step.name,
                            Action::Skip,
                            format!("reused effect {key}"),
                            Some(outputs),
                        )?;
                        return Ok(Outcome::Done);
                    }
                }
            }
        }

        self.audit(run_id, &step.name, Action::Start, step.kind.name(), None)?;
        let inputs = match inputs {
            Ok(inputs) => inputs,
            Err(detail) => {
                self.audit(run_id, &step.name, Action::Fail, detail, None)?;
                return Ok(Outcome::Failed);
            }
        };
        let max_retries = match run.flow.on_error {
            OnError::Halt => 0,
            OnError::Retry { max } => max,
        };
        let mut attempt = 0;
        loop {
            services
                .checkpoint(&step.name, Phase::BeforeWork)
                .map_err(interrupted)?;
            let result = self.attempt(run, step, &inputs, services);
            match result {
                Ok((outputs, key)) => {
                    if let Some(key) = key {
                        services
                            .checkpoint(&step.name, Phase::AfterEffect)
                            .map_err(interrupted)?;
                        self.record(FlowEvent::Effect {
                            key,
                            outputs: outputs.clone(),
                        })?;
                    }
                    self.audit(run_id, &step.name, Action::Finish, "", Some(outputs))?;
                    return Ok(Outcome::Done);
                }
                Err(failure) if failure.retryable && attempt < max_retries => {
                    let wait = Duration::from_secs(1 << attempt.min(2));
                    self.audit(
                        run_id,
                        &step.name,
                        Action::Retry,
                        format!("{} (waiting {}s)", failure.detail, wait.as_secs()),
                        None,
                    )?;
                    self.options.clock.sleep(wait);
                    attempt += 1;
                }
                Err(failure) => {
                    self.audit(run_id, &step.name, Action::Fail, failure.detail, None)?;
                    return Ok(Outcome::Failed);
                }
            }
        }
    }

    /// One try at a step. Effect steps also return the key they ran under.
    fn attempt(
        &self,
        run: &FlowRun,
        step: &StepDef,
        inputs: &Map<String, Value>,
        services: &dyn FlowServices,
    ) -> Result<(Map<String, Value>, Option<String>), StepFailure> {
        let key = if step.kind.is_effect() {
            Some(effect_key(&run.flow, step, inputs, services).map_err(StepFailure::transient)?)
        } else {
            None
        };
        let outputs = perform(step, inputs, key.as_deref(), services)?;
        Ok((outputs, key))
    }
}

fn resolve_inputs(run: &FlowRun, step: &StepDef) -> Result<Map<String, Value>, String> {
    let mut inputs = Map::new();
    for (name, reference) in &step.inputs {
        let value = match Source::parse(reference) {
            Some(Source::Param(p)) => run.params.get(&p).cloned(),
            Some(Source::Output { step: from, output }) => {
                run.outputs(&from).and_then(|o| o.get(&output)).cloned()
            }
            None => None,
        };
        match value {
            Some(v) => {
                inputs.insert(name.clone(), v);
            }
            None => return Err(format!("input `{name}` ({reference}) has no value")),
        }
    }
    Ok(inputs)
}

fn text<'a>(inputs: &'a Map<String, Value>, name: &str) -> Result<&'a str, StepFailure> {
    inputs
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| StepFailure::permanent(format!("input `{name}` must be text")))
}

fn param<'a>(step: &'a StepDef, name: &str) -> Option<&'a str> {
    step.params.get(name).and_then(Value::as_str)
}

/// Key under which an effect step's result is remembered: the flow, the
/// step, and the content it acts on.
fn effect_key(
    flow: &FlowDef,
    step: &StepDef,
    inputs: &Map<String, Value>,
    services: &dyn FlowServices,
) -> Result<String, String> {
    let content = match step.kind {
        StepKind::IngestFile => {
            let location = inputs
                .get("file")
                .and_then(Value::as_str)
                .ok_or("input `file` must be text")?;
            Value::String(Algorithm::Sha256.digest(&services.read_source(location)?))
        }
        _ => Value::Object(inputs.clone()),
    };
    let material = json!([flow.name, step.name, step.kind, step.params, content]);
    Ok(Algorithm::Sha256.digest(material.to_string().as_bytes()))
}

fn perform(
    step: &StepDef,
    inputs: &Map<String, Value>,
    key: Option<&str>,
    services: &dyn FlowServices,
) -> Result<Map<String, Value>, StepFailure> {
    let out = |v: Value| -> Map<String, Value> { v.as_object().cloned().unwrap_or_default() };
    match step.kind {
        StepKind::IngestFile => {
            let location = text(inputs, "file")?;
            let bytes = services
                .read_source(location)
                .map_err(StepFailure::transient)?;
            let name = base_name(location);
            let url = services
                .store(&name, &bytes)
                .map_err(StepFailure::transient)?;
            Ok(out(json!({
                "url": url,
                "name": name,
                "length": bytes.len(),
                "sha256": Algorithm::Sha256.digest(&bytes),
            })))
        }
        StepKind::ComputeChecksum => {
            let algorithm: Algorithm = param(step, "algorithm")
                .unwrap_or("sha256")
                .parse()
                .map_err(|e: crate::bag::BagError| StepFailure::permanent(e.to_string()))?;
            let bytes = services
                .fetch(text(inputs, "file")?)
                .map_err(StepFailure::transient)?;
            Ok(out(json!({
                "algorithm": algorithm.name(),
                "digest": algorithm.digest(&bytes),
                "length": bytes.len(),
            })))
        }
        StepKind::ExtractMetadata => {
            let name = param(step, "extractor").unwrap_or("basic");
            let extractor = services
                .extractor(name)
                .ok_or_else(|| StepFailure::permanent(format!("no extractor named `{name}`")))?;
            let url = text(inputs, "file")?;
            let bytes = services.fetch(url).map_err(StepFailure::transient)?;
            let file_name = inputs
                .get("name")
                .and_then(Value::as_str)
                .map_or_else(|| base_name(url), str::to_string);
            let metadata = extractor
                .extract(&file_name, &bytes)
                .map_err(StepFailure::permanent)?;
            Ok(out(json!({ "metadata": metadata })))
        }
        StepKind::BuildBag => {
            let url = text(inputs, "file")?;
            let bytes = services.fetch(url).map_err(StepFailure::transient)?;
            let name = inputs
                .get("name")
                .and_then(Value::as_str)
                .map_or_else(|| base_name(url), str::to_string);
            let path =
                BagPath::in_payload(&name).map_err(|e| StepFailure::permanent(e.to_string()))?;
            let mut builder = BagBuilder::new();
            if let Some(Value::Object(info)) = step.params.get("info") {
                for (label, value) in info {
                    let value = value
                        .as_str()
                        .map_or_else(|| value.to_string(), str::to_string);
                    builder = builder.info(label.clone(), value);
                }
            }
            if let Some(metadata) = inputs.get("metadata") {
                let manifest = json!({
                    "@context": "https://w3id.org/bundle/context",
                    "aggregates": [{ "uri": format!("../{path}") }],
                    "describes": metadata,
                });
                builder = builder.metadata(MetadataBlock::ResearchObject(manifest));
            }
            builder
                .add_file(path, bytes)
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let bag = builder
                .build()
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let archive = bag
                .to_archive("bag", ArchiveFormat::Tar, true)
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let stored = services
                .store("bag.tar", &archive)
                .map_err(StepFailure::transient)?;
            Ok(out(json!({
                "bag": stored,
                "digest": Algorithm::Sha256.digest(&archive),
                "oxum": bag.computed_oxum(),
            })))
        }
        StepKind::MakeHoley => {
            let archive = services
                .fetch(text(inputs, "bag")?)
                .map_err(StepFailure::transient)?;
            let bag =
                read_bag_bytes(&archive).map_err(|e| StepFailure::permanent(e.to_string()))?;
            let mut urls = HashMap::new();
            for file in bag.payload() {
                let url = services
                    .store(&base_name(file.path.as_str()), &file.data)
                    .map_err(StepFailure::transient)?;
                urls.insert(file.path.clone(), url);
            }
            let holey = bag
                .make_holey(|_| true, |p| urls.get(p).cloned())
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let archive = holey
                .to_archive("bag", ArchiveFormat::Tar, true)
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let stored = services
                .store("bag.tar", &archive)
                .map_err(StepFailure::transient)?;
            Ok(out(json!({
                "bag": stored,
                "digest": Algorithm::Sha256.digest(&archive),
                "fetched": holey.fetch().len(),
            })))
        }
        StepKind::QualityCheck => {
            let predicate = param(step, "predicate").unwrap_or_default();
            let expr = Expr::parse(predicate).map_err(StepFailure::permanent)?;
            match expr.eval(inputs) {
                Ok(true) => Ok(out(json!({ "passed": true }))),
                Ok(false) => Err(StepFailure::permanent(format!(
                    "predicate does not hold: {predicate}"
                ))),
                Err(e) => Err(StepFailure::permanent(e)),
            }
        }
        StepKind::MintId => {
            let digest = text(inputs, "digest")?;
            let locations = match inputs.get("location") {
                Some(Value::String(s)) => vec![s.clone()],
                Some(Value::Array(items)) => items
                    .iter()
                    .filter_map(Value::as_str)
                    .map(str::to_string)
                    .collect(),
                _ => Vec::new(),
            };
            let title = inputs
                .get("title")
                .and_then(Value::as_str)
                .or_else(|| param(step, "title"))
                .map(str::to_string);
            let request = MintRequest {
                creator: param(step, "creator").unwrap_or("flow").to_string(),
                checksum: Checksum::sha256(digest),
                locations,
                title,
                namespace: param(step, "namespace").unwrap_or("MINID").to_string(),
            };
            let record = services
                .mint(&request, key.expect("effect steps have keys"))
                .map_err(StepFailure::transient)?;
            Ok(out(
                json!({ "id": record.id, "checksum": record.checksum.digest }),
            ))
        }
        StepKind::RegisterRecord => {
            let table = TableRef::parse(param(step, "table").unwrap_or_default())
                .map_err(|e| StepFailure::permanent(e.to_string()))?;
            let mut values = match step.params.get("values") {
                Some(Value::Object(constants)) => constants.clone(),
                _ => Map::new(),
            };
            values.extend(inputs.clone());
            let (rid, citation) = services
                .register(&table, values, key.expect("effect steps have keys"))
                .map_err(StepFailure::transient)?;
            Ok(out(json!({ "rid": rid, "citation": citation })))
        }
    }
}
