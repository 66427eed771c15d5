use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::acl::{Access, AclPolicy, Principal};
use super::model::{
    CatalogModel, ModelChange, TableDef, TableKind, TableRef, ASSET_CHECKSUM, ASSET_LENGTH, RCT,
    RID, RMT,
};
use super::value::coerce;
use super::CatalogError;
use crate::bag::Algorithm;
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::idspace::{derive_suffix, parse_id, IdString, SuffixSource};
use crate::jsonlog::{AppendLog, Durability};

/// One line of the operation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor: String,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Model {
        change: ModelChange,
    },
    Insert {
        table: TableRef,
        rid: IdString,
        values: Map<String, Value>,
    },
    Update {
        table: TableRef,
        rid: IdString,
        values: Map<String, Value>,
    },
    Delete {
        table: TableRef,
        rid: IdString,
    },
}

/// One immutable version of one row, with values keyed by column id.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct Stored {
    pub rid: IdString,
    pub table: TableRef,
    pub values: BTreeMap<u32, Value>,
    pub rct: Timestamp,
    pub rmt: Timestamp,
    pub model_version: u64,
    pub deleted: bool,
    pub snapshot: u64,
}

/// A row version as seen through a particular model: values keyed by the
/// column names of that model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordVersion {
    #[serde(rename = "RID")]
    pub rid: IdString,
    pub table: TableRef,
    pub values: Map<String, Value>,
    #[serde(rename = "RCT")]
    pub rct: Timestamp,
    #[serde(rename = "RMT")]
    pub rmt: Timestamp,
    pub model_version: u64,
    pub snapshot: u64,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub table: TableRef,
    pub record: RecordVersion,
    pub citation: String,
}

pub(super) type Key = (TableRef, IdString);

enum Planned {
    Model(Arc<CatalogModel>),
    Version(Stored),
}

#[derive(Default)]
pub(super) struct State {
    pub seq: u64,
    /// Model as of each model change, keyed by the snapshot that made it.
    pub models: Vec<(u64, Arc<CatalogModel>)>,
    pub versions: HashMap<Key, Vec<Arc<Stored>>>,
    /// Every RID that ever had a row in each table.
    pub rows: BTreeMap<TableRef, BTreeSet<IdString>>,
    /// The table a RID was minted in. Extension rows share their parent's.
    pub homes: HashMap<IdString, TableRef>,
}

impl State {
    fn new() -> Self {
        State {
            models: vec![(0, Arc::new(CatalogModel::default()))],
            ..State::default()
        }
    }

    pub fn model(&self) -> &Arc<CatalogModel> {
        &self.models.last().expect("initial model").1
    }

    pub fn model_at(&self, snapshot: u64) -> &Arc<CatalogModel> {
        let i = self.models.partition_point(|(s, _)| *s <= snapshot);
        &self.models[i - 1].1
    }

    pub fn check_snapshot(&self, snapshot: Option<u64>) -> Result<u64, CatalogError> {
        match snapshot {
            None => Ok(self.seq),
            Some(s) if s <= self.seq => Ok(s),
            Some(s) => Err(CatalogError::NotFound(format!("snapshot {s}"))),
        }
    }

    pub fn version_at(&self, key: &Key, snapshot: u64) -> Option<&Arc<Stored>> {
        let versions = self.versions.get(key)?;
        let i = versions.partition_point(|v| v.snapshot <= snapshot);
        i.checked_sub(1).map(|i| &versions[i])
    }

    pub fn live_at(&self, key: &Key, snapshot: u64) -> Option<&Arc<Stored>> {
        self.version_at(key, snapshot).filter(|v| !v.deleted)
    }

    /// Live rows of `table` at `snapshot`, RID ascending.
    pub fn live_rows(&self, table: &TableRef, snapshot: u64) -> Vec<&Arc<Stored>> {
        let Some(rids) = self.rows.get(table) else {
            return Vec::new();
        };
        rids.iter()
            .filter_map(|rid| self.live_at(&(table.clone(), rid.clone()), snapshot))
            .collect()
    }

    /// Value of column `name` (current names of `model`) in a stored row.
    pub fn value_of(def: &TableDef, row: &Stored, name: &str) -> Value {
        match name {
            RID => Value::String(row.rid.to_string()),
            RCT => Value::String(row.rct.to_string()),
            RMT => Value::String(row.rmt.to_string()),
            _ => def
                .column(name)
                .and_then(|c| row.values.get(&c.id))
                .cloned()
                .unwrap_or(Value::Null),
        }
    }

    pub fn render(model: &CatalogModel, row: &Stored) -> RecordVersion {
        let mut values = Map::new();
        if let Some(def) = model.table(&row.table) {
            for column in &def.columns {
                values.insert(
                    column.name.clone(),
                    row.values.get(&column.id).cloned().unwrap_or(Value::Null),
                );
            }
        }
        RecordVersion {
            rid: row.rid.clone(),
            table: row.table.clone(),
            values,
            rct: row.rct,
            rmt: row.rmt,
            model_version: row.model_version,
            snapshot: row.snapshot,
            deleted: row.deleted,
        }
    }

    fn plan(&self, entry: &LogEntry) -> Result<Planned, CatalogError> {
        let model = self.model();
        match &entry.op {
            Op::Model { change } => Ok(Planned::Model(Arc::new(model.apply(change)?))),
            Op::Insert { table, rid, values } => {
                let def = data_table(model, table)?;
                let key = (table.clone(), rid.clone());
                if def.kind == TableKind::Extension {
                    let parent = def.extends.clone().expect("extension has a parent");
                    if self
                        .live_at(&(parent.clone(), rid.clone()), self.seq)
                        .is_none()
                    {
                        return Err(CatalogError::DanglingReference(format!(
                            "no live {parent} row {rid}"
                        )));
                    }
                    if self.live_at(&key, self.seq).is_some() {
                        return Err(CatalogError::KeyViolation(format!(
                            "{table} already extends {rid}"
                        )));
                    }
                } else if self.homes.contains_key(rid) {
                    return Err(CatalogError::DuplicateName(format!("RID {rid}")));
                }
                let assigned = assign(model, def, table, &BTreeMap::new(), values, true)?;
                let row = Stored {
                    rid: rid.clone(),
                    table: table.clone(),
                    values: assigned,
                    rct: entry.timestamp,
                    rmt: entry.timestamp,
                    model_version: model.version,
                    deleted: false,
                    snapshot: entry.seq,
                };
                self.check_constraints(model, def, &row)?;
                Ok(Planned::Version(row))
            }
            Op::Update { table, rid, values } => {
                let def = data_table(model, table)?;
                let prev = self
                    .live_at(&(table.clone(), rid.clone()), self.seq)
                    .ok_or_else(|| CatalogError::NotFound(format!("{table} row {rid}")))?;
                let assigned = assign(model, def, table, &prev.values, values, false)?;
                let row = Stored {
                    values: assigned,
                    rmt: entry.timestamp.max(prev.rmt),
                    model_version: model.version,
                    snapshot: entry.seq,
                    ..(**prev).clone()
                };
                self.check_constraints(model, def, &row)?;
                Ok(Planned::Version(row))
            }
            Op::Delete { table, rid } => {
                let prev = self
                    .live_at(&(table.clone(), rid.clone()), self.seq)
                    .ok_or_else(|| CatalogError::NotFound(format!("{table} row {rid}")))?;
                Ok(Planned::Version(Stored {
                    rmt: entry.timestamp.max(prev.rmt),
                    model_version: model.version,
                    deleted: true,
                    snapshot: entry.seq,
                    ..(**prev).clone()
                }))
            }
        }
    }

    /// Uniqueness keys and foreign keys, checked against the current heads.
    fn check_constraints(
        &self,
        model: &CatalogModel,
        def: &TableDef,
        row: &Stored,
    ) -> Result<(), CatalogError> {
        for key in &def.keys {
            let mine: Vec<Value> = key.iter().map(|c| State::value_of(def, row, c)).collect();
            if mine.iter().any(Value::is_null) {
                continue;
            }
            let clash = self
                .live_rows(&row.table, self.seq)
                .into_iter()
                .find(|other| {
                    other.rid != row.rid
                        && key
                            .iter()
                            .zip(&mine)
                            .all(|(c, v)| &State::value_of(def, other, c) == v)
                });
            if let Some(other) = clash {
                return Err(CatalogError::KeyViolation(format!(
                    "{} ({}) duplicates row {}",
                    row.table,
                    key.join(", "),
                    other.rid
                )));
            }
        }
        for fk in &def.foreign_keys {
            let mine: Vec<Value> = fk
                .columns
                .iter()
                .map(|c| State::value_of(def, row, c))
                .collect();
            if mine.iter().any(Value::is_null) {
                continue;
            }
            let target = model.require(&fk.table)?;
            let found = if fk.ref_columns == [RID] {
                mine[0]
                    .as_str()
                    .and_then(|s| parse_id(s).ok())
                    .is_some_and(|rid| self.live_at(&(fk.table.clone(), rid), self.seq).is_some())
            } else {
                self.live_rows(&fk.table, self.seq)
                    .into_iter()
                    .any(|other| {
                        fk.ref_columns
                            .iter()
                            .zip(&mine)
                            .all(|(c, v)| &State::value_of(target, other, c) == v)
                    })
            };
            if !found {
                return Err(CatalogError::DanglingReference(format!(
                    "{}.{} = {} matches no live {} row",
                    row.table,
                    fk.columns.join(","),
                    Value::Array(mine),
                    fk.table
                )));
            }
        }
        Ok(())
    }

    fn commit(&mut self, seq: u64, planned: Planned) {
        self.seq = seq;
        match planned {
            Planned::Model(model) => self.models.push((seq, model)),
            Planned::Version(row) => {
                if !self.homes.contains_key(&row.rid) {
                    self.homes.insert(row.rid.clone(), row.table.clone());
                }
                self.rows
                    .entry(row.table.clone())
                    .or_default()
                    .insert(row.rid.clone());
                self.versions
                    .entry((row.table.clone(), row.rid.clone()))
                    .or_default()
                    .push(Arc::new(row));
            }
        }
    }

    /// Home table of `rid`, i.e. the table it was first inserted into.
    pub fn home(&self, rid: &IdString) -> Result<&TableRef, CatalogError> {
        self.homes
            .get(rid)
            .ok_or_else(|| CatalogError::NotFound(format!("RID {rid}")))
    }
}

fn data_table<'a>(model: &'a CatalogModel, table: &TableRef) -> Result<&'a TableDef, CatalogError> {
    let def = model.require(table)?;
    if def.kind == TableKind::Vocabulary {
        return Err(CatalogError::InvalidChange(format!(
            "{table} is a vocabulary; edit it with model changes"
        )));
    }
    Ok(def)
}

/// Merges `incoming` (column names or aliases → raw values) over `base`,
/// coercing each value. Inserts must supply every non-nullable column;
/// updates may not null one out.
fn assign(
    model: &CatalogModel,
    def: &TableDef,
    table: &TableRef,
    base: &BTreeMap<u32, Value>,
    incoming: &Map<String, Value>,
    insert: bool,
) -> Result<BTreeMap<u32, Value>, CatalogError> {
    let mut values = base.clone();
    for (name, raw) in incoming {
        if name == RID && def.kind == TableKind::Extension {
            continue;
        }
        if [RID, RCT, RMT].contains(&name.as_str()) {
            return Err(CatalogError::TypeViolation {
                column: name.clone(),
                detail: "system columns are assigned by the catalog".into(),
            });
        }
        let column = def
            .column(name)
            .ok_or_else(|| CatalogError::UnknownColumn(format!("{table}.{name}")))?;
        let value = coerce(model, column, raw)?;
        if value.is_null() {
            if !column.nullable {
                return Err(CatalogError::TypeViolation {
                    column: column.name.clone(),
                    detail: "a value is required".into(),
                });
            }
            values.remove(&column.id);
        } else {
            values.insert(column.id, value);
        }
    }
    if insert {
        if let Some(missing) = def
            .columns
            .iter()
            .find(|c| !c.nullable && !values.contains_key(&c.id))
        {
            return Err(CatalogError::TypeViolation {
                column: missing.name.clone(),
                detail: "a value is required".into(),
            });
        }
    }
    if def.kind == TableKind::Asset {
        let checksum = def
            .column(ASSET_CHECKSUM)
            .and_then(|c| values.get_mut(&c.id));
        if let Some(Value::String(digest)) = checksum {
            *digest = digest.to_ascii_lowercase();
            if !Algorithm::Sha256.is_well_formed(digest) {
                return Err(CatalogError::TypeViolation {
                    column: ASSET_CHECKSUM.into(),
                    detail: format!("`{digest}` is not a SHA-256 hex digest"),
                });
            }
        }
        let length = def.column(ASSET_LENGTH).and_then(|c| values.get(&c.id));
        if length.and_then(Value::as_i64).is_some_and(|n| n < 0) {
            return Err(CatalogError::TypeViolation {
                column: ASSET_LENGTH.into(),
                detail: "negative length".into(),
            });
        }
    }
    Ok(values)
}

/// Canonical log form of a planned row: current column names → values.
fn named_values(def: &TableDef, values: &BTreeMap<u32, Value>) -> Map<String, Value> {
    values
        .iter()
        .filter_map(|(id, v)| def.column_by_id(*id).map(|c| (c.name.clone(), v.clone())))
        .collect()
}

#[derive(Clone)]
pub struct CatalogOptions {
    pub clock: Arc<dyn Clock>,
    pub suffixes: Arc<SuffixSource>,
    /// Namespace of minted RIDs.
    pub namespace: String,
    /// Prefix of citation URLs, e.g. `https://catalog.example.org`.
    pub base_url: String,
    pub acl: AclPolicy,
    pub durability: Durability,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        CatalogOptions {
            clock: Arc::new(SystemClock),
            suffixes: Arc::new(SuffixSource::from_entropy()),
            namespace: "CAT".into(),
            base_url: "http://localhost:8080".into(),
            acl: AclPolicy::default(),
            durability: Durability::Flush,
        }
    }
}

pub struct Catalog {
    pub(super) state: RwLock<State>,
    writer: Mutex<AppendLog<LogEntry>>,
    pub(super) options: CatalogOptions,
    acl: RwLock<AclPolicy>,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog")
            .field("snapshot", &self.snapshot())
            .finish()
    }
}

impl Catalog {
    pub fn in_memory(options: CatalogOptions) -> Self {
        Catalog {
            state: RwLock::new(State::new()),
            writer: Mutex::new(AppendLog::memory()),
            acl: RwLock::new(options.acl.clone()),
            options,
        }
    }

    /// Opens the log at `path` and replays it. Every entry is re-validated;
    /// one that no longer applies marks the log corrupt.
    pub fn open(path: &Path, options: CatalogOptions) -> Result<Self, CatalogError> {
        let (log, entries) = AppendLog::<LogEntry>::open(path, options.durability)?;
        let mut state = State::new();
        for (i, entry) in entries.iter().enumerate() {
            let corrupt = |detail: String| CatalogError::CorruptLog {
                line: i + 1,
                detail,
            };
            if entry.seq != state.seq + 1 {
                return Err(corrupt(format!(
                    "sequence {} follows {}",
                    entry.seq, state.seq
                )));
            }
            let planned = state.plan(entry).map_err(|e| corrupt(e.to_string()))?;
            state.commit(entry.seq, planned);
        }
        Ok(Catalog {
            state: RwLock::new(state),
            writer: Mutex::new(log),
            acl: RwLock::new(options.acl.clone()),
            options,
        })
    }

    pub fn namespace(&self) -> &str {
        &self.options.namespace
    }

    pub fn acl(&self) -> AclPolicy {
        self.acl.read().unwrap().clone()
    }

    pub fn set_acl(&self, policy: AclPolicy) {
        *self.acl.write().unwrap() = policy;
    }

    pub(super) fn authorize(
        &self,
        actor: &Principal,
        table: Option<&TableRef>,
        needed: Access,
    ) -> Result<(), CatalogError> {
        if self.acl.read().unwrap().allows(actor, table, needed) {
            Ok(())
        } else {
            Err(CatalogError::Forbidden {
                actor: actor.name.clone(),
                needed,
                target: table.map_or_else(|| "the catalog".to_string(), |t| t.to_string()),
            })
        }
    }

    pub(super) fn read_state(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap()
    }

    /// The current snapshot id. Snapshot 0 is the empty catalog.
    pub fn snapshot(&self) -> u64 {
        self.read_state().seq
    }

    pub fn model(&self) -> CatalogModel {
        (**self.read_state().model()).clone()
    }

    pub fn model_at(&self, snapshot: u64) -> Result<CatalogModel, CatalogError> {
        let state = self.read_state();
        let s = state.check_snapshot(Some(snapshot))?;
        Ok((**state.model_at(s)).clone())
    }

    /// Plans `op`, appends it, then applies it. The writer lock keeps the
    /// state unchanged between planning and applying.
    fn write(&self, actor: &Principal, op: Op) -> Result<(u64, Arc<CatalogModel>), CatalogError> {
        let mut writer = self.writer.lock().unwrap();
        let (entry, planned) = {
            let state = self.read_state();
            let mut entry = LogEntry {
                seq: state.seq + 1,
                timestamp: self.options.clock.now(),
                actor: actor.name.clone(),
                op,
            };
            let planned = state.plan(&entry)?;
            if let Planned::Version(row) = &planned {
                let def = state.model().require(&row.table)?;
                let all = named_values(def, &row.values);
                match &mut entry.op {
                    Op::Insert { values, .. } => *values = all,
                    Op::Update { values, .. } => *values = touched(def, values, all),
                    _ => {}
                }
            }
            (entry, planned)
        };
        writer.append(&entry)?;
        let mut state = self.state.write().unwrap();
        state.commit(entry.seq, planned);
        Ok((entry.seq, state.model().clone()))
    }

    pub fn apply_model_change(
        &self,
        change: ModelChange,
        actor: &Principal,
    ) -> Result<CatalogModel, CatalogError> {
        self.authorize(actor, change.existing_target(), Access::ModelChange)?;
        let (_, model) = self.write(actor, Op::Model { change })?;
        Ok((*model).clone())
    }

    fn head(&self, table: &TableRef, rid: &IdString) -> RecordVersion {
        let state = self.read_state();
        let row = state
            .version_at(&(table.clone(), rid.clone()), state.seq)
            .expect("just written");
        State::render(state.model(), row)
    }

    /// Inserts a row with a freshly minted RID. Extension rows instead name
    /// their parent's RID in the `RID` value.
    pub fn insert(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        self.authorize(actor, Some(table), Access::Write)?;
        let rid = self.rid_for(table, &values)?;
        self.write(
            actor,
            Op::Insert {
                table: table.clone(),
                rid: rid.clone(),
                values,
            },
        )?;
        Ok(self.head(table, &rid))
    }

    fn rid_for(
        &self,
        table: &TableRef,
        values: &Map<String, Value>,
    ) -> Result<IdString, CatalogError> {
        let is_extension = self
            .read_state()
            .model()
            .table(table)
            .is_some_and(|d| d.kind == TableKind::Extension);
        if is_extension {
            let text = values.get(RID).and_then(Value::as_str).ok_or_else(|| {
                CatalogError::TypeViolation {
                    column: RID.into(),
                    detail: "extension rows name the RID of the row they extend".into(),
                }
            })?;
            return Ok(parse_id(text)?);
        }
        loop {
            let rid = self.options.suffixes.next_id(&self.options.namespace)?;
            if !self.read_state().homes.contains_key(&rid) {
                return Ok(rid);
            }
        }
    }

    /// Inserts under the RID derived from `key`. Repeating the call with the
    /// same key and values returns the existing row instead of a new one.
    pub fn insert_idempotent(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        key: &str,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        self.authorize(actor, Some(table), Access::Write)?;
        let rid = IdString::new(&self.options.namespace, &derive_suffix(key))?;
        let existing = {
            let state = self.read_state();
            match state.homes.get(&rid) {
                None => None,
                Some(home) if home != table => {
                    return Err(CatalogError::KeyConflict(rid.to_string()))
                }
                Some(_) => {
                    let row = state
                        .version_at(&(table.clone(), rid.clone()), state.seq)
                        .expect("home row");
                    let model = state.model();
                    let def = model.require(table)?;
                    let wanted = assign(model, def, table, &BTreeMap::new(), &values, true)?;
                    if row.deleted || row.values != wanted {
                        return Err(CatalogError::KeyConflict(rid.to_string()));
                    }
                    Some(State::render(model, row))
                }
            }
        };
        if let Some(found) = existing {
            return Ok(found);
        }
        self.write(
            actor,
            Op::Insert {
                table: table.clone(),
                rid: rid.clone(),
                values,
            },
        )?;
        Ok(self.head(table, &rid))
    }

    /// Updates the row `rid` in its home table.
    pub fn update(
        &self,
        rid: &IdString,
        values: Map<String, Value>,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        let table = self.read_state().home(rid)?.clone();
        self.update_row(&table, rid, values, None, actor)
    }

    /// Updates one row of `table`. With `expected_rmt`, fails with
    /// `Conflict` if the row was modified since that time.
    pub fn update_row(
        &self,
        table: &TableRef,
        rid: &IdString,
        values: Map<String, Value>,
        expected_rmt: Option<Timestamp>,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        self.authorize(actor, Some(table), Access::Write)?;
        if let Some(expected) = expected_rmt {
            let state = self.read_state();
            if let Some(head) = state.live_at(&(table.clone(), rid.clone()), state.seq) {
                if head.rmt != expected {
                    return Err(CatalogError::Conflict {
                        rid: rid.to_string(),
                        current: head.rmt.to_string(),
                    });
                }
            }
        }
        self.write(
            actor,
            Op::Update {
                table: table.clone(),
                rid: rid.clone(),
                values,
            },
        )?;
        Ok(self.head(table, rid))
    }

    /// Tombstones the row `rid` in its home table.
    pub fn delete(&self, rid: &IdString, actor: &Principal) -> Result<RecordVersion, CatalogError> {
        let table = self.read_state().home(rid)?.clone();
        self.delete_row(&table, rid, actor)
    }

    pub fn delete_row(
        &self,
        table: &TableRef,
        rid: &IdString,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        self.authorize(actor, Some(table), Access::Write)?;
        self.write(
            actor,
            Op::Delete {
                table: table.clone(),
                rid: rid.clone(),
            },
        )?;
        Ok(self.head(table, rid))
    }

    /// The live row `rid` of its home table at `snapshot` (default: now).
    pub fn get(
        &self,
        rid: &IdString,
        snapshot: Option<u64>,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        let table = self.read_state().home(rid)?.clone();
        self.get_row(&table, rid, snapshot, actor)
    }

    pub fn get_row(
        &self,
        table: &TableRef,
        rid: &IdString,
        snapshot: Option<u64>,
        actor: &Principal,
    ) -> Result<RecordVersion, CatalogError> {
        self.authorize(actor, Some(table), Access::Read)?;
        let state = self.read_state();
        let s = state.check_snapshot(snapshot)?;
        let row = state
            .live_at(&(table.clone(), rid.clone()), s)
            .ok_or_else(|| CatalogError::NotFound(format!("{table} row {rid} at snapshot {s}")))?;
        Ok(State::render(state.model_at(s), row))
    }

    /// Every version of `rid` in its home table, oldest first, rendered
    /// with the current model.
    pub fn history(
        &self,
        rid: &IdString,
        actor: &Principal,
    ) -> Result<Vec<RecordVersion>, CatalogError> {
        let state = self.read_state();
        let table = state.home(rid)?.clone();
        self.authorize(actor, Some(&table), Access::Read)?;
        let model = state.model();
        Ok(state.versions[&(table, rid.clone())]
            .iter()
            .map(|row| State::render(model, row))
            .collect())
    }

    /// The citable landing reference for `rid`. Tombstoned rows still
    /// resolve, flagged as deleted.
    pub fn resolve_rid(
        &self,
        rid: &IdString,
        actor: &Principal,
    ) -> Result<Resolution, CatalogError> {
        let state = self.read_state();
        let table = state.home(rid)?.clone();
        self.authorize(actor, Some(&table), Access::Read)?;
        let row = state
            .version_at(&(table.clone(), rid.clone()), state.seq)
            .expect("home row");
        Ok(Resolution {
            table,
            record: State::render(state.model(), row),
            citation: self.citation_url(rid),
        })
    }

    pub fn citation_url(&self, rid: &IdString) -> String {
        format!(
            "{}/v1/catalog/entity/{rid}",
            self.options.base_url.trim_end_matches('/')
        )
    }

    /// Number of record versions ever written.
    pub fn version_count(&self) -> usize {
        self.read_state().versions.values().map(Vec::len).sum()
    }
}

/// For updates, the log keeps only the columns the request touched.
fn touched(
    def: &TableDef,
    requested: &Map<String, Value>,
    all: Map<String, Value>,
) -> Map<String, Value> {
    requested
        .keys()
        .filter_map(|name| def.column(name))
        .map(|c| {
            (
                c.name.clone(),
                all.get(&c.name).cloned().unwrap_or(Value::Null),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::model::{ColumnSpec, ForeignKey, ValueType, VocabularyTerm};
    use crate::clock::ManualClock;
    use serde_json::json;

    fn t(s: &str) -> TableRef {
        TableRef::parse(s).unwrap()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn options(clock: Arc<ManualClock>) -> CatalogOptions {
        CatalogOptions {
            clock,
            suffixes: Arc::new(SuffixSource::seeded(11)),
            namespace: "SYNAPSE".into(),
            ..CatalogOptions::default()
        }
    }

    fn admin() -> Principal {
        Principal::new("admin", &["curator"])
    }

    fn setup(cat: &Catalog) {
        let a = admin();
        cat.apply_model_change(
            ModelChange::AddVocabulary {
                table: t("Vocab:Status"),
                terms: vec![
                    VocabularyTerm::new("completed").with_synonyms(&["done"]),
                    VocabularyTerm::new("in-progress"),
                ],
            },
            &a,
        )
        .unwrap();
        cat.apply_model_change(
            ModelChange::AddTable {
                table: t("Lab:Protocol"),
                kind: TableKind::Entity,
                columns: vec![
                    ColumnSpec::new("Name", ValueType::Text).required(),
                    ColumnSpec::new("Description", ValueType::Text),
                    ColumnSpec::term("Status", t("Vocab:Status")),
                ],
                keys: vec![vec!["Name".into()]],
                foreign_keys: vec![],
            },
            &a,
        )
        .unwrap();
    }

    fn fresh() -> (Catalog, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::default());
        let cat = Catalog::in_memory(options(clock.clone()));
        setup(&cat);
        (cat, clock)
    }

    #[test]
    fn insert_then_get() {
        let (cat, _) = fresh();
        let rec = cat
            .insert(
                &t("Lab:Protocol"),
                obj(json!({"Name": "fixation", "Status": "Done"})),
                &admin(),
            )
            .unwrap();
        assert_eq!(rec.rid.namespace(), "SYNAPSE");
        assert_eq!(rec.values["Status"], json!("completed"));
        assert_eq!(rec.values["Description"], Value::Null);
        assert_eq!(rec.rct, rec.rmt);
        assert_eq!(cat.get(&rec.rid, None, &admin()).unwrap(), rec);
    }

    #[test]
    fn insert_errors() {
        let (cat, _) = fresh();
        let p = t("Lab:Protocol");
        let code = |v: Value| cat.insert(&p, obj(v), &admin()).unwrap_err().code();
        assert_eq!(code(json!({"Description": "no name"})), "TypeViolation");
        assert_eq!(code(json!({"Name": 3})), "TypeViolation");
        assert_eq!(
            code(json!({"Name": "x", "Status": "finnished"})),
            "UnknownTerm"
        );
        assert_eq!(code(json!({"Name": "x", "Colour": "red"})), "UnknownColumn");
        assert_eq!(
            code(json!({"Name": "x", "RCT": "2020-01-01T00:00:00Z"})),
            "TypeViolation"
        );
        cat.insert(&p, obj(json!({"Name": "x"})), &admin()).unwrap();
        assert_eq!(code(json!({"Name": "x"})), "KeyViolation");
    }

    #[test]
    fn read_only_actor_cannot_insert() {
        let (cat, _) = fresh();
        cat.set_acl(AclPolicy::uniform(Access::Read).grant("curator", Access::ModelChange));
        let reader = Principal::new("student", &["reader"]);
        let err = cat
            .insert(&t("Lab:Protocol"), obj(json!({"Name": "x"})), &reader)
            .unwrap_err();
        assert_eq!(err.code(), "Forbidden");
        let before = cat.snapshot();
        assert_eq!(
            cat.apply_model_change(
                ModelChange::AddColumn {
                    table: t("Lab:Protocol"),
                    column: ColumnSpec::new("Notes", ValueType::Text),
                },
                &reader
            )
            .unwrap_err()
            .code(),
            "Forbidden"
        );
        assert_eq!(cat.snapshot(), before);
    }

    #[test]
    fn updates_version_and_snapshots_isolate() {
        let (cat, clock) = fresh();
        let rec = cat
            .insert(&t("Lab:Protocol"), obj(json!({"Name": "a"})), &admin())
            .unwrap();
        let before = cat.snapshot();
        clock.advance(60);
        let updated = cat
            .update(&rec.rid, obj(json!({"Description": "new"})), &admin())
            .unwrap();
        assert!(updated.rmt > updated.rct);
        assert_eq!(cat.history(&rec.rid, &admin()).unwrap().len(), 2);
        let old = cat.get(&rec.rid, Some(before), &admin()).unwrap();
        assert_eq!(old.values["Description"], Value::Null);
        cat.delete(&rec.rid, &admin()).unwrap();
        assert_eq!(
            cat.get(&rec.rid, None, &admin()).unwrap_err().code(),
            "NotFound"
        );
        assert_eq!(
            cat.update(&rec.rid, obj(json!({"Description": "x"})), &admin())
                .unwrap_err()
                .code(),
            "NotFound"
        );
        assert!(cat.resolve_rid(&rec.rid, &admin()).unwrap().record.deleted);
    }

    #[test]
    fn stale_update_conflicts() {
        let (cat, clock) = fresh();
        let p = t("Lab:Protocol");
        let rec = cat.insert(&p, obj(json!({"Name": "a"})), &admin()).unwrap();
        clock.advance(5);
        cat.update(&rec.rid, obj(json!({"Description": "b"})), &admin())
            .unwrap();
        let err = cat
            .update_row(
                &p,
                &rec.rid,
                obj(json!({"Description": "c"})),
                Some(rec.rmt),
                &admin(),
            )
            .unwrap_err();
        assert_eq!(err.code(), "Conflict");
    }

    #[test]
    fn added_columns_are_null_for_old_rows() {
        let (cat, _) = fresh();
        let rec = cat
            .insert(&t("Lab:Protocol"), obj(json!({"Name": "a"})), &admin())
            .unwrap();
        cat.apply_model_change(
            ModelChange::AddColumn {
                table: t("Lab:Protocol"),
                column: ColumnSpec::new("Temperature", ValueType::Float),
            },
            &admin(),
        )
        .unwrap();
        let now = cat.get(&rec.rid, None, &admin()).unwrap();
        assert_eq!(now.values["Temperature"], Value::Null);
        assert_eq!(now.values["Name"], json!("a"));
    }

    #[test]
    fn foreign_keys_and_extensions() {
        let (cat, _) = fresh();
        let a = admin();
        cat.apply_model_change(
            ModelChange::AddTable {
                table: t("Lab:Zebrafish"),
                kind: TableKind::Entity,
                columns: vec![
                    ColumnSpec::new("Name", ValueType::Text),
                    ColumnSpec::new("Protocol", ValueType::Identifier),
                ],
                keys: vec![],
                foreign_keys: vec![ForeignKey::to_rid("Protocol", t("Lab:Protocol"))],
            },
            &a,
        )
        .unwrap();
        cat.apply_model_change(
            ModelChange::AddExtensionTable {
                table: t("Lab:Zebrafish_Genotype"),
                extends: t("Lab:Zebrafish"),
                columns: vec![ColumnSpec::new("Allele", ValueType::Text)],
                foreign_keys: vec![],
            },
            &a,
        )
        .unwrap();
        let dangling = cat
            .insert(
                &t("Lab:Zebrafish"),
                obj(json!({"Protocol": "SYNAPSE:1-1ACR"})),
                &a,
            )
            .unwrap_err();
        assert_eq!(dangling.code(), "DanglingReference");
        let fish = cat
            .insert(&t("Lab:Zebrafish"), obj(json!({"Name": "f1"})), &a)
            .unwrap();
        let ext = cat
            .insert(
                &t("Lab:Zebrafish_Genotype"),
                obj(json!({"RID": fish.rid.to_string(), "Allele": "nacre"})),
                &a,
            )
            .unwrap();
        assert_eq!(ext.rid, fish.rid);
        let again = cat
            .insert(
                &t("Lab:Zebrafish_Genotype"),
                obj(json!({"RID": fish.rid.to_string()})),
                &a,
            )
            .unwrap_err();
        assert_eq!(again.code(), "KeyViolation");
        // The RID still resolves to the parent row.
        assert_eq!(
            cat.resolve_rid(&fish.rid, &a).unwrap().table,
            t("Lab:Zebrafish")
        );
    }

    #[test]
    fn idempotent_insert() {
        let (cat, _) = fresh();
        let p = t("Lab:Protocol");
        let one = cat
            .insert_idempotent(&p, obj(json!({"Name": "k"})), "key-1", &admin())
            .unwrap();
        let two = cat
            .insert_idempotent(&p, obj(json!({"Name": "k"})), "key-1", &admin())
            .unwrap();
        assert_eq!(one, two);
        let err = cat
            .insert_idempotent(&p, obj(json!({"Name": "other"})), "key-1", &admin())
            .unwrap_err();
        assert_eq!(err.code(), "KeyConflict");
    }

    #[test]
    fn log_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.log");
        let clock = Arc::new(ManualClock::default());
        let (rid, snapshot, model) = {
            let cat = Catalog::open(&path, options(clock.clone())).unwrap();
            setup(&cat);
            let rec = cat
                .insert(
                    &t("Lab:Protocol"),
                    obj(json!({"Name": "a", "Status": "done"})),
                    &admin(),
                )
                .unwrap();
            cat.update(&rec.rid, obj(json!({"Description": "d"})), &admin())
                .unwrap();
            (rec.rid, cat.snapshot(), cat.model())
        };
        let cat = Catalog::open(&path, options(clock)).unwrap();
        assert_eq!(cat.snapshot(), snapshot);
        assert_eq!(cat.model(), model);
        assert_eq!(cat.history(&rid, &admin()).unwrap().len(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"seq":1,"timestamp":"#), "{first}");
        let update = text.lines().nth(3).unwrap();
        assert!(
            update.contains(r#""values":{"Description":"d"}"#),
            "{update}"
        );
    }

    #[test]
    fn replay_rejects_an_invalid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.log");
        let entry = LogEntry {
            seq: 1,
            timestamp: Timestamp::from_unix(0),
            actor: "x".into(),
            op: Op::Insert {
                table: t("Lab:Missing"),
                rid: parse_id("SYNAPSE:1-1ACR").unwrap(),
                values: Map::new(),
            },
        };
        std::fs::write(
            &path,
            format!("{}\n", serde_json::to_string(&entry).unwrap()),
        )
        .unwrap();
        let err = Catalog::open(&path, CatalogOptions::default()).unwrap_err();
        assert!(
            matches!(err, CatalogError::CorruptLog { line: 1, .. }),
            "{err}"
        );
    }
}
