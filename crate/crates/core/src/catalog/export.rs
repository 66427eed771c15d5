use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::acl::{Access, Principal};
use super::model::{
    CatalogModel, ColumnSpec, ModelChange, TableDef, TableKind, TableRef, ASSET_CHECKSUM,
    ASSET_LENGTH, ASSET_URL, RCT, RID, RMT,
};
use super::query::{follow, Link};
use super::store::{Catalog, State, Stored};
use super::value::to_cell;
use super::CatalogError;
use crate::bag::{
    Algorithm, Bag, BagBuilder, BagPath, FieldDescriptor, Mechanism, MetadataBlock, RemoteFile,
    Resolvers, TablePackage, TableResource,
};
use crate::idspace::{parse_id, IdString, MinidRecord, Registry};

/// What to export and how to identify the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub roots: Vec<IdString>,
    /// Hops along foreign keys pointing at the selected rows.
    #[serde(default = "one")]
    pub inbound: u32,
    /// Hops along foreign keys leaving the selected rows; unbounded when
    /// absent.
    #[serde(default)]
    pub outbound: Option<u32>,
    pub creator: String,
    pub namespace: String,
    pub locations: Vec<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub info: Vec<(String, String)>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone)]
pub struct ExportResult {
    pub bag: Bag,
    pub minid: MinidRecord,
    pub rows: BTreeMap<TableRef, Vec<IdString>>,
    pub snapshot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub tables_created: Vec<TableRef>,
    /// Exported RID → RID assigned here.
    pub rids: BTreeMap<IdString, IdString>,
}

type Selection = BTreeMap<TableRef, BTreeSet<IdString>>;

fn resource_name(table: &TableRef) -> String {
    format!("{}.{}", table.schema, table.table)
}

fn rows_of<'s>(
    state: &'s State,
    table: &TableRef,
    rids: &BTreeSet<IdString>,
    snapshot: u64,
) -> Vec<&'s Arc<Stored>> {
    rids.iter()
        .filter_map(|rid| state.live_at(&(table.clone(), rid.clone()), snapshot))
        .collect()
}

fn add_all(selection: &mut Selection, table: &TableRef, rows: Vec<&Arc<Stored>>) -> bool {
    let set = selection.entry(table.clone()).or_default();
    let mut added = false;
    for row in rows {
        added |= set.insert(row.rid.clone());
    }
    added
}

fn select(
    state: &State,
    model: &CatalogModel,
    snapshot: u64,
    request: &ExportRequest,
) -> Result<Selection, CatalogError> {
    let mut selection = Selection::new();
    for rid in &request.roots {
        let table = state.home(rid)?.clone();
        if state
            .live_at(&(table.clone(), rid.clone()), snapshot)
            .is_none()
        {
            return Err(CatalogError::NotFound(format!("RID {rid} is deleted")));
        }
        selection.entry(table).or_default().insert(rid.clone());
    }

    let mut frontier = selection.clone();
    for _ in 0..request.inbound {
        let mut reached = Selection::new();
        for (table, rids) in &frontier {
            let rows = rows_of(state, table, rids, snapshot);
            for (other, def) in model.tables() {
                for fk in def.foreign_keys.iter().filter(|fk| &fk.table == table) {
                    let linked = follow(
                        state,
                        model,
                        snapshot,
                        table,
                        &rows,
                        &other,
                        &Link::In(fk.clone()),
                    )?;
                    let fresh: Vec<_> = linked
                        .into_iter()
                        .filter(|r| !selection.get(&other).is_some_and(|s| s.contains(&r.rid)))
                        .collect();
                    add_all(&mut reached, &other, fresh);
                }
            }
        }
        reached.retain(|_, rids| !rids.is_empty());
        if reached.is_empty() {
            break;
        }
        for (table, rids) in &reached {
            selection
                .entry(table.clone())
                .or_default()
                .extend(rids.iter().cloned());
        }
        frontier = reached;
    }

    let mut hops = 0;
    loop {
        for (table, rids) in selection.clone() {
            let rows = rows_of(state, &table, &rids, snapshot);
            for extension in model.extensions_of(&table).collect::<Vec<_>>() {
                let linked = follow(
                    state,
                    model,
                    snapshot,
                    &table,
                    &rows,
                    &extension,
                    &Link::SameRid,
                )?;
                add_all(&mut selection, &extension, linked);
            }
        }
        if request.outbound.is_some_and(|limit| hops >= limit) {
            break;
        }
        let mut added = false;
        for (table, rids) in selection.clone() {
            let rows = rows_of(state, &table, &rids, snapshot);
            let def = model.require(&table)?;
            for fk in &def.foreign_keys {
                let linked = follow(
                    state,
                    model,
                    snapshot,
                    &table,
                    &rows,
                    &fk.table,
                    &Link::Out(fk.clone()),
                )?;
                added |= add_all(&mut selection, &fk.table, linked);
            }
        }
        if !added {
            break;
        }
        hops += 1;
    }
    selection.retain(|_, rids| !rids.is_empty());
    Ok(selection)
}

fn properties(table: &TableRef, def: &TableDef) -> Map<String, Value> {
    let mut map = Map::new();
    map.insert("schema".into(), json!(table.schema));
    map.insert("table".into(), json!(table.table));
    map.insert(
        "tableDef".into(),
        serde_json::to_value(def).expect("model serializes"),
    );
    map
}

fn data_resource(table: &TableRef, def: &TableDef, rows: &[&Arc<Stored>]) -> TableResource {
    let mut fields = vec![
        FieldDescriptor {
            name: RID.into(),
            field_type: "string".into(),
        },
        FieldDescriptor {
            name: RCT.into(),
            field_type: "datetime".into(),
        },
        FieldDescriptor {
            name: RMT.into(),
            field_type: "datetime".into(),
        },
    ];
    fields.extend(def.columns.iter().map(|c| FieldDescriptor {
        name: c.name.clone(),
        field_type: c.value_type.package_type().into(),
    }));
    let rows = rows
        .iter()
        .map(|row| {
            let mut cells = vec![
                row.rid.to_string(),
                row.rct.to_string(),
                row.rmt.to_string(),
            ];
            cells.extend(
                def.columns
                    .iter()
                    .map(|c| row.values.get(&c.id).map(to_cell).unwrap_or_default()),
            );
            cells
        })
        .collect();
    TableResource {
        name: resource_name(table),
        fields,
        rows,
        properties: properties(table, def),
    }
}

fn vocabulary_resource(table: &TableRef, def: &TableDef) -> TableResource {
    let field = |name: &str| FieldDescriptor {
        name: name.into(),
        field_type: "string".into(),
    };
    TableResource {
        name: resource_name(table),
        fields: vec![field("Name"), field("Synonyms"), field("Description")],
        rows: def
            .terms
            .iter()
            .map(|t| {
                vec![
                    t.canonical.clone(),
                    t.synonyms.iter().cloned().collect::<Vec<_>>().join("|"),
                    t.description.clone(),
                ]
            })
            .collect(),
        properties: properties(table, def),
    }
}

/// Last path segment of a URL, for naming fetched files.
fn file_name(url: &str) -> String {
    let end = url.find(['?', '#']).unwrap_or(url.len());
    let name = url[..end].rsplit('/').next().unwrap_or_default();
    if name.is_empty() || name == "." || name == ".." {
        "content".into()
    } else {
        name.into()
    }
}

impl Catalog {
    /// Packages the rows reachable from `request.roots` into a holey bag:
    /// the rows travel as table-schema metadata, asset files as fetch
    /// entries verified by their recorded checksums. The bag is then bound
    /// to a fresh identifier in `registry`.
    pub fn export_dataset(
        &self,
        request: &ExportRequest,
        registry: &Registry,
        resolvers: &Resolvers,
        actor: &Principal,
    ) -> Result<ExportResult, CatalogError> {
        let (bag, rows, snapshot) = self.package_dataset(request, resolvers, actor)?;
        let minid = registry.bind_bag(
            &bag,
            &request.creator,
            &request.namespace,
            request.locations.clone(),
            request.title.clone(),
        )?;
        Ok(ExportResult {
            bag,
            minid,
            rows,
            snapshot,
        })
    }

    /// The bag [`Catalog::export_dataset`] would bind, without binding it.
    /// Returns the bag, the exported rows and the snapshot they were read
    /// at. Identifier fields of `request` are ignored.
    #[allow(clippy::type_complexity)]
    pub fn package_dataset(
        &self,
        request: &ExportRequest,
        resolvers: &Resolvers,
        actor: &Principal,
    ) -> Result<(Bag, BTreeMap<TableRef, Vec<IdString>>, u64), CatalogError> {
        let state = self.read_state();
        let snapshot = state.seq;
        let model = state.model().clone();
        let selection = select(&state, &model, snapshot, request)?;
        for table in selection.keys() {
            self.authorize(actor, Some(table), Access::Read)?;
        }

        let mut resources = Vec::new();
        let mut vocabularies = BTreeSet::new();
        let mut builder = BagBuilder::new();
        let mut count = 0;
        for (table, rids) in &selection {
            let def = model.require(table)?;
            let rows = rows_of(&state, table, rids, snapshot);
            count += rows.len();
            vocabularies.extend(def.columns.iter().filter_map(|c| c.vocabulary.clone()));
            resources.push(data_resource(table, def, &rows));
            if def.kind == TableKind::Asset {
                for row in &rows {
                    let url = State::value_of(def, row, ASSET_URL);
                    let url = url.as_str().unwrap_or_default();
                    let reachable = resolvers.handler_for(url).is_ok_and(|h| h.probe(url));
                    if !reachable {
                        return Err(CatalogError::UnreachableAsset(url.to_string()));
                    }
                    let checksum = State::value_of(def, row, ASSET_CHECKSUM);
                    let length = State::value_of(def, row, ASSET_LENGTH).as_u64();
                    let name = file_name(url);
                    let relative = format!(
                        "assets/{}/{}/{}",
                        table.schema,
                        table.table,
                        row.rid.suffix()
                    );
                    let path = BagPath::in_payload(&format!("{relative}/{name}"))
                        .or_else(|_| BagPath::in_payload(&format!("{relative}/content")))?;
                    builder.add_remote(
                        path,
                        RemoteFile {
                            url: url.to_string(),
                            length,
                            digests: BTreeMap::from([(
                                Algorithm::Sha256,
                                checksum.as_str().unwrap_or_default().to_string(),
                            )]),
                        },
                    )?;
                }
            }
        }
        for vocabulary in &vocabularies {
            if let Some(def) = model.table(vocabulary) {
                resources.push(vocabulary_resource(vocabulary, def));
            }
        }
        let mut builder = builder
            .info(
                "External-Description",
                format!("Catalog export of {count} records"),
            )
            .info("Catalog-Snapshot", snapshot.to_string());
        for (label, value) in &request.info {
            builder = builder.info(label, value);
        }
        let bag = builder
            .metadata(MetadataBlock::TableSchema(TablePackage { resources }))
            .build()?;
        let rows = selection
            .into_iter()
            .map(|(t, rids)| (t, rids.into_iter().collect()))
            .collect();
        Ok((bag, rows, snapshot))
    }

    /// Loads an exported bag: creates any missing tables from the carried
    /// definitions, then inserts every row under a new RID, rewriting
    /// references between exported rows.
    pub fn import_dataset(
        &self,
        bag: &Bag,
        actor: &Principal,
    ) -> Result<ImportReport, CatalogError> {
        let Some(MetadataBlock::TableSchema(package)) = bag.metadata_block(Mechanism::TableSchema)
        else {
            return Err(CatalogError::InvalidPackage(
                "no table-schema metadata".into(),
            ));
        };
        let mut parsed = Vec::new();
        for resource in &package.resources {
            let text = |key: &str| {
                resource
                    .properties
                    .get(key)
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        CatalogError::InvalidPackage(format!("{} lacks `{key}`", resource.name))
                    })
            };
            let table = TableRef::new(text("schema")?, text("table")?);
            let def: TableDef = resource
                .properties
                .get("tableDef")
                .cloned()
                .map(serde_json::from_value)
                .transpose()
                .map_err(|e| CatalogError::InvalidPackage(format!("{}: {e}", resource.name)))?
                .ok_or_else(|| {
                    CatalogError::InvalidPackage(format!("{} lacks `tableDef`", resource.name))
                })?;
            parsed.push((table, def, resource));
        }

        let mut created = Vec::new();
        let existing = self.model();
        let missing = |kinds: &[TableKind]| {
            parsed
                .iter()
                .filter(|(t, d, _)| kinds.contains(&d.kind) && existing.table(t).is_none())
                .collect::<Vec<_>>()
        };
        let specs = |def: &TableDef| -> Vec<ColumnSpec> {
            def.columns
                .iter()
                .filter(|c| {
                    def.kind != TableKind::Asset
                        || ![ASSET_URL, ASSET_CHECKSUM, ASSET_LENGTH].contains(&c.name.as_str())
                })
                .map(|c| ColumnSpec {
                    name: c.name.clone(),
                    value_type: c.value_type,
                    nullable: c.nullable,
                    vocabulary: c.vocabulary.clone(),
                })
                .collect()
        };
        for (table, def, _) in missing(&[TableKind::Vocabulary]) {
            self.apply_model_change(
                ModelChange::AddVocabulary {
                    table: table.clone(),
                    terms: def.terms.clone(),
                },
                actor,
            )?;
            created.push(table.clone());
        }
        let tables = missing(&[TableKind::Entity, TableKind::Asset]);
        let extensions = missing(&[TableKind::Extension]);
        for (table, def, _) in &tables {
            self.apply_model_change(
                ModelChange::AddTable {
                    table: table.clone(),
                    kind: def.kind,
                    columns: specs(def),
                    keys: def.keys.clone(),
                    foreign_keys: vec![],
                },
                actor,
            )?;
            created.push(table.clone());
        }
        for (table, def, _) in &extensions {
            let parent = def.extends.clone().ok_or_else(|| {
                CatalogError::InvalidPackage(format!("extension {table} names no parent"))
            })?;
            self.apply_model_change(
                ModelChange::AddExtensionTable {
                    table: table.clone(),
                    extends: parent,
                    columns: specs(def),
                    foreign_keys: vec![],
                },
                actor,
            )?;
            created.push(table.clone());
        }
        for (table, def, _) in tables.iter().chain(&extensions) {
            for fk in &def.foreign_keys {
                self.apply_model_change(
                    ModelChange::AddForeignKey {
                        table: table.clone(),
                        foreign_key: fk.clone(),
                    },
                    actor,
                )?;
            }
        }

        let model = self.model();
        let mut pending = Vec::new();
        for (table, def, resource) in &parsed {
            if def.kind == TableKind::Vocabulary {
                continue;
            }
            let rid_at = resource
                .fields
                .iter()
                .position(|f| f.name == RID)
                .ok_or_else(|| {
                    CatalogError::InvalidPackage(format!("{} has no RID field", resource.name))
                })?;
            for row in &resource.rows {
                let old = parse_id(&row[rid_at])?;
                let mut values = Map::new();
                for (field, cell) in resource.fields.iter().zip(row) {
                    if [RID, RCT, RMT].contains(&field.name.as_str()) {
                        continue;
                    }
                    let value = if cell.is_empty() {
                        Value::Null
                    } else {
                        Value::String(cell.clone())
                    };
                    values.insert(field.name.clone(), value);
                }
                pending.push((table.clone(), old, values));
            }
        }
        let exported: BTreeSet<IdString> = pending.iter().map(|(_, rid, _)| rid.clone()).collect();
        let mut rids: BTreeMap<IdString, IdString> = BTreeMap::new();
        while !pending.is_empty() {
            let before = pending.len();
            let mut waiting = Vec::new();
            for (table, old, mut values) in pending {
                let def = model.require(&table)?;
                let references: Vec<(String, IdString)> = def
                    .foreign_keys
                    .iter()
                    .filter(|fk| fk.ref_columns == [RID] && fk.columns.len() == 1)
                    .filter_map(|fk| {
                        let column = &fk.columns[0];
                        let target = values
                            .get(column)?
                            .as_str()
                            .and_then(|s| parse_id(s).ok())?;
                        exported.contains(&target).then(|| (column.clone(), target))
                    })
                    .collect();
                let parent_ready = def.kind != TableKind::Extension || rids.contains_key(&old);
                if !parent_ready
                    || references
                        .iter()
                        .any(|(_, target)| !rids.contains_key(target))
                {
                    waiting.push((table, old, values));
                    continue;
                }
                for (column, target) in references {
                    values.insert(column, Value::String(rids[&target].to_string()));
                }
                if def.kind == TableKind::Extension {
                    values.insert(RID.into(), Value::String(rids[&old].to_string()));
                    self.insert(&table, values, actor)?;
                } else {
                    let record = self.insert(&table, values, actor)?;
                    rids.insert(old, record.rid);
                }
            }
            if waiting.len() == before {
                return Err(CatalogError::InvalidPackage(
                    "rows reference each other in a cycle or extend rows that were not exported"
                        .into(),
                ));
            }
            pending = waiting;
        }
        Ok(ImportReport {
            tables_created: created,
            rids,
        })
    }
}
