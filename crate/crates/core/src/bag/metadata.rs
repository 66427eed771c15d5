//! Structured metadata carried under the bag's `metadata/` tag directory.
//!
//! Three mechanisms are supported, at most one block of each per bag:
//!
//! | mechanism       | files                                              |
//! |-----------------|----------------------------------------------------|
//! | research object | `metadata/manifest.json`                           |
//! | key/value       | `metadata/key-value.txt` (bag-info line grammar)   |
//! | table schema    | `metadata/datapackage.json` + `metadata/data/*.csv` |
//!
//! All of them are ordinary tag files, so tag manifests cover them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{tagfile, BagError};

pub(crate) const METADATA_DIR: &str = "metadata";
const RESEARCH_OBJECT_FILE: &str = "metadata/manifest.json";
const KEY_VALUE_FILE: &str = "metadata/key-value.txt";
const DESCRIPTOR_FILE: &str = "metadata/datapackage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    ResearchObject,
    KeyValue,
    TableSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", content = "body", rename_all = "kebab-case")]
pub enum MetadataBlock {
    ResearchObject(Value),
    KeyValue(Vec<(String, String)>),
    TableSchema(TablePackage),
}

impl MetadataBlock {
    pub fn mechanism(&self) -> Mechanism {
        match self {
            MetadataBlock::ResearchObject(_) => Mechanism::ResearchObject,
            MetadataBlock::KeyValue(_) => Mechanism::KeyValue,
            MetadataBlock::TableSchema(_) => Mechanism::TableSchema,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), BagError> {
        match self {
            MetadataBlock::ResearchObject(v) if !v.is_object() => Err(BagError::InvalidMetadata(
                "research object body must be a JSON object".into(),
            )),
            MetadataBlock::ResearchObject(_) => Ok(()),
            MetadataBlock::KeyValue(pairs) => pairs
                .iter()
                .try_for_each(|(l, v)| tagfile::check_label(l, v)),
            MetadataBlock::TableSchema(package) => package.validate(),
        }
    }

    /// Serializes the block into `(tag path, bytes)` pairs.
    pub(crate) fn to_files(&self) -> Result<Vec<(String, Vec<u8>)>, BagError> {
        match self {
            MetadataBlock::ResearchObject(v) => {
                Ok(vec![(RESEARCH_OBJECT_FILE.to_string(), pretty_json(v)?)])
            }
            MetadataBlock::KeyValue(pairs) => Ok(vec![(
                KEY_VALUE_FILE.to_string(),
                tagfile::write_labels(pairs),
            )]),
            MetadataBlock::TableSchema(package) => package.to_files(),
        }
    }

    /// Pulls every metadata block out of `tags`, removing the files it
    /// consumed. Files under `metadata/` that belong to no block stay.
    pub(crate) fn take_from(
        tags: &mut BTreeMap<String, Vec<u8>>,
    ) -> Result<Vec<MetadataBlock>, BagError> {
        let mut blocks = Vec::new();
        if let Some(bytes) = tags.remove(RESEARCH_OBJECT_FILE) {
            let value: Value =
                serde_json::from_slice(&bytes).map_err(|e| malformed(RESEARCH_OBJECT_FILE, e))?;
            blocks.push(MetadataBlock::ResearchObject(value));
        }
        if let Some(bytes) = tags.remove(KEY_VALUE_FILE) {
            blocks.push(MetadataBlock::KeyValue(tagfile::parse_labels(
                KEY_VALUE_FILE,
                &bytes,
            )?));
        }
        if let Some(bytes) = tags.remove(DESCRIPTOR_FILE) {
            blocks.push(MetadataBlock::TableSchema(TablePackage::from_files(
                &bytes, tags,
            )?));
        }
        Ok(blocks)
    }
}

fn malformed(path: &str, e: impl std::fmt::Display) -> BagError {
    BagError::MalformedTagFile {
        path: path.to_string(),
        detail: e.to_string(),
    }
}

fn pretty_json(value: &impl Serialize) -> Result<Vec<u8>, BagError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| BagError::InvalidMetadata(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// A set of tables in the tabular data package layout: one descriptor plus
/// one CSV file per table. Cells are plain strings; an empty cell is how a
/// missing value is written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TablePackage {
    pub resources: Vec<TableResource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableResource {
    pub name: String,
    pub fields: Vec<FieldDescriptor>,
    pub rows: Vec<Vec<String>>,
    /// Extra descriptor properties carried alongside the resource.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: String,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    profile: String,
    resources: Vec<ResourceDescriptor>,
}

#[derive(Serialize, Deserialize)]
struct ResourceDescriptor {
    name: String,
    path: String,
    profile: String,
    schema: SchemaDescriptor,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    properties: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDescriptor {
    fields: Vec<FieldDescriptor>,
}

impl TableResource {
    fn data_path(&self) -> String {
        format!("data/{}.csv", self.name)
    }
}

impl TablePackage {
    pub fn resource(&self, name: &str) -> Option<&TableResource> {
        self.resources.iter().find(|r| r.name == name)
    }

    fn validate(&self) -> Result<(), BagError> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.resources {
            let ok_name = !r.name.is_empty()
                && !r.name.starts_with('.')
                && r.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
            if !ok_name {
                return Err(BagError::InvalidMetadata(format!(
                    "bad table name `{}`",
                    r.name
                )));
            }
            if !seen.insert(&r.name) {
                return Err(BagError::InvalidMetadata(format!(
                    "duplicate table `{}`",
                    r.name
                )));
            }
            if r.fields.is_empty() {
                return Err(BagError::InvalidMetadata(format!(
                    "table `{}` has no fields",
                    r.name
                )));
            }
            if let Some(row) = r.rows.iter().find(|row| row.len() != r.fields.len()) {
                return Err(BagError::InvalidMetadata(format!(
                    "table `{}` has a row of {} cells for {} fields",
                    r.name,
                    row.len(),
                    r.fields.len()
                )));
            }
        }
        Ok(())
    }

    fn to_files(&self) -> Result<Vec<(String, Vec<u8>)>, BagError> {
        let descriptor = Descriptor {
            profile: "tabular-data-package".into(),
            resources: self
                .resources
                .iter()
                .map(|r| ResourceDescriptor {
                    name: r.name.clone(),
                    path: r.data_path(),
                    profile: "tabular-data-resource".into(),
                    schema: SchemaDescriptor {
                        fields: r.fields.clone(),
                    },
                    properties: r.properties.clone(),
                })
                .collect(),
        };
        let mut files = vec![(DESCRIPTOR_FILE.to_string(), pretty_json(&descriptor)?)];
        for r in &self.resources {
            let mut writer = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            let header: Vec<&str> = r.fields.iter().map(|f| f.name.as_str()).collect();
            writer
                .write_record(&header)
                .map_err(|e| BagError::InvalidMetadata(e.to_string()))?;
            for row in &r.rows {
                writer
                    .write_record(row)
                    .map_err(|e| BagError::InvalidMetadata(e.to_string()))?;
            }
            let bytes = writer
                .into_inner()
                .map_err(|e| BagError::InvalidMetadata(e.to_string()))?;
            files.push((format!("{METADATA_DIR}/{}", r.data_path()), bytes));
        }
        Ok(files)
    }

    fn from_files(
        descriptor: &[u8],
        tags: &mut BTreeMap<String, Vec<u8>>,
    ) -> Result<Self, BagError> {
        let descriptor: Descriptor =
            serde_json::from_slice(descriptor).map_err(|e| malformed(DESCRIPTOR_FILE, e))?;
        let mut resources = Vec::new();
        for r in descriptor.resources {
            let file = format!("{METADATA_DIR}/{}", r.path);
            let bytes = tags
                .remove(&file)
                .ok_or_else(|| malformed(DESCRIPTOR_FILE, format!("missing data file {file}")))?;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(bytes.as_slice());
            let header: Vec<String> = reader
                .headers()
                .map_err(|e| malformed(&file, e))?
                .iter()
                .map(str::to_string)
                .collect();
            let expected: Vec<&str> = r.schema.fields.iter().map(|f| f.name.as_str()).collect();
            if header != expected {
                return Err(malformed(
                    &file,
                    "CSV header does not match the descriptor fields",
                ));
            }
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| malformed(&file, e))?;
                rows.push(record.iter().map(str::to_string).collect());
            }
            resources.push(TableResource {
                name: r.name,
                fields: r.schema.fields,
                rows,
                properties: r.properties,
            });
        }
        Ok(TablePackage { resources })
    }
}
