use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CatalogError;

pub const RID: &str = "RID";
pub const RCT: &str = "RCT";
pub const RMT: &str = "RMT";
pub const SYSTEM_COLUMNS: [&str; 3] = [RID, RCT, RMT];

/// Columns every asset table starts with.
pub const ASSET_URL: &str = "URL";
pub const ASSET_CHECKSUM: &str = "Checksum";
pub const ASSET_LENGTH: &str = "Length";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Entity,
    Asset,
    Vocabulary,
    Extension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Text,
    Integer,
    Float,
    Timestamp,
    Boolean,
    Identifier,
    Term,
}

impl ValueType {
    /// Field type name in a tabular data package descriptor.
    pub fn package_type(self) -> &'static str {
        match self {
            ValueType::Text | ValueType::Term | ValueType::Identifier => "string",
            ValueType::Integer => "integer",
            ValueType::Float => "number",
            ValueType::Timestamp => "datetime",
            ValueType::Boolean => "boolean",
        }
    }
}

/// `Schema:Table`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TableRef {
    pub schema: String,
    pub table: String,
}

impl TableRef {
    pub fn new(schema: &str, table: &str) -> Self {
        TableRef {
            schema: schema.to_string(),
            table: table.to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let (schema, table) = text
            .split_once(':')
            .ok_or_else(|| CatalogError::UnknownPath(format!("`{text}` is not Schema:Table")))?;
        if !is_name(schema) || !is_name(table) {
            return Err(CatalogError::UnknownPath(format!(
                "`{text}` is not Schema:Table"
            )));
        }
        Ok(TableRef::new(schema, table))
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.schema, self.table)
    }
}

impl TryFrom<String> for TableRef {
    type Error = CatalogError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        TableRef::parse(&value)
    }
}

impl From<TableRef> for String {
    fn from(value: TableRef) -> Self {
        value.to_string()
    }
}

/// Schema, table and column names: a letter, then letters, digits, `_`.
pub fn is_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_system(name: &str) -> bool {
    SYSTEM_COLUMNS.iter().any(|s| s.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    /// Stable within the table; survives renames.
    pub id: u32,
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<TableRef>,
    /// Former names, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl ColumnDef {
    pub fn answers_to(&self, name: &str) -> bool {
        self.name == name || self.aliases.iter().any(|a| a == name)
    }
}

/// A column as requested in a model change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(default = "yes")]
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<TableRef>,
}

fn yes() -> bool {
    true
}

impl ColumnSpec {
    pub fn new(name: &str, value_type: ValueType) -> Self {
        ColumnSpec {
            name: name.to_string(),
            value_type,
            nullable: true,
            vocabulary: None,
        }
    }

    pub fn required(mut self) -> Self {
        self.nullable = false;
        self
    }

    pub fn term(name: &str, vocabulary: TableRef) -> Self {
        ColumnSpec {
            vocabulary: Some(vocabulary),
            ..ColumnSpec::new(name, ValueType::Term)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub columns: Vec<String>,
    pub table: TableRef,
    pub ref_columns: Vec<String>,
}

impl ForeignKey {
    /// The usual shape: one column holding the RID of a row in `table`.
    pub fn to_rid(column: &str, table: TableRef) -> Self {
        ForeignKey {
            columns: vec![column.to_string()],
            table,
            ref_columns: vec![RID.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyTerm {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: BTreeSet<String>,
    #[serde(default)]
    pub description: String,
}

impl VocabularyTerm {
    pub fn new(canonical: &str) -> Self {
        VocabularyTerm {
            canonical: canonical.to_string(),
            synonyms: BTreeSet::new(),
            description: String::new(),
        }
    }

    pub fn with_synonyms(mut self, synonyms: &[&str]) -> Self {
        self.synonyms.extend(synonyms.iter().map(|s| s.to_string()));
        self
    }
}

/// Case-folded, trimmed form used to match terms.
pub fn fold_term(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub kind: TableKind,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub keys: Vec<Vec<String>>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extends: Option<TableRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<VocabularyTerm>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .or_else(|| self.columns.iter().find(|c| c.answers_to(name)))
    }

    pub fn column_by_id(&self, id: u32) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.id == id)
    }

    fn has_column(&self, name: &str) -> bool {
        name == RID || self.column(name).is_some()
    }

    fn next_column_id(&self) -> u32 {
        self.columns.iter().map(|c| c.id + 1).max().unwrap_or(1)
    }

    /// Canonical term for `raw`, matching canonical terms and synonyms
    /// after case-folding and trimming. No fuzzy matching.
    pub fn normalize_term(&self, raw: &str) -> Option<&str> {
        let folded = fold_term(raw);
        self.terms
            .iter()
            .find(|t| {
                fold_term(&t.canonical) == folded
                    || t.synonyms.iter().any(|s| fold_term(s) == folded)
            })
            .map(|t| t.canonical.as_str())
    }

    fn term_taken(&self, folded: &str) -> Option<&str> {
        self.normalize_term(folded)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CatalogModel {
    pub version: u64,
    pub schemas: BTreeMap<String, BTreeMap<String, TableDef>>,
}

/// Every way the model can evolve. None of them is destructive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum ModelChange {
    AddTable {
        table: TableRef,
        #[serde(default = "entity")]
        kind: TableKind,
        #[serde(default)]
        columns: Vec<ColumnSpec>,
        #[serde(default)]
        keys: Vec<Vec<String>>,
        #[serde(default)]
        foreign_keys: Vec<ForeignKey>,
    },
    AddColumn {
        table: TableRef,
        column: ColumnSpec,
    },
    AddVocabulary {
        table: TableRef,
        #[serde(default)]
        terms: Vec<VocabularyTerm>,
    },
    AddExtensionTable {
        table: TableRef,
        extends: TableRef,
        #[serde(default)]
        columns: Vec<ColumnSpec>,
        #[serde(default)]
        foreign_keys: Vec<ForeignKey>,
    },
    AddForeignKey {
        table: TableRef,
        foreign_key: ForeignKey,
    },
    AddTerm {
        vocabulary: TableRef,
        term: VocabularyTerm,
    },
    AddSynonym {
        vocabulary: TableRef,
        canonical: String,
        synonym: String,
    },
    RenameColumn {
        table: TableRef,
        from: String,
        to: String,
    },
}

fn entity() -> TableKind {
    TableKind::Entity
}

impl ModelChange {
    /// The table whose rights govern this change, if it touches an
    /// existing one.
    pub fn existing_target(&self) -> Option<&TableRef> {
        match self {
            ModelChange::AddTable { .. } | ModelChange::AddVocabulary { .. } => None,
            ModelChange::AddExtensionTable { extends, .. } => Some(extends),
            ModelChange::AddColumn { table, .. }
            | ModelChange::AddForeignKey { table, .. }
            | ModelChange::RenameColumn { table, .. } => Some(table),
            ModelChange::AddTerm { vocabulary, .. }
            | ModelChange::AddSynonym { vocabulary, .. } => Some(vocabulary),
        }
    }
}

impl CatalogModel {
    pub fn table(&self, table: &TableRef) -> Option<&TableDef> {
        self.schemas.get(&table.schema)?.get(&table.table)
    }

    pub fn require(&self, table: &TableRef) -> Result<&TableDef, CatalogError> {
        self.table(table)
            .ok_or_else(|| CatalogError::UnknownPath(format!("no table {table}")))
    }

    fn table_mut(&mut self, table: &TableRef) -> Result<&mut TableDef, CatalogError> {
        self.schemas
            .get_mut(&table.schema)
            .and_then(|s| s.get_mut(&table.table))
            .ok_or_else(|| CatalogError::DanglingReference(format!("no table {table}")))
    }

    pub fn tables(&self) -> impl Iterator<Item = (TableRef, &TableDef)> {
        self.schemas.iter().flat_map(|(s, tables)| {
            tables
                .iter()
                .map(move |(t, def)| (TableRef::new(s, t), def))
        })
    }

    /// Tables that extend `parent`.
    pub fn extensions_of<'a>(
        &'a self,
        parent: &'a TableRef,
    ) -> impl Iterator<Item = TableRef> + 'a {
        self.tables()
            .filter(move |(_, def)| def.extends.as_ref() == Some(parent))
            .map(|(r, _)| r)
    }

    /// The model after `change`, with the version bumped.
    pub fn apply(&self, change: &ModelChange) -> Result<CatalogModel, CatalogError> {
        let mut next = self.clone();
        next.version += 1;
        match change {
            ModelChange::AddTable {
                table,
                kind,
                columns,
                keys,
                foreign_keys,
            } => {
                if !matches!(kind, TableKind::Entity | TableKind::Asset) {
                    return Err(CatalogError::InvalidChange(
                        "add_table creates entity or asset tables; use add_vocabulary or add_extension_table".into(),
                    ));
                }
                let mut specs = Vec::new();
                if *kind == TableKind::Asset {
                    specs.push(ColumnSpec::new(ASSET_URL, ValueType::Text).required());
                    specs.push(ColumnSpec::new(ASSET_CHECKSUM, ValueType::Text).required());
                    specs.push(ColumnSpec::new(ASSET_LENGTH, ValueType::Integer));
                }
                specs.extend(columns.iter().cloned());
                next.insert_table(table, *kind, &specs, None)?;
                for fk in foreign_keys {
                    next.add_foreign_key(table, fk)?;
                }
                for key in keys {
                    next.add_key(table, key)?;
                }
            }
            ModelChange::AddVocabulary { table, terms } => {
                next.insert_table(table, TableKind::Vocabulary, &[], None)?;
                for term in terms {
                    next.add_term(table, term)?;
                }
            }
            ModelChange::AddExtensionTable {
                table,
                extends,
                columns,
                foreign_keys,
            } => {
                let parent = self.table(extends).ok_or_else(|| {
                    CatalogError::DanglingReference(format!("no table {extends}"))
                })?;
                if !matches!(parent.kind, TableKind::Entity | TableKind::Asset) {
                    return Err(CatalogError::InvalidChange(format!(
                        "{extends} is not an entity or asset table"
                    )));
                }
                next.insert_table(table, TableKind::Extension, columns, Some(extends.clone()))?;
                for fk in foreign_keys {
                    next.add_foreign_key(table, fk)?;
                }
            }
            ModelChange::AddColumn { table, column } => {
                let def = next.require_data_table(table)?;
                if def.column(&column.name).is_some() {
                    return Err(CatalogError::DuplicateName(format!(
                        "{table}.{}",
                        column.name
                    )));
                }
                let column = next.column_from_spec(table, def.next_column_id(), column)?;
                next.table_mut(table)?.columns.push(column);
            }
            ModelChange::AddForeignKey { table, foreign_key } => {
                next.add_foreign_key(table, foreign_key)?
            }
            ModelChange::AddTerm { vocabulary, term } => next.add_term(vocabulary, term)?,
            ModelChange::AddSynonym {
                vocabulary,
                canonical,
                synonym,
            } => {
                let def = next.require_vocabulary(vocabulary)?;
                if def.term_taken(synonym).is_some() {
                    return Err(CatalogError::DuplicateName(format!(
                        "term `{synonym}` in {vocabulary}"
                    )));
                }
                let position = def
                    .terms
                    .iter()
                    .position(|t| &t.canonical == canonical)
                    .ok_or_else(|| {
                        CatalogError::DanglingReference(format!(
                            "no term `{canonical}` in {vocabulary}"
                        ))
                    })?;
                check_term_text(synonym)?;
                next.table_mut(vocabulary)?.terms[position]
                    .synonyms
                    .insert(synonym.clone());
            }
            ModelChange::RenameColumn { table, from, to } => {
                if !is_name(to) || is_system(to) {
                    return Err(CatalogError::InvalidChange(format!(
                        "`{to}` is not a usable column name"
                    )));
                }
                let def = next.require_data_table(table)?;
                let column = def
                    .columns
                    .iter()
                    .find(|c| &c.name == from)
                    .ok_or_else(|| CatalogError::UnknownColumn(format!("{table}.{from}")))?;
                let id = column.id;
                if def.columns.iter().any(|c| c.id != id && c.answers_to(to)) {
                    return Err(CatalogError::DuplicateName(format!("{table}.{to}")));
                }
                let def = next.table_mut(table)?;
                for c in def.columns.iter_mut().filter(|c| c.id == id) {
                    c.aliases.retain(|a| a != to);
                    c.aliases.push(std::mem::replace(&mut c.name, to.clone()));
                }
                for key in def.keys.iter_mut() {
                    rename_in(key, from, to);
                }
                for fk in def.foreign_keys.iter_mut() {
                    rename_in(&mut fk.columns, from, to);
                }
                for tables in next.schemas.values_mut() {
                    for other in tables.values_mut() {
                        for fk in other
                            .foreign_keys
                            .iter_mut()
                            .filter(|fk| &fk.table == table)
                        {
                            rename_in(&mut fk.ref_columns, from, to);
                        }
                    }
                }
            }
        }
        Ok(next)
    }

    fn insert_table(
        &mut self,
        table: &TableRef,
        kind: TableKind,
        specs: &[ColumnSpec],
        extends: Option<TableRef>,
    ) -> Result<(), CatalogError> {
        if self.table(table).is_some() {
            return Err(CatalogError::DuplicateName(table.to_string()));
        }
        let mut columns: Vec<ColumnDef> = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            if columns.iter().any(|c| c.name == spec.name) {
                return Err(CatalogError::DuplicateName(format!(
                    "{table}.{}",
                    spec.name
                )));
            }
            columns.push(self.column_from_spec(table, i as u32 + 1, spec)?);
        }
        self.schemas
            .entry(table.schema.clone())
            .or_default()
            .insert(
                table.table.clone(),
                TableDef {
                    name: table.table.clone(),
                    kind,
                    columns,
                    keys: Vec::new(),
                    foreign_keys: Vec::new(),
                    extends,
                    terms: Vec::new(),
                },
            );
        Ok(())
    }

    fn column_from_spec(
        &self,
        table: &TableRef,
        id: u32,
        spec: &ColumnSpec,
    ) -> Result<ColumnDef, CatalogError> {
        if !is_name(&spec.name) || is_system(&spec.name) {
            return Err(CatalogError::InvalidChange(format!(
                "`{}` is not a usable column name in {table}",
                spec.name
            )));
        }
        match (&spec.value_type, &spec.vocabulary) {
            (ValueType::Term, Some(vocabulary)) => {
                let ok = self
                    .table(vocabulary)
                    .is_some_and(|t| t.kind == TableKind::Vocabulary);
                if !ok {
                    return Err(CatalogError::DanglingReference(format!(
                        "{table}.{} names vocabulary {vocabulary}, which does not exist",
                        spec.name
                    )));
                }
            }
            (ValueType::Term, None) => {
                return Err(CatalogError::InvalidChange(format!(
                    "term column {table}.{} needs a vocabulary",
                    spec.name
                )))
            }
            (_, Some(_)) => {
                return Err(CatalogError::InvalidChange(format!(
                    "only term columns take a vocabulary ({table}.{})",
                    spec.name
                )))
            }
            (_, None) => {}
        }
        Ok(ColumnDef {
            id,
            name: spec.name.clone(),
            value_type: spec.value_type,
            nullable: spec.nullable,
            vocabulary: spec.vocabulary.clone(),
            aliases: Vec::new(),
        })
    }

    fn require_data_table(&self, table: &TableRef) -> Result<&TableDef, CatalogError> {
        let def = self
            .table(table)
            .ok_or_else(|| CatalogError::DanglingReference(format!("no table {table}")))?;
        if def.kind == TableKind::Vocabulary {
            return Err(CatalogError::InvalidChange(format!(
                "{table} is a vocabulary"
            )));
        }
        Ok(def)
    }

    fn require_vocabulary(&self, table: &TableRef) -> Result<&TableDef, CatalogError> {
        self.table(table)
            .filter(|t| t.kind == TableKind::Vocabulary)
            .ok_or_else(|| CatalogError::DanglingReference(format!("no vocabulary {table}")))
    }

    fn add_foreign_key(&mut self, table: &TableRef, fk: &ForeignKey) -> Result<(), CatalogError> {
        let def = self.require_data_table(table)?;
        if fk.columns.is_empty() || fk.columns.len() != fk.ref_columns.len() {
            return Err(CatalogError::InvalidChange(format!(
                "foreign key on {table} pairs {} columns with {}",
                fk.columns.len(),
                fk.ref_columns.len()
            )));
        }
        if let Some(missing) = fk.columns.iter().find(|c| !def.has_column(c)) {
            return Err(CatalogError::DanglingReference(format!(
                "{table}.{missing}"
            )));
        }
        let target = self
            .table(&fk.table)
            .filter(|t| t.kind != TableKind::Vocabulary)
            .ok_or_else(|| CatalogError::DanglingReference(format!("no table {}", fk.table)))?;
        if let Some(missing) = fk.ref_columns.iter().find(|c| !target.has_column(c)) {
            return Err(CatalogError::DanglingReference(format!(
                "{}.{missing}",
                fk.table
            )));
        }
        let fk = ForeignKey {
            columns: fk.columns.iter().map(|c| canonical_name(def, c)).collect(),
            table: fk.table.clone(),
            ref_columns: fk
                .ref_columns
                .iter()
                .map(|c| canonical_name(target, c))
                .collect(),
        };
        let def = self.table_mut(table)?;
        if def.foreign_keys.contains(&fk) {
            return Err(CatalogError::DuplicateName(format!(
                "foreign key {table} -> {}",
                fk.table
            )));
        }
        def.foreign_keys.push(fk);
        Ok(())
    }

    fn add_key(&mut self, table: &TableRef, key: &[String]) -> Result<(), CatalogError> {
        let def = self.table(table).expect("table just created");
        if key.is_empty() {
            return Err(CatalogError::InvalidChange(format!("empty key on {table}")));
        }
        if let Some(missing) = key.iter().find(|c| def.column(c).is_none()) {
            return Err(CatalogError::DanglingReference(format!(
                "{table}.{missing}"
            )));
        }
        let key: Vec<String> = key.iter().map(|c| canonical_name(def, c)).collect();
        self.table_mut(table)?.keys.push(key);
        Ok(())
    }

    fn add_term(
        &mut self,
        vocabulary: &TableRef,
        term: &VocabularyTerm,
    ) -> Result<(), CatalogError> {
        let def = self.require_vocabulary(vocabulary)?;
        check_term_text(&term.canonical)?;
        for text in std::iter::once(&term.canonical).chain(term.synonyms.iter()) {
            check_term_text(text)?;
            if def.term_taken(text).is_some() {
                return Err(CatalogError::DuplicateName(format!(
                    "term `{text}` in {vocabulary}"
                )));
            }
        }
        self.table_mut(vocabulary)?.terms.push(term.clone());
        Ok(())
    }
}

fn check_term_text(text: &str) -> Result<(), CatalogError> {
    if text.trim().is_empty() {
        return Err(CatalogError::InvalidChange("empty term".into()));
    }
    Ok(())
}

fn canonical_name(def: &TableDef, name: &str) -> String {
    if name == RID {
        return RID.to_string();
    }
    def.column(name)
        .map(|c| c.name.clone())
        .unwrap_or_else(|| name.to_string())
}

fn rename_in(names: &mut [String], from: &str, to: &str) {
    for n in names.iter_mut().filter(|n| n.as_str() == from) {
        *n = to.to_string();
    }
}
