use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::acl::{Access, Principal};
use super::model::{
    CatalogModel, ColumnDef, ForeignKey, TableDef, TableKind, TableRef, ValueType, RCT, RID, RMT,
};
use super::store::{Catalog, RecordVersion, State, Stored};
use super::value::{coerce, compare, to_cell, total_order};
use super::CatalogError;
use crate::idspace::IdString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    /// Case-insensitive substring of the value's text form.
    Contains,
    IsNull,
    NotNull,
    /// Matches everything; as a facet, asks for counts only.
    Any,
}

impl FilterOp {
    fn takes_value(self) -> bool {
        !matches!(self, FilterOp::IsNull | FilterOp::NotNull | FilterOp::Any)
    }

    fn name(self) -> &'static str {
        match self {
            FilterOp::Eq => "eq",
            FilterOp::Ne => "ne",
            FilterOp::Lt => "lt",
            FilterOp::Le => "le",
            FilterOp::Gt => "gt",
            FilterOp::Ge => "ge",
            FilterOp::Contains => "contains",
            FilterOp::IsNull => "isnull",
            FilterOp::NotNull => "notnull",
            FilterOp::Any => "any",
        }
    }
}

impl FromStr for FilterOp {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "eq" => FilterOp::Eq,
            "ne" => FilterOp::Ne,
            "lt" => FilterOp::Lt,
            "le" => FilterOp::Le,
            "gt" => FilterOp::Gt,
            "ge" => FilterOp::Ge,
            "contains" => FilterOp::Contains,
            "isnull" => FilterOp::IsNull,
            "notnull" => FilterOp::NotNull,
            "any" => FilterOp::Any,
            other => {
                return Err(CatalogError::UnknownPath(format!(
                    "unknown filter operator `{other}`"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    #[serde(default)]
    pub value: Value,
}

impl Filter {
    pub fn new(column: &str, op: FilterOp, value: impl Into<Value>) -> Self {
        Filter {
            column: column.to_string(),
            op,
            value: value.into(),
        }
    }

    /// `column:op:value`, or `column:op` for operators without a value.
    /// The value is everything after the second colon.
    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let bad = || CatalogError::UnknownPath(format!("`{text}` is not column:op[:value]"));
        let mut parts = text.splitn(3, ':');
        let column = parts.next().filter(|c| !c.is_empty()).ok_or_else(bad)?;
        let op: FilterOp = parts.next().ok_or_else(bad)?.parse()?;
        let value = parts.next();
        match (op.takes_value(), value) {
            (true, Some(v)) => Ok(Filter::new(column, op, v)),
            (false, None) => Ok(Filter::new(column, op, Value::Null)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.column, self.op.name())?;
        if self.op.takes_value() {
            write!(f, ":{}", to_cell(&self.value))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Query {
    /// `Schema:Table`, optionally followed by `/col=value` filters and
    /// further `/Schema:Table` hops along foreign keys or extensions.
    pub path: String,
    #[serde(default)]
    pub filters: Vec<Filter>,
    #[serde(default)]
    pub facets: Vec<Filter>,
    #[serde(default)]
    pub snapshot: Option<u64>,
    /// Only rows with RID greater than this.
    #[serde(default)]
    pub after: Option<IdString>,
    #[serde(default)]
    pub limit: Option<usize>,
}

impl Query {
    pub fn table(path: &str) -> Self {
        Query {
            path: path.to_string(),
            ..Query::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetCount {
    pub value: Value,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub snapshot: u64,
    pub model_version: u64,
    pub table: TableRef,
    /// Rows matching the filters and facets, before pagination.
    pub total: usize,
    pub rows: Vec<RecordVersion>,
    pub facets: BTreeMap<String, Vec<FacetCount>>,
    /// Cursor for the next page, when rows were cut off by `limit`.
    pub next: Option<IdString>,
}

/// A column resolved against a snapshot's model.
#[derive(Debug, Clone, PartialEq)]
enum Col {
    Rid,
    Rct,
    Rmt,
    User(ColumnDef),
}

impl Col {
    fn identity(&self) -> String {
        match self {
            Col::Rid => RID.into(),
            Col::Rct => RCT.into(),
            Col::Rmt => RMT.into(),
            Col::User(c) => format!("#{}", c.id),
        }
    }

    fn value(&self, row: &Stored) -> Value {
        match self {
            Col::Rid => Value::String(row.rid.to_string()),
            Col::Rct => Value::String(row.rct.to_string()),
            Col::Rmt => Value::String(row.rmt.to_string()),
            Col::User(c) => row.values.get(&c.id).cloned().unwrap_or(Value::Null),
        }
    }
}

/// Resolves `name` for `table` as of `model`: current names first, then
/// former names, then names the column acquired later (looked up in
/// `latest`), so queries written against any model version still work.
fn resolve_column(
    model: &CatalogModel,
    latest: &CatalogModel,
    table: &TableRef,
    name: &str,
) -> Result<Col, CatalogError> {
    match name {
        RID => return Ok(Col::Rid),
        RCT => return Ok(Col::Rct),
        RMT => return Ok(Col::Rmt),
        _ => {}
    }
    let def = model.require(table)?;
    if let Some(c) = def.column(name) {
        return Ok(Col::User(c.clone()));
    }
    latest
        .table(table)
        .and_then(|d| d.column(name))
        .and_then(|c| def.column_by_id(c.id))
        .map(|c| Col::User(c.clone()))
        .ok_or_else(|| CatalogError::UnknownColumn(format!("{table}.{name}")))
}

struct Compiled {
    col: Col,
    op: FilterOp,
    value: Value,
}

impl Compiled {
    fn new(
        model: &CatalogModel,
        latest: &CatalogModel,
        table: &TableRef,
        filter: &Filter,
    ) -> Result<Self, CatalogError> {
        let col = resolve_column(model, latest, table, &filter.column)?;
        let value = if !filter.op.takes_value() || filter.op == FilterOp::Contains {
            filter.value.clone()
        } else {
            match &col {
                Col::Rid => {
                    let def = id_column(RID);
                    coerce(model, &def, &filter.value)?
                }
                Col::Rct | Col::Rmt => {
                    coerce(model, &timestamp_column(&filter.column), &filter.value)?
                }
                Col::User(c) => match coerce(model, c, &filter.value) {
                    // A synonym added after the snapshot still names the term.
                    Err(CatalogError::UnknownTerm { .. }) if c.value_type == ValueType::Term => {
                        coerce(latest, c, &filter.value)?
                    }
                    other => other?,
                },
            }
        };
        Ok(Compiled {
            col,
            op: filter.op,
            value,
        })
    }

    fn matches(&self, row: &Stored) -> bool {
        let v = self.col.value(row);
        match self.op {
            FilterOp::Any => true,
            FilterOp::IsNull => v.is_null(),
            FilterOp::NotNull => !v.is_null(),
            FilterOp::Contains => {
                !v.is_null()
                    && to_cell(&v)
                        .to_lowercase()
                        .contains(&to_cell(&self.value).to_lowercase())
            }
            op => compare(&v, &self.value).is_some_and(|o| match op {
                FilterOp::Eq => o.is_eq(),
                FilterOp::Ne => o.is_ne(),
                FilterOp::Lt => o.is_lt(),
                FilterOp::Le => o.is_le(),
                FilterOp::Gt => o.is_gt(),
                FilterOp::Ge => o.is_ge(),
                _ => unreachable!(),
            }),
        }
    }
}

fn id_column(name: &str) -> ColumnDef {
    ColumnDef {
        id: 0,
        name: name.into(),
        value_type: ValueType::Identifier,
        nullable: true,
        vocabulary: None,
        aliases: vec![],
    }
}

fn timestamp_column(name: &str) -> ColumnDef {
    ColumnDef {
        value_type: ValueType::Timestamp,
        ..id_column(name)
    }
}

/// How two adjacent path tables are joined.
pub(super) enum Link {
    /// `from` holds a foreign key into `to`.
    Out(ForeignKey),
    /// `to` holds a foreign key into `from`.
    In(ForeignKey),
    /// One extends the other; rows pair up by RID.
    SameRid,
}

pub(super) fn link_between(
    model: &CatalogModel,
    from: &TableRef,
    to: &TableRef,
) -> Result<Link, CatalogError> {
    let from_def = model.require(from)?;
    let to_def = model.require(to)?;
    let mut links = Vec::new();
    if from_def.extends.as_ref() == Some(to) || to_def.extends.as_ref() == Some(from) {
        links.push(Link::SameRid);
    }
    links.extend(
        from_def
            .foreign_keys
            .iter()
            .filter(|fk| &fk.table == to)
            .cloned()
            .map(Link::Out),
    );
    if from != to {
        links.extend(
            to_def
                .foreign_keys
                .iter()
                .filter(|fk| &fk.table == from)
                .cloned()
                .map(Link::In),
        );
    }
    match links.len() {
        1 => Ok(links.pop().unwrap()),
        0 => Err(CatalogError::UnknownPath(format!(
            "no link from {from} to {to}"
        ))),
        _ => Err(CatalogError::UnknownPath(format!(
            "more than one link from {from} to {to}"
        ))),
    }
}

fn tuple(def: &TableDef, row: &Stored, columns: &[String]) -> Option<String> {
    let values: Vec<Value> = columns
        .iter()
        .map(|c| State::value_of(def, row, c))
        .collect();
    if values.iter().any(Value::is_null) {
        return None;
    }
    Some(serde_json::to_string(&values).expect("values serialize"))
}

/// Live rows of `to` at `snapshot` linked to any of `rows` (rows of `from`).
pub(super) fn follow<'s>(
    state: &'s State,
    model: &CatalogModel,
    snapshot: u64,
    from: &TableRef,
    rows: &[&Arc<Stored>],
    to: &TableRef,
    link: &Link,
) -> Result<Vec<&'s Arc<Stored>>, CatalogError> {
    let from_def = model.require(from)?;
    let to_def = model.require(to)?;
    let candidates = state.live_rows(to, snapshot);
    Ok(match link {
        Link::SameRid => {
            let rids: HashSet<&IdString> = rows.iter().map(|r| &r.rid).collect();
            candidates
                .into_iter()
                .filter(|r| rids.contains(&r.rid))
                .collect()
        }
        Link::Out(fk) => {
            let wanted: HashSet<String> = rows
                .iter()
                .filter_map(|r| tuple(from_def, r, &fk.columns))
                .collect();
            candidates
                .into_iter()
                .filter(|r| tuple(to_def, r, &fk.ref_columns).is_some_and(|t| wanted.contains(&t)))
                .collect()
        }
        Link::In(fk) => {
            let wanted: HashSet<String> = rows
                .iter()
                .filter_map(|r| tuple(from_def, r, &fk.ref_columns))
                .collect();
            candidates
                .into_iter()
                .filter(|r| tuple(to_def, r, &fk.columns).is_some_and(|t| wanted.contains(&t)))
                .collect()
        }
    })
}

enum Segment {
    Table(TableRef),
    Equals(String, String),
}

fn parse_path(path: &str) -> Result<Vec<Segment>, CatalogError> {
    let segments: Vec<Segment> = path
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| match s.split_once('=') {
            Some((col, value)) => Ok(Segment::Equals(col.to_string(), value.to_string())),
            None => TableRef::parse(s).map(Segment::Table),
        })
        .collect::<Result<_, _>>()?;
    if !matches!(segments.first(), Some(Segment::Table(_))) {
        return Err(CatalogError::UnknownPath(format!(
            "`{path}` does not start with Schema:Table"
        )));
    }
    Ok(segments)
}

impl Catalog {
    /// Evaluates `query` against a snapshot. Rows come back RID ascending;
    /// facet counts for a column cover the rows matching the filters and
    /// every facet on other columns.
    pub fn query(&self, query: &Query, actor: &Principal) -> Result<QueryResult, CatalogError> {
        let state = self.read_state();
        let snapshot = state.check_snapshot(query.snapshot)?;
        let model = state.model_at(snapshot).clone();
        let latest = state.model().clone();
        let segments = parse_path(&query.path)?;

        let mut current: Option<(TableRef, Vec<&Arc<Stored>>)> = None;
        for segment in &segments {
            match segment {
                Segment::Table(table) => {
                    let def = model.require(table)?;
                    if def.kind == TableKind::Vocabulary {
                        return Err(CatalogError::UnknownPath(format!(
                            "{table} is a vocabulary; its terms are part of the model"
                        )));
                    }
                    self.authorize(actor, Some(table), Access::Read)?;
                    let rows = match &current {
                        None => state.live_rows(table, snapshot),
                        Some((from, rows)) => {
                            let link = link_between(&model, from, table)?;
                            follow(&state, &model, snapshot, from, rows, table, &link)?
                        }
                    };
                    current = Some((table.clone(), rows));
                }
                Segment::Equals(column, value) => {
                    let (table, rows) = current.as_mut().expect("path starts with a table");
                    let f = Compiled::new(
                        &model,
                        &latest,
                        table,
                        &Filter::new(column, FilterOp::Eq, value.as_str()),
                    )?;
                    rows.retain(|r| f.matches(r));
                }
            }
        }
        let (table, mut rows) = current.expect("path starts with a table");
        rows.sort_by(|a, b| a.rid.cmp(&b.rid));

        let filters: Vec<Compiled> = query
            .filters
            .iter()
            .map(|f| Compiled::new(&model, &latest, &table, f))
            .collect::<Result<_, _>>()?;
        let facets: Vec<Compiled> = query
            .facets
            .iter()
            .map(|f| Compiled::new(&model, &latest, &table, f))
            .collect::<Result<_, _>>()?;
        rows.retain(|r| filters.iter().all(|f| f.matches(r)));

        let mut counts = BTreeMap::new();
        for (spec, facet) in query.facets.iter().zip(&facets) {
            let column = facet.col.identity();
            let mut tally: Vec<(Value, u64)> = Vec::new();
            for row in rows.iter().filter(|r| {
                facets
                    .iter()
                    .filter(|other| other.col.identity() != column)
                    .all(|other| other.matches(r))
            }) {
                let v = facet.col.value(row);
                match tally.iter_mut().find(|(seen, _)| seen == &v) {
                    Some((_, n)) => *n += 1,
                    None => tally.push((v, 1)),
                }
            }
            tally.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| total_order(&a.0, &b.0)));
            counts.insert(
                spec.column.clone(),
                tally
                    .into_iter()
                    .map(|(value, count)| FacetCount { value, count })
                    .collect(),
            );
        }

        rows.retain(|r| facets.iter().all(|f| f.matches(r)));
        let total = rows.len();
        if let Some(after) = &query.after {
            rows.retain(|r| &r.rid > after);
        }
        let mut next = None;
        if let Some(limit) = query.limit {
            if rows.len() > limit {
                rows.truncate(limit);
                next = rows.last().map(|r| r.rid.clone());
            }
        }
        Ok(QueryResult {
            snapshot,
            model_version: model.version,
            table,
            total,
            rows: rows.iter().map(|r| State::render(&model, r)).collect(),
            facets: counts,
            next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogOptions, ColumnSpec, ModelChange, VocabularyTerm};
    use crate::clock::ManualClock;
    use crate::idspace::SuffixSource;
    use serde_json::{json, Map};

    fn t(s: &str) -> TableRef {
        TableRef::parse(s).unwrap()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn catalog() -> Catalog {
        let cat = Catalog::in_memory(CatalogOptions {
            clock: Arc::new(ManualClock::default()),
            suffixes: Arc::new(SuffixSource::seeded(3)),
            ..CatalogOptions::default()
        });
        let a = Principal::new("a", &[]);
        cat.apply_model_change(
            ModelChange::AddVocabulary {
                table: t("V:Status"),
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
                table: t("Lab:Experiment"),
                kind: TableKind::Entity,
                columns: vec![
                    ColumnSpec::new("Name", ValueType::Text),
                    ColumnSpec::new("Count", ValueType::Integer),
                    ColumnSpec::term("Status", t("V:Status")),
                ],
                keys: vec![],
                foreign_keys: vec![],
            },
            &a,
        )
        .unwrap();
        for (i, status) in [
            "done",
            "completed",
            "in-progress",
            "Completed",
            "in-progress",
        ]
        .iter()
        .enumerate()
        {
            cat.insert(
                &t("Lab:Experiment"),
                obj(json!({"Name": format!("e{i}"), "Count": i, "Status": status})),
                &a,
            )
            .unwrap();
        }
        cat
    }

    fn who() -> Principal {
        Principal::new("a", &[])
    }

    #[test]
    fn filter_wire_format() {
        let f = Filter::parse("Name:eq:a:b").unwrap();
        assert_eq!(
            (f.column.as_str(), f.op, f.value.clone()),
            ("Name", FilterOp::Eq, json!("a:b"))
        );
        assert_eq!(f.to_string(), "Name:eq:a:b");
        assert_eq!(Filter::parse("Name:isnull").unwrap().op, FilterOp::IsNull);
        assert!(Filter::parse("Name:eq").is_err());
        assert!(Filter::parse("Name:like:x").is_err());
    }

    #[test]
    fn facet_counts_by_brute_force() {
        let cat = catalog();
        let q = Query {
            facets: vec![Filter::new("Status", FilterOp::Any, Value::Null)],
            ..Query::table("Lab:Experiment")
        };
        let result = cat.query(&q, &who()).unwrap();
        assert_eq!(result.total, 5);
        assert_eq!(
            result.facets["Status"],
            vec![
                FacetCount {
                    value: json!("completed"),
                    count: 3
                },
                FacetCount {
                    value: json!("in-progress"),
                    count: 2
                },
            ]
        );
        let q = Query {
            facets: vec![Filter::new("Status", FilterOp::Eq, "DONE")],
            ..Query::table("Lab:Experiment")
        };
        let result = cat.query(&q, &who()).unwrap();
        assert_eq!(result.total, 3);
        assert_eq!(result.facets["Status"].len(), 2);
    }

    #[test]
    fn filters_and_ordering() {
        let cat = catalog();
        let q = Query {
            filters: vec![Filter::new("Count", FilterOp::Ge, "2")],
            ..Query::table("Lab:Experiment")
        };
        let result = cat.query(&q, &who()).unwrap();
        assert_eq!(result.total, 3);
        assert!(result.rows.windows(2).all(|w| w[0].rid < w[1].rid));
        let q = Query::table("Lab:Experiment/Name=e1");
        assert_eq!(cat.query(&q, &who()).unwrap().total, 1);
        let q = Query {
            filters: vec![Filter::new("Name", FilterOp::Contains, "E")],
            ..Query::table("Lab:Experiment")
        };
        assert_eq!(cat.query(&q, &who()).unwrap().total, 5);
    }

    #[test]
    fn pagination_walks_every_row_once() {
        let cat = catalog();
        let mut seen = Vec::new();
        let mut q = Query {
            limit: Some(2),
            ..Query::table("Lab:Experiment")
        };
        loop {
            let page = cat.query(&q, &who()).unwrap();
            seen.extend(page.rows.iter().map(|r| r.rid.clone()));
            match page.next {
                Some(next) => q.after = Some(next),
                None => break,
            }
        }
        let all = cat.query(&Query::table("Lab:Experiment"), &who()).unwrap();
        assert_eq!(
            seen,
            all.rows.iter().map(|r| r.rid.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn old_names_work_after_rename() {
        let cat = catalog();
        let before = cat.snapshot();
        cat.apply_model_change(
            ModelChange::RenameColumn {
                table: t("Lab:Experiment"),
                from: "Count".into(),
                to: "Replicates".into(),
            },
            &who(),
        )
        .unwrap();
        for snapshot in [Some(before), None] {
            for name in ["Count", "Replicates"] {
                let q = Query {
                    filters: vec![Filter::new(name, FilterOp::Lt, 2)],
                    snapshot,
                    ..Query::table("Lab:Experiment")
                };
                assert_eq!(
                    cat.query(&q, &who()).unwrap().total,
                    2,
                    "{name} at {snapshot:?}"
                );
            }
        }
        let now = cat.query(&Query::table("Lab:Experiment"), &who()).unwrap();
        assert!(now.rows[0].values.contains_key("Replicates"));
    }

    #[test]
    fn unknown_things() {
        let cat = catalog();
        let code = |q: Query| cat.query(&q, &who()).unwrap_err().code();
        assert_eq!(code(Query::table("Lab:Nope")), "UnknownPath");
        assert_eq!(code(Query::table("nonsense")), "UnknownPath");
        assert_eq!(code(Query::table("V:Status")), "UnknownPath");
        assert_eq!(
            code(Query {
                filters: vec![Filter::new("Colour", FilterOp::Eq, "x")],
                ..Query::table("Lab:Experiment")
            }),
            "UnknownColumn"
        );
        assert_eq!(
            code(Query {
                snapshot: Some(999),
                ..Query::table("Lab:Experiment")
            }),
            "NotFound"
        );
    }
}
