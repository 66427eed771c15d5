//! One method per HTTP route. The server and the offline CLI both call
//! these, so a request gives the same result either way.

use std::collections::BTreeMap;

use fairkit::bag::{file_url, ArchiveFormat, Resolvers};
use fairkit::catalog::{
    Access, CatalogModel, ExportRequest, Filter, FilterOp, ModelChange, Principal, Query,
    QueryResult, RecordVersion, Resolution, TableRef,
};
use fairkit::clock::Timestamp;
use fairkit::flows::{define_flow, AuditEvent, FlowDef, FlowRun};
use fairkit::idspace::{IdString, MinidFetcher, MinidRecord, MintRequest};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{ApiError, DataDir};

/// Page size when a query names none.
pub const DEFAULT_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationsBody {
    pub locations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeBody {
    pub doi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBody {
    pub values: Map<String, Value>,
    /// The RMT the client last saw; the update fails with `Conflict` if the
    /// row changed since.
    #[serde(default, rename = "RMT", skip_serializing_if = "Option::is_none")]
    pub rmt: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBody {
    pub roots: Vec<IdString>,
    #[serde(default = "one")]
    pub inbound: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outbound: Option<u32>,
    /// Identifier namespace; the configured default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Extra places the archive will be available, besides local storage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub info: Vec<(String, String)>,
}

fn one() -> u32 {
    1
}

/// An exported dataset: the identifier bound to it and its archive.
#[derive(Debug, Clone)]
pub struct Exported {
    pub minid: MinidRecord,
    pub snapshot: u64,
    pub rows: BTreeMap<TableRef, Vec<IdString>>,
    /// Deterministic tar whose SHA-256 is the identifier's checksum.
    pub archive: Vec<u8>,
}

/// A stored flow's name or a complete definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlowRef {
    Name(String),
    Inline(Box<FlowDef>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBody {
    pub flow: FlowRef,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

impl Health {
    pub fn ok() -> Self {
        Health {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

fn parse_rid(text: &str) -> Result<IdString, ApiError> {
    Ok(text.parse::<IdString>()?)
}

/// Reads `key=value` pairs into a query. `filter` and `facet` may repeat;
/// a facet naming only a column asks for its counts.
pub fn query_from_params<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<Query, ApiError> {
    let mut query = Query::default();
    let mut path = None;
    for (key, value) in pairs {
        let number = |v: &str| {
            v.parse::<u64>().map_err(|_| {
                ApiError::new(
                    "MalformedRequest",
                    format!("`{key}` must be a number, got `{v}`"),
                )
            })
        };
        match key {
            "path" => path = Some(value.to_string()),
            "filter" => query.filters.push(Filter::parse(value)?),
            "facet" if value.contains(':') => query.facets.push(Filter::parse(value)?),
            "facet" => query
                .facets
                .push(Filter::new(value, FilterOp::Any, Value::Null)),
            "snapshot" => query.snapshot = Some(number(value)?),
            "after" => query.after = Some(parse_rid(value)?),
            "limit" => query.limit = Some(number(value)? as usize),
            other => {
                return Err(ApiError::new(
                    "MalformedRequest",
                    format!("unknown query parameter `{other}`"),
                ))
            }
        }
    }
    query.path = path.ok_or_else(|| ApiError::new("MalformedRequest", "`path` is required"))?;
    Ok(query)
}

/// Inverse of [`query_from_params`].
pub fn query_to_params(query: &Query) -> Vec<(String, String)> {
    let mut pairs = vec![("path".to_string(), query.path.clone())];
    pairs.extend(
        query
            .filters
            .iter()
            .map(|f| ("filter".to_string(), f.to_string())),
    );
    pairs.extend(query.facets.iter().map(|f| {
        let text = if f.op == FilterOp::Any {
            f.column.clone()
        } else {
            f.to_string()
        };
        ("facet".to_string(), text)
    }));
    if let Some(s) = query.snapshot {
        pairs.push(("snapshot".into(), s.to_string()));
    }
    if let Some(a) = &query.after {
        pairs.push(("after".into(), a.to_string()));
    }
    if let Some(l) = query.limit {
        pairs.push(("limit".into(), l.to_string()));
    }
    pairs
}

impl DataDir {
    fn resolvers(&self) -> Resolvers {
        let base = Resolvers::with_defaults();
        let minids = MinidFetcher::new(self.registry.clone(), base.clone());
        base.register("minid", std::sync::Arc::new(minids))
    }

    pub fn mint(
        &self,
        who: &Principal,
        request: &MintRequest,
        key: Option<&str>,
    ) -> Result<MinidRecord, ApiError> {
        self.require(who, Access::Write)?;
        Ok(match key {
            Some(key) => self.registry.mint_idempotent(request, key)?,
            None => self.registry.mint(request)?,
        })
    }

    pub fn resolve_id(&self, who: &Principal, id: &str) -> Result<MinidRecord, ApiError> {
        self.require(who, Access::Read)?;
        Ok(self.registry.resolve_str(id)?)
    }

    pub fn update_locations(
        &self,
        who: &Principal,
        id: &str,
        body: &LocationsBody,
    ) -> Result<MinidRecord, ApiError> {
        self.require(who, Access::Write)?;
        Ok(self
            .registry
            .update_locations(&id.parse()?, body.locations.clone())?)
    }

    pub fn upgrade_id(
        &self,
        who: &Principal,
        id: &str,
        body: &UpgradeBody,
    ) -> Result<MinidRecord, ApiError> {
        self.require(who, Access::Write)?;
        Ok(self.registry.upgrade(&id.parse()?, &body.doi)?)
    }

    pub fn model(&self, who: &Principal, snapshot: Option<u64>) -> Result<CatalogModel, ApiError> {
        self.require(who, Access::Read)?;
        Ok(match snapshot {
            Some(s) => self.catalog.model_at(s)?,
            None => self.catalog.model(),
        })
    }

    pub fn apply_model_change(
        &self,
        who: &Principal,
        change: ModelChange,
    ) -> Result<CatalogModel, ApiError> {
        Ok(self.catalog.apply_model_change(change, who)?)
    }

    pub fn insert(
        &self,
        who: &Principal,
        table: &TableRef,
        values: Map<String, Value>,
        key: Option<&str>,
    ) -> Result<RecordVersion, ApiError> {
        Ok(match key {
            Some(key) => self.catalog.insert_idempotent(table, values, key, who)?,
            None => self.catalog.insert(table, values, who)?,
        })
    }

    pub fn update_entity(
        &self,
        who: &Principal,
        rid: &str,
        body: &UpdateBody,
    ) -> Result<RecordVersion, ApiError> {
        let rid = parse_rid(rid)?;
        let table = self.catalog.resolve_rid(&rid, who)?.table;
        Ok(self
            .catalog
            .update_row(&table, &rid, body.values.clone(), body.rmt, who)?)
    }

    pub fn get_entity(
        &self,
        who: &Principal,
        rid: &str,
        snapshot: Option<u64>,
    ) -> Result<Resolution, ApiError> {
        let rid = parse_rid(rid)?;
        match snapshot {
            None => Ok(self.catalog.resolve_rid(&rid, who)?),
            Some(s) => {
                let record = self.catalog.get(&rid, Some(s), who)?;
                Ok(Resolution {
                    table: record.table.clone(),
                    citation: self.catalog.citation_url(&rid),
                    record,
                })
            }
        }
    }

    pub fn query(&self, who: &Principal, query: &Query) -> Result<QueryResult, ApiError> {
        let mut query = query.clone();
        query.limit.get_or_insert(DEFAULT_LIMIT);
        Ok(self.catalog.query(&query, who)?)
    }

    /// Exports a dataset, stores its archive under `storage/` and binds it
    /// to a new identifier whose first location is the stored archive.
    pub fn export(&self, who: &Principal, body: &ExportBody) -> Result<Exported, ApiError> {
        self.require(who, Access::Read)?;
        let request = ExportRequest {
            roots: body.roots.clone(),
            inbound: body.inbound,
            outbound: body.outbound,
            creator: who.name.clone(),
            namespace: body
                .namespace
                .clone()
                .unwrap_or_else(|| self.config().id_namespace.clone()),
            locations: Vec::new(),
            title: body.title.clone(),
            info: body.info.clone(),
        };
        let (bag, rows, snapshot) =
            self.catalog
                .package_dataset(&request, &self.resolvers(), who)?;
        let archive = bag.to_archive("bag", ArchiveFormat::Tar, true)?;
        let path = self.store("dataset.tar", &archive)?;
        let mut locations: Vec<String> = file_url(&path).into_iter().collect();
        locations.extend(body.locations.iter().cloned());
        let minid = self.registry.bind_bag(
            &bag,
            &request.creator,
            &request.namespace,
            locations,
            request.title.clone(),
        )?;
        Ok(Exported {
            minid,
            snapshot,
            rows,
            archive,
        })
    }

    pub fn define_flow(&self, who: &Principal, spec: &str) -> Result<FlowDef, ApiError> {
        self.require(who, Access::Write)?;
        let flow = define_flow(spec)?;
        self.flows.define(&flow)?;
        Ok(flow)
    }

    pub fn run_flow(&self, who: &Principal, body: &RunBody) -> Result<FlowRun, ApiError> {
        self.require(who, Access::Write)?;
        let services = self.services_for(who.clone());
        Ok(match &body.flow {
            FlowRef::Name(name) => self.flows.run_named(name, body.params.clone(), &services)?,
            FlowRef::Inline(flow) => self.flows.run_flow(flow, body.params.clone(), &services)?,
        })
    }

    pub fn resume_flow(&self, who: &Principal, run_id: &str) -> Result<FlowRun, ApiError> {
        self.require(who, Access::Write)?;
        let services = self.services_for(who.clone());
        Ok(self.flows.resume_flow(&parse_rid(run_id)?, &services)?)
    }

    pub fn audit(&self, who: &Principal, run_id: &str) -> Result<Vec<AuditEvent>, ApiError> {
        self.require(who, Access::Read)?;
        Ok(self.flows.audit_log(&parse_rid(run_id)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_params_round_trip() {
        let query = query_from_params([
            ("path", "Lab:Subject/Species=mouse"),
            ("filter", "Age:gt:3"),
            ("facet", "Sex"),
            ("facet", "Status:eq:done"),
            ("snapshot", "12"),
            ("limit", "5"),
        ])
        .unwrap();
        assert_eq!(query.facets[0].op, FilterOp::Any);
        let pairs = query_to_params(&query);
        let again = query_from_params(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(again, query);
    }

    #[test]
    fn bad_params_are_rejected() {
        assert_eq!(
            query_from_params([("filter", "A:eq:1")]).unwrap_err().code,
            "MalformedRequest"
        );
        assert_eq!(
            query_from_params([("path", "A:B"), ("limit", "x")])
                .unwrap_err()
                .code,
            "MalformedRequest"
        );
        assert_eq!(
            query_from_params([("path", "A:B"), ("filter", "A:zz:1")])
                .unwrap_err()
                .code,
            "UnknownPath"
        );
    }
}
