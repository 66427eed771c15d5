//! Where catalog, identifier and flow commands are carried out: directly
//! on a data directory, or against a running service.

use std::io::Read;
use std::time::Duration;

use fairkit::catalog::{ModelChange, Principal, Query, TableRef};
use fairkit::idspace::MintRequest;
use fairkit_server::ops::{
    query_to_params, ExportBody, LocationsBody, RunBody, UpdateBody, UpgradeBody,
};
use fairkit_server::{ApiError, DataDir, IDEMPOTENCY_KEY};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

pub enum Backend {
    Local { data: Box<DataDir>, who: Principal },
    Remote(Remote),
}

pub struct Remote {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

/// An export as the CLI reports it, plus the archive bytes.
pub struct ExportOutcome {
    pub minid: Value,
    pub snapshot: u64,
    pub archive: Vec<u8>,
}

fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("results serialize")
}

fn local<T: Serialize>(result: Result<T, ApiError>) -> Result<Value, Failure> {
    result.map(|v| to_value(&v)).map_err(Failure::Api)
}

/// Path segment escaping for identifiers and table names.
fn segment(text: &str) -> String {
    url::form_urlencoded::byte_serialize(text.as_bytes())
        .collect::<String>()
        .replace('+', "%20")
}

impl Remote {
    pub fn new(base: &str, token: Option<String>) -> Self {
        Remote {
            base: base.trim_end_matches('/').to_string(),
            token,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(600))
                .build(),
        }
    }

    fn request(&self, method: &str, path: &str, query: &[(String, String)]) -> ureq::Request {
        let mut request = self.agent.request(method, &format!("{}{path}", self.base));
        for (k, v) in query {
            request = request.query(k, v);
        }
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        request
    }

    fn finish(result: Result<ureq::Response, ureq::Error>) -> Result<ureq::Response, Failure> {
        match result {
            Ok(response) => Ok(response),
            Err(ureq::Error::Status(status, response)) => {
                let text = response.into_string().unwrap_or_default();
                let error = serde_json::from_str::<ApiError>(&text).unwrap_or_else(|_| ApiError {
                    http_status: status,
                    code: "Internal".into(),
                    detail: text,
                });
                Err(Failure::Api(error))
            }
            Err(e) => Err(Failure::Connectivity(e.to_string())),
        }
    }

    fn json(response: ureq::Response) -> Result<Value, Failure> {
        let text = response
            .into_string()
            .map_err(|e| Failure::Connectivity(e.to_string()))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Connectivity(format!("unreadable response: {e}")))
    }

    fn send(
        &self,
        method: &str,
        path: &str,
        body: Option<String>,
        key: Option<&str>,
    ) -> Result<ureq::Response, Failure> {
        let mut request = self.request(method, path, &[]);
        if let Some(key) = key {
            request = request.set(IDEMPOTENCY_KEY, key);
        }
        let result = match body {
            Some(body) => request
                .set("Content-Type", "application/json")
                .send_string(&body),
            None => request.call(),
        };
        Remote::finish(result)
    }

    fn call<T: Serialize>(
        &self,
        method: &str,
        path: &str,
        body: Option<&T>,
        key: Option<&str>,
    ) -> Result<Value, Failure> {
        let body = body.map(|b| serde_json::to_string(b).expect("requests serialize"));
        Remote::json(self.send(method, path, body, key)?)
    }

    fn get(&self, path: &str, query: &[(String, String)]) -> Result<Value, Failure> {
        Remote::json(Remote::finish(self.request("GET", path, query).call())?)
    }
}

fn snapshot_query(snapshot: Option<u64>) -> Vec<(String, String)> {
    snapshot
        .map(|s| ("snapshot".to_string(), s.to_string()))
        .into_iter()
        .collect()
}

impl Backend {
    pub fn mint(&self, request: &MintRequest, key: Option<&str>) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.mint(who, request, key)),
            Backend::Remote(r) => r.call("POST", "/v1/id/mint", Some(request), key),
        }
    }

    pub fn resolve_id(&self, id: &str) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.resolve_id(who, id)),
            Backend::Remote(r) => r.get(&format!("/v1/id/{}", segment(id)), &[]),
        }
    }

    pub fn update_locations(&self, id: &str, body: &LocationsBody) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.update_locations(who, id, body)),
            Backend::Remote(r) => r.call(
                "PATCH",
                &format!("/v1/id/{}/locations", segment(id)),
                Some(body),
                None,
            ),
        }
    }

    pub fn upgrade_id(&self, id: &str, body: &UpgradeBody) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.upgrade_id(who, id, body)),
            Backend::Remote(r) => r.call(
                "POST",
                &format!("/v1/id/{}/upgrade", segment(id)),
                Some(body),
                None,
            ),
        }
    }

    pub fn model(&self, snapshot: Option<u64>) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.model(who, snapshot)),
            Backend::Remote(r) => r.get("/v1/catalog/model", &snapshot_query(snapshot)),
        }
    }

    pub fn apply_model_change(&self, change: ModelChange) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.apply_model_change(who, change)),
            Backend::Remote(r) => r.call("POST", "/v1/catalog/model", Some(&change), None),
        }
    }

    pub fn insert(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        key: Option<&str>,
    ) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.insert(who, table, values, key)),
            Backend::Remote(r) => {
                let path = format!(
                    "/v1/catalog/entity/{}/{}",
                    segment(&table.schema),
                    segment(&table.table)
                );
                r.call("POST", &path, Some(&values), key)
            }
        }
    }

    pub fn update_entity(&self, rid: &str, body: &UpdateBody) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.update_entity(who, rid, body)),
            Backend::Remote(r) => r.call(
                "PATCH",
                &format!("/v1/catalog/entity/{}", segment(rid)),
                Some(body),
                None,
            ),
        }
    }

    pub fn query(&self, query: &Query) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.query(who, query)),
            Backend::Remote(r) => r.get("/v1/catalog/query", &query_to_params(query)),
        }
    }

    pub fn export(&self, body: &ExportBody) -> Result<ExportOutcome, Failure> {
        match self {
            Backend::Local { data, who } => {
                let exported = data.export(who, body).map_err(Failure::Api)?;
                Ok(ExportOutcome {
                    minid: to_value(&exported.minid),
                    snapshot: exported.snapshot,
                    archive: exported.archive,
                })
            }
            Backend::Remote(r) => {
                let response = r.send(
                    "POST",
                    "/v1/catalog/export",
                    Some(serde_json::to_string(body).unwrap()),
                    None,
                )?;
                let header = |name: &str| response.header(name).map(str::to_string);
                let minid = header("x-minid")
                    .ok_or_else(|| Failure::Connectivity("export reply lacks x-minid".into()))?;
                let snapshot = header("x-catalog-snapshot")
                    .and_then(|s| s.parse().ok())
                    .unwrap_or_default();
                let mut archive = Vec::new();
                response
                    .into_reader()
                    .read_to_end(&mut archive)
                    .map_err(|e| Failure::Connectivity(e.to_string()))?;
                Ok(ExportOutcome {
                    minid: self.resolve_id(&minid)?,
                    snapshot,
                    archive,
                })
            }
        }
    }

    pub fn define_flow(&self, spec: &str) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.define_flow(who, spec)),
            Backend::Remote(r) => {
                Remote::json(r.send("POST", "/v1/flow/define", Some(spec.to_string()), None)?)
            }
        }
    }

    pub fn run_flow(&self, body: &RunBody) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.run_flow(who, body)),
            Backend::Remote(r) => r.call("POST", "/v1/flow/run", Some(body), None),
        }
    }

    pub fn resume_flow(&self, run_id: &str) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.resume_flow(who, run_id)),
            Backend::Remote(r) => r.call::<Value>(
                "POST",
                &format!("/v1/flow/{}/resume", segment(run_id)),
                None,
                None,
            ),
        }
    }

    pub fn audit(&self, run_id: &str) -> Result<Value, Failure> {
        match self {
            Backend::Local { data, who } => local(data.audit(who, run_id)),
            Backend::Remote(r) => r.get(&format!("/v1/flow/{}/audit", segment(run_id)), &[]),
        }
    }
}
