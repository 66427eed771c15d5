use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::bag::{file_url, Algorithm, Resolvers};
use crate::catalog::{Catalog, Principal, TableRef};
use crate::idspace::{IdString, MinidFetcher, MinidRecord, MintRequest, Registry};

/// Turns file content into a metadata object.
pub trait Extractor: Send + Sync {
    fn extract(&self, file_name: &str, bytes: &[u8]) -> Result<Map<String, Value>, String>;
}

/// Name, size and a media type guessed from the extension.
#[derive(Debug, Default, Clone, Copy)]
pub struct BasicExtractor;

impl Extractor for BasicExtractor {
    fn extract(&self, file_name: &str, bytes: &[u8]) -> Result<Map<String, Value>, String> {
        let lower = file_name.to_ascii_lowercase();
        let media_type = [
            (".ome.tiff", "image/tiff"),
            (".ome.tif", "image/tiff"),
            (".tiff", "image/tiff"),
            (".tif", "image/tiff"),
            (".png", "image/png"),
            (".jpg", "image/jpeg"),
            (".csv", "text/csv"),
            (".txt", "text/plain"),
            (".json", "application/json"),
        ]
        .iter()
        .find(|(ext, _)| lower.ends_with(ext))
        .map_or("application/octet-stream", |(_, t)| t);
        let map = json!({
            "file_name": file_name,
            "length": bytes.len(),
            "media_type": media_type,
        });
        Ok(map.as_object().expect("object literal").clone())
    }
}

/// Points in a step where a test harness may stop the run as if the
/// process had died.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After the start event, before any work.
    BeforeWork,
    /// After an external effect happened, before it was recorded.
    AfterEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interrupted;

/// What a flow needs from the outside world. Errors are plain text; they
/// end up in the audit log.
pub trait FlowServices: Send + Sync {
    /// Reads the original input, a path or a URL.
    fn read_source(&self, location: &str) -> Result<Vec<u8>, String>;
    /// Stores bytes durably and returns a URL they can be fetched from.
    /// Storing the same bytes twice returns the same URL.
    fn store(&self, name: &str, bytes: &[u8]) -> Result<String, String>;
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String>;
    /// Mints at most one identifier per `key`.
    fn mint(&self, request: &MintRequest, key: &str) -> Result<MinidRecord, String>;
    /// Inserts at most one record per `key`; returns its RID and citation.
    fn register(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        key: &str,
    ) -> Result<(IdString, String), String>;
    fn extractor(&self, name: &str) -> Option<Arc<dyn Extractor>>;
    fn checkpoint(&self, _step: &str, _phase: Phase) -> Result<(), Interrupted> {
        Ok(())
    }
}

/// Services backed by a storage directory, a registry and a catalog in the
/// same process.
pub struct LocalServices {
    storage: PathBuf,
    registry: Arc<Registry>,
    catalog: Arc<Catalog>,
    principal: Principal,
    resolvers: Resolvers,
    extractors: BTreeMap<String, Arc<dyn Extractor>>,
}

impl LocalServices {
    pub fn new(
        storage: &Path,
        registry: Arc<Registry>,
        catalog: Arc<Catalog>,
        principal: Principal,
    ) -> Self {
        let resolvers = Resolvers::with_defaults();
        let minids = MinidFetcher::new(registry.clone(), resolvers.clone());
        LocalServices {
            storage: storage.to_path_buf(),
            registry,
            catalog,
            principal,
            resolvers: resolvers.register("minid", Arc::new(minids)),
            extractors: BTreeMap::from([(
                "basic".to_string(),
                Arc::new(BasicExtractor) as Arc<dyn Extractor>,
            )]),
        }
    }

    pub fn with_extractor(mut self, name: &str, extractor: Arc<dyn Extractor>) -> Self {
        self.extractors.insert(name.to_string(), extractor);
        self
    }

    pub fn resolvers(&self) -> &Resolvers {
        &self.resolvers
    }
}

/// Last path component of a path or URL.
pub(super) fn base_name(location: &str) -> String {
    let end = location.find(['?', '#']).unwrap_or(location.len());
    let name = location[..end]
        .rsplit(['/', '\\'])
        .next()
        .unwrap_or_default();
    if name.is_empty() || name == "." || name == ".." {
        "content".into()
    } else {
        name.into()
    }
}

fn has_scheme(location: &str) -> bool {
    location.split_once(':').is_some_and(|(scheme, _)| {
        scheme.len() > 1
            && scheme
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
    })
}

impl FlowServices for LocalServices {
    fn read_source(&self, location: &str) -> Result<Vec<u8>, String> {
        if has_scheme(location) {
            self.fetch(location)
        } else {
            std::fs::read(location).map_err(|e| format!("{location}: {e}"))
        }
    }

    fn store(&self, name: &str, bytes: &[u8]) -> Result<String, String> {
        let dir = self.storage.join(Algorithm::Sha256.digest(bytes));
        let path = dir.join(base_name(name));
        if !path.is_file() {
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let partial = dir.join(".partial");
            std::fs::write(&partial, bytes).map_err(|e| e.to_string())?;
            std::fs::rename(&partial, &path).map_err(|e| e.to_string())?;
        }
        file_url(&path).ok_or_else(|| format!("{} has no file URL", path.display()))
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, String> {
        self.resolvers.fetch(url).map_err(|e| e.to_string())
    }

    fn mint(&self, request: &MintRequest, key: &str) -> Result<MinidRecord, String> {
        self.registry
            .mint_idempotent(request, key)
            .map_err(|e| format!("{}: {e}", e.code()))
    }

    fn register(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        key: &str,
    ) -> Result<(IdString, String), String> {
        let record = self
            .catalog
            .insert_idempotent(table, values, key, &self.principal)
            .map_err(|e| format!("{}: {e}", e.code()))?;
        let citation = self.catalog.citation_url(&record.rid);
        Ok((record.rid, citation))
    }

    fn extractor(&self, name: &str) -> Option<Arc<dyn Extractor>> {
        self.extractors.get(name).cloned()
    }
}
