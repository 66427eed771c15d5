//! Retrieval of `fetch.txt` content through per-scheme handlers.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::{Bag, BagError, FetchEntry, PayloadEntry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct FetchError(pub String);

/// Retrieves the bytes behind one URL scheme.
pub trait FetchHandler: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, FetchError>;

    /// Whether `url` currently looks retrievable. The default fetches it.
    fn probe(&self, url: &str) -> bool {
        self.fetch(url).is_ok()
    }
}

/// `file:` URLs on the local filesystem.
#[derive(Debug, Default, Clone, Copy)]
pub struct FileFetcher;

impl FileFetcher {
    fn local_path(url: &str) -> Result<std::path::PathBuf, FetchError> {
        let parsed = url::Url::parse(url).map_err(|e| FetchError(format!("bad file URL: {e}")))?;
        parsed
            .to_file_path()
            .map_err(|_| FetchError(format!("{url} is not a local file URL")))
    }
}

impl FetchHandler for FileFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let path = FileFetcher::local_path(url)?;
        std::fs::read(&path).map_err(|e| FetchError(format!("{}: {e}", path.display())))
    }

    fn probe(&self, url: &str) -> bool {
        FileFetcher::local_path(url).is_ok_and(|p| p.is_file())
    }
}

/// `http:` and `https:` URLs.
#[derive(Clone)]
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl Default for HttpFetcher {
    fn default() -> Self {
        HttpFetcher {
            agent: ureq::AgentBuilder::new()
                .timeout(std::time::Duration::from_secs(60))
                .build(),
        }
    }
}

impl FetchHandler for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let response = self
            .agent
            .get(url)
            .call()
            .map_err(|e| FetchError(e.to_string()))?;
        let mut body = Vec::new();
        response
            .into_reader()
            .read_to_end(&mut body)
            .map_err(|e| FetchError(e.to_string()))?;
        Ok(body)
    }
}

/// Scheme → handler registry used to materialize holey bags.
#[derive(Clone, Default)]
pub struct Resolvers {
    handlers: BTreeMap<String, Arc<dyn FetchHandler>>,
}

impl std::fmt::Debug for Resolvers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolvers")
            .field("schemes", &self.handlers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Resolvers {
    pub fn new() -> Self {
        Resolvers::default()
    }

    /// `file`, `http` and `https`.
    pub fn with_defaults() -> Self {
        let http: Arc<dyn FetchHandler> = Arc::new(HttpFetcher::default());
        Resolvers::new()
            .register("file", Arc::new(FileFetcher))
            .register("http", http.clone())
            .register("https", http)
    }

    pub fn register(mut self, scheme: &str, handler: Arc<dyn FetchHandler>) -> Self {
        self.handlers.insert(scheme.to_ascii_lowercase(), handler);
        self
    }

    pub fn schemes(&self) -> impl Iterator<Item = &str> {
        self.handlers.keys().map(String::as_str)
    }

    pub fn handler_for(&self, url: &str) -> Result<&Arc<dyn FetchHandler>, BagError> {
        let scheme = scheme_of(url).ok_or_else(|| BagError::NoHandler(String::new()))?;
        self.handlers
            .get(&scheme)
            .ok_or(BagError::NoHandler(scheme))
    }

    pub fn fetch(&self, url: &str) -> Result<Vec<u8>, BagError> {
        self.handler_for(url)?
            .fetch(url)
            .map_err(|e| BagError::FetchFailed {
                url: url.to_string(),
                detail: e.0,
            })
    }
}

/// The lowercase scheme of `url`, if it has a syntactically valid one.
pub(crate) fn scheme_of(url: &str) -> Option<String> {
    let (scheme, _) = url.split_once(':')?;
    let mut chars = scheme.chars();
    let valid = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c));
    valid.then(|| scheme.to_ascii_lowercase())
}

impl Bag {
    /// Fetches every `fetch.txt` entry, verifies it against all manifest
    /// digests and returns the bag with the content in its payload and an
    /// empty fetch list. Nothing is kept from an entry that fails
    /// verification.
    pub fn materialize(&self, resolvers: &Resolvers) -> Result<Bag, BagError> {
        for entry in &self.fetch {
            resolvers.handler_for(&entry.url)?;
        }
        let fetched: Vec<PayloadEntry> = self
            .fetch
            .par_iter()
            .map(|entry| self.fetch_verified(entry, resolvers))
            .collect::<Result<_, _>>()?;
        self.with_fetched(fetched)
    }

    fn fetch_verified(
        &self,
        entry: &FetchEntry,
        resolvers: &Resolvers,
    ) -> Result<PayloadEntry, BagError> {
        let data = resolvers.fetch(&entry.url)?;
        if let Some(expected) = entry.length {
            if expected != data.len() as u64 {
                return Err(BagError::FetchFailed {
                    url: entry.url.clone(),
                    detail: format!("expected {expected} octets, got {}", data.len()),
                });
            }
        }
        for (algorithm, entries) in &self.manifests {
            if let Some(m) = entries.iter().find(|m| m.path == entry.path) {
                let actual = algorithm.digest(&data);
                if actual != m.digest {
                    return Err(BagError::DigestMismatchAfterFetch {
                        path: entry.path.to_string(),
                        algorithm: *algorithm,
                        expected: m.digest.clone(),
                        actual,
                    });
                }
            }
        }
        Ok(PayloadEntry {
            path: entry.path.clone(),
            data,
        })
    }
}

/// Materializes a holey bag directory in place. Fetched files are written
/// only after verification; `fetch.txt` is removed and the tag manifests
/// are rewritten.
pub fn materialize_in_place(dir: &Path, resolvers: &Resolvers) -> Result<Bag, BagError> {
    let before = super::read_bag(dir)?;
    let after = before.materialize(resolvers)?;
    let io = |path: &Path, e: std::io::Error| BagError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    for entry in &before.fetch {
        let file = after
            .payload_file(entry.path.as_str())
            .expect("fetched entry is in payload");
        let dest = dir.join(entry.path.as_str());
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        let partial = dest.with_extension("fetch-partial");
        std::fs::write(&partial, &file.data).map_err(|e| io(&partial, e))?;
        std::fs::rename(&partial, &dest).map_err(|e| io(&dest, e))?;
    }
    let fetch_file = dir.join(super::tagfile::FETCH);
    if fetch_file.exists() {
        std::fs::remove_file(&fetch_file).map_err(|e| io(&fetch_file, e))?;
    }
    let files = after.to_tree()?;
    for algorithm in after.tag_manifests().keys() {
        let name = algorithm.tag_manifest_name();
        let dest = dir.join(&name);
        std::fs::write(&dest, &files[&name]).map_err(|e| io(&dest, e))?;
    }
    Ok(after)
}

/// Serves payload bytes from a directory for `file:` URLs built by
/// [`file_url`]. Convenience for tests and local deposits.
pub fn file_url(path: &Path) -> Option<String> {
    let absolute = std::path::absolute(path).ok()?;
    url::Url::from_file_path(absolute)
        .ok()
        .map(|u| u.to_string())
}
