use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::id::{derive_suffix, normalize_namespace, SuffixSource};
use super::{parse_id, IdError, IdString};
use crate::bag::{Algorithm, Bag, FetchError, FetchHandler, Resolvers};
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::jsonlog::{AppendLog, Durability, LogError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    pub algorithm: Algorithm,
    pub digest: String,
}

impl Checksum {
    pub fn sha256(digest: impl Into<String>) -> Self {
        Checksum {
            algorithm: Algorithm::Sha256,
            digest: digest.into(),
        }
    }

    pub fn of(algorithm: Algorithm, bytes: &[u8]) -> Self {
        Checksum {
            algorithm,
            digest: algorithm.digest(bytes),
        }
    }

    fn normalized(&self) -> Result<Checksum, IdError> {
        let digest = self.digest.to_ascii_lowercase();
        if !self.algorithm.is_well_formed(&digest) {
            return Err(IdError::MalformedDigest(format!(
                "`{}` is not a {} digest",
                self.digest, self.algorithm
            )));
        }
        Ok(Checksum {
            algorithm: self.algorithm,
            digest,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Superseded,
}

/// One version of an identifier record. Field order is the order of keys
/// in the registry log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinidRecord {
    pub id: IdString,
    pub version: u32,
    pub creator: String,
    pub created: Timestamp,
    pub checksum: Checksum,
    pub locations: Vec<String>,
    pub title: Option<String>,
    pub status: Status,
    pub superseded_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintRequest {
    pub creator: String,
    pub checksum: Checksum,
    pub locations: Vec<String>,
    #[serde(default)]
    pub title: Option<String>,
    pub namespace: String,
}

#[derive(Default)]
struct State {
    log: Vec<MinidRecord>,
    /// id → positions of its versions in `log`, oldest first.
    history: HashMap<IdString, Vec<usize>>,
}

impl State {
    fn latest(&self, id: &IdString) -> Option<&MinidRecord> {
        self.history
            .get(id)
            .and_then(|v| v.last())
            .map(|i| &self.log[*i])
    }

    /// Checks that `record` may follow the current head of its id.
    fn admit(&self, record: &MinidRecord) -> Result<(), String> {
        match self.latest(&record.id) {
            None if record.version == 1 => Ok(()),
            None => Err(format!(
                "{} starts at version {}",
                record.id, record.version
            )),
            Some(prev) if record.version != prev.version + 1 => Err(format!(
                "{} jumps from version {} to {}",
                record.id, prev.version, record.version
            )),
            Some(prev) if prev.checksum != record.checksum => {
                Err(format!("{} changes its checksum", record.id))
            }
            Some(_) => Ok(()),
        }
    }

    fn push(&mut self, record: MinidRecord) {
        let index = self.log.len();
        self.history
            .entry(record.id.clone())
            .or_default()
            .push(index);
        self.log.push(record);
    }
}

#[derive(Clone)]
pub struct RegistryOptions {
    pub clock: Arc<dyn Clock>,
    pub suffixes: Arc<SuffixSource>,
    pub durability: Durability,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions {
            clock: Arc::new(SystemClock),
            suffixes: Arc::new(SuffixSource::from_entropy()),
            durability: Durability::Flush,
        }
    }
}

/// The identifier registry. Reads go against the in-memory index; every
/// mutation is serialized through the single log writer.
pub struct Registry {
    state: RwLock<State>,
    writer: Mutex<AppendLog<MinidRecord>>,
    clock: Arc<dyn Clock>,
    suffixes: Arc<SuffixSource>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("versions", &self.version_count())
            .finish()
    }
}

impl Registry {
    pub fn in_memory(options: RegistryOptions) -> Self {
        Registry {
            state: RwLock::new(State::default()),
            writer: Mutex::new(AppendLog::memory()),
            clock: options.clock,
            suffixes: options.suffixes,
        }
    }

    /// Opens the log at `path`, replaying it into the index.
    pub fn open(path: &Path, options: RegistryOptions) -> Result<Self, IdError> {
        let (log, records) =
            AppendLog::<MinidRecord>::open(path, options.durability).map_err(|e| match e {
                LogError::Corrupt { line, detail, .. } => IdError::CorruptLog { line, detail },
                other => IdError::Log(other),
            })?;
        let mut state = State::default();
        for (i, record) in records.into_iter().enumerate() {
            state.admit(&record).map_err(|detail| IdError::CorruptLog {
                line: i + 1,
                detail,
            })?;
            state.push(record);
        }
        Ok(Registry {
            state: RwLock::new(state),
            writer: Mutex::new(log),
            clock: options.clock,
            suffixes: options.suffixes,
        })
    }

    /// Number of record versions in the log.
    pub fn version_count(&self) -> usize {
        self.state.read().unwrap().log.len()
    }

    /// Number of distinct identifiers.
    pub fn id_count(&self) -> usize {
        self.state.read().unwrap().history.len()
    }

    pub fn ids(&self) -> Vec<IdString> {
        let mut ids: Vec<IdString> = self.state.read().unwrap().history.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn append(
        &self,
        writer: &mut AppendLog<MinidRecord>,
        record: MinidRecord,
    ) -> Result<MinidRecord, IdError> {
        writer.append(&record)?;
        self.state.write().unwrap().push(record.clone());
        Ok(record)
    }

    fn validate_request(request: &MintRequest) -> Result<(String, Checksum), IdError> {
        if request.locations.is_empty() || request.locations.iter().any(|l| l.trim().is_empty()) {
            return Err(IdError::EmptyLocations);
        }
        let checksum = request.checksum.normalized()?;
        let namespace = normalize_namespace(&request.namespace)?;
        Ok((namespace, checksum))
    }

    fn first_version(
        &self,
        id: IdString,
        request: &MintRequest,
        checksum: Checksum,
    ) -> MinidRecord {
        MinidRecord {
            id,
            version: 1,
            creator: request.creator.clone(),
            created: self.clock.now(),
            checksum,
            locations: request.locations.clone(),
            title: request.title.clone(),
            status: Status::Active,
            superseded_by: None,
        }
    }

    /// Mints a fresh identifier.
    pub fn mint(&self, request: &MintRequest) -> Result<MinidRecord, IdError> {
        let (namespace, checksum) = Registry::validate_request(request)?;
        let mut writer = self.writer.lock().unwrap();
        let id = loop {
            let id = IdString::new(&namespace, &self.suffixes.next_suffix())?;
            if self.state.read().unwrap().latest(&id).is_none() {
                break id;
            }
        };
        let record = self.first_version(id, request, checksum);
        self.append(&mut writer, record)
    }

    /// Mints the identifier named by `key`, or returns the existing record
    /// if that key was minted before with the same checksum. Replaying an
    /// effect with the same key never creates a second identifier.
    pub fn mint_idempotent(
        &self,
        request: &MintRequest,
        key: &str,
    ) -> Result<MinidRecord, IdError> {
        let (namespace, checksum) = Registry::validate_request(request)?;
        let id = IdString::new(&namespace, &derive_suffix(key))?;
        let mut writer = self.writer.lock().unwrap();
        if let Some(existing) = self.state.read().unwrap().latest(&id) {
            if existing.checksum == checksum {
                return Ok(existing.clone());
            }
            return Err(IdError::KeyConflict(id.to_string()));
        }
        let record = self.first_version(id, request, checksum);
        self.append(&mut writer, record)
    }

    pub fn resolve(&self, id: &IdString) -> Result<MinidRecord, IdError> {
        self.state
            .read()
            .unwrap()
            .latest(id)
            .cloned()
            .ok_or_else(|| IdError::NotFound(id.to_string()))
    }

    pub fn resolve_str(&self, text: &str) -> Result<MinidRecord, IdError> {
        self.resolve(&parse_id(text)?)
    }

    /// Every version of `id`, oldest first.
    pub fn history(&self, id: &IdString) -> Result<Vec<MinidRecord>, IdError> {
        let state = self.state.read().unwrap();
        let positions = state
            .history
            .get(id)
            .ok_or_else(|| IdError::NotFound(id.to_string()))?;
        Ok(positions.iter().map(|i| state.log[*i].clone()).collect())
    }

    fn next_version(
        &self,
        id: &IdString,
        change: impl FnOnce(&mut MinidRecord) -> Result<(), IdError>,
    ) -> Result<MinidRecord, IdError> {
        let mut writer = self.writer.lock().unwrap();
        let mut record = self.resolve(id)?;
        if record.status == Status::Superseded {
            return Err(IdError::SupersededImmutable(id.to_string()));
        }
        change(&mut record)?;
        record.version += 1;
        self.append(&mut writer, record)
    }

    pub fn update_locations(
        &self,
        id: &IdString,
        locations: Vec<String>,
    ) -> Result<MinidRecord, IdError> {
        if locations.is_empty() || locations.iter().any(|l| l.trim().is_empty()) {
            return Err(IdError::EmptyLocations);
        }
        self.next_version(id, |r| {
            r.locations = locations;
            Ok(())
        })
    }

    pub fn update_title(
        &self,
        id: &IdString,
        title: Option<String>,
    ) -> Result<MinidRecord, IdError> {
        self.next_version(id, |r| {
            r.title = title;
            Ok(())
        })
    }

    /// Marks the record superseded by a DOI. It keeps resolving.
    pub fn upgrade(&self, id: &IdString, doi: &str) -> Result<MinidRecord, IdError> {
        let doi = normalize_doi(doi)?;
        self.next_version(id, |r| {
            r.status = Status::Superseded;
            r.superseded_by = Some(doi);
            Ok(())
        })
    }

    /// Mints an identifier whose checksum is the SHA-256 of the bag's
    /// deterministic archive.
    pub fn bind_bag(
        &self,
        bag: &Bag,
        creator: &str,
        namespace: &str,
        locations: Vec<String>,
        title: Option<String>,
    ) -> Result<MinidRecord, IdError> {
        let request = MintRequest {
            creator: creator.to_string(),
            checksum: Checksum::sha256(bag.archive_digest()?),
            locations,
            title,
            namespace: namespace.to_string(),
        };
        self.mint(&request)
    }
}

/// DOI grammar `10.<registrant>/<suffix>`, registrant being dot-separated
/// digits. A leading `doi:` is accepted and dropped.
pub fn normalize_doi(text: &str) -> Result<String, IdError> {
    let bad = || IdError::MalformedDoi(text.to_string());
    let doi = text.trim();
    let doi = doi
        .strip_prefix("doi:")
        .or_else(|| doi.strip_prefix("DOI:"))
        .unwrap_or(doi);
    let (prefix, suffix) = doi.split_once('/').ok_or_else(bad)?;
    let registrant = prefix.strip_prefix("10.").ok_or_else(bad)?;
    let registrant_ok = !registrant.is_empty()
        && registrant
            .split('.')
            .all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit()));
    let suffix_ok =
        !suffix.is_empty() && !suffix.chars().any(|c| c.is_whitespace() || c.is_control());
    if registrant_ok && suffix_ok {
        Ok(doi.to_string())
    } else {
        Err(bad())
    }
}

pub fn is_doi(text: &str) -> bool {
    normalize_doi(text).is_ok()
}

/// Fetch handler for `minid:` URLs: resolves the identifier and returns
/// the content of its first location that is reachable and whose bytes
/// match the recorded checksum.
pub struct MinidFetcher {
    registry: Arc<Registry>,
    locations: Resolvers,
}

impl MinidFetcher {
    pub fn new(registry: Arc<Registry>, locations: Resolvers) -> Self {
        MinidFetcher {
            registry,
            locations,
        }
    }
}

impl FetchHandler for MinidFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let text = url
            .split_once(':')
            .filter(|(scheme, _)| scheme.eq_ignore_ascii_case("minid"))
            .map(|(_, rest)| rest)
            .ok_or_else(|| FetchError(format!("{url} is not a minid URL")))?;
        let record = self
            .registry
            .resolve_str(text)
            .map_err(|e| FetchError(e.to_string()))?;
        let mut failures = Vec::new();
        for location in &record.locations {
            match self.locations.fetch(location) {
                Ok(bytes) if record.checksum.algorithm.digest(&bytes) == record.checksum.digest => {
                    return Ok(bytes)
                }
                Ok(_) => failures.push(format!("{location}: checksum differs")),
                Err(e) => failures.push(format!("{location}: {e}")),
            }
        }
        Err(FetchError(format!(
            "no live location for {}: {}",
            record.id,
            failures.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bag::{BagBuilder, BagPath};
    use crate::clock::ManualClock;

    fn options(seed: u64) -> RegistryOptions {
        RegistryOptions {
            clock: Arc::new(ManualClock::default()),
            suffixes: Arc::new(SuffixSource::seeded(seed)),
            durability: Durability::Flush,
        }
    }

    fn request(locations: &[&str]) -> MintRequest {
        MintRequest {
            creator: "ada".into(),
            checksum: Checksum::of(Algorithm::Sha256, b"data"),
            locations: locations.iter().map(|s| s.to_string()).collect(),
            title: Some("sample".into()),
            namespace: "synapse".into(),
        }
    }

    #[test]
    fn mint_then_resolve() {
        let reg = Registry::in_memory(options(1));
        let rec = reg
            .mint(&request(&["https://a", "https://b", "https://c"]))
            .unwrap();
        assert_eq!(rec.id.namespace(), "SYNAPSE");
        assert_eq!(rec.version, 1);
        let back = reg.resolve(&rec.id).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.locations, vec!["https://a", "https://b", "https://c"]);
    }

    #[test]
    fn mint_preconditions() {
        let reg = Registry::in_memory(options(1));
        assert!(matches!(
            reg.mint(&request(&[])),
            Err(IdError::EmptyLocations)
        ));
        let mut bad = request(&["x"]);
        bad.checksum.digest = "abc".into();
        assert!(matches!(reg.mint(&bad), Err(IdError::MalformedDigest(_))));
    }

    #[test]
    fn unknown_id_is_not_found() {
        let reg = Registry::in_memory(options(1));
        let err = reg.resolve_str("SYNAPSE:1-1ACR").unwrap_err();
        assert_eq!(err.code(), "NotFound");
    }

    #[test]
    fn updates_append_versions() {
        let reg = Registry::in_memory(options(2));
        let rec = reg.mint(&request(&["https://a"])).unwrap();
        reg.update_locations(&rec.id, vec!["https://b".into()])
            .unwrap();
        let latest = reg
            .update_locations(&rec.id, vec!["https://c".into()])
            .unwrap();
        assert_eq!(latest.version, 3);
        assert_eq!(latest.checksum, rec.checksum);
        assert_eq!(reg.history(&rec.id).unwrap().len(), 3);
        assert_eq!(reg.resolve(&rec.id).unwrap().locations, vec!["https://c"]);
        assert!(matches!(
            reg.update_locations(&rec.id, vec![]),
            Err(IdError::EmptyLocations)
        ));
    }

    #[test]
    fn upgrade_supersedes_and_freezes() {
        let reg = Registry::in_memory(options(3));
        let rec = reg.mint(&request(&["https://a"])).unwrap();
        assert!(matches!(
            reg.upgrade(&rec.id, "doi.org/xyz"),
            Err(IdError::MalformedDoi(_))
        ));
        let up = reg.upgrade(&rec.id, "10.25551/1/1-1F6W").unwrap();
        assert_eq!(up.status, Status::Superseded);
        assert_eq!(up.superseded_by.as_deref(), Some("10.25551/1/1-1F6W"));
        let resolved = reg.resolve(&rec.id).unwrap();
        assert_eq!(resolved.status, Status::Superseded);
        assert!(matches!(
            reg.update_locations(&rec.id, vec!["https://z".into()]),
            Err(IdError::SupersededImmutable(_))
        ));
    }

    #[test]
    fn doi_grammar() {
        for good in [
            "10.25551/1/1-1F6W",
            "doi:10.25551/1/1-1F6W",
            "10.1000.10/abc",
        ] {
            assert!(is_doi(good), "{good}");
        }
        for bad in [
            "doi.org/xyz",
            "10./x",
            "11.1/x",
            "10.1/",
            "10.1/a b",
            "10.a/x",
        ] {
            assert!(!is_doi(bad), "{bad}");
        }
        assert_eq!(
            normalize_doi("doi:10.25551/1/1-1F6W").unwrap(),
            "10.25551/1/1-1F6W"
        );
    }

    #[test]
    fn log_lines_have_fixed_key_order() {
        let reg = Registry::in_memory(options(4));
        let rec = reg.mint(&request(&["https://a"])).unwrap();
        let line = serde_json::to_string(&rec).unwrap();
        let keys = [
            "id",
            "version",
            "creator",
            "created",
            "checksum",
            "locations",
            "title",
            "status",
            "superseded_by",
        ];
        let positions: Vec<usize> = keys
            .iter()
            .map(|k| line.find(&format!("\"{k}\":")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(line.contains("\"created\":\"2023-01-01T00:00:00Z\""));
        assert!(line.contains("\"checksum\":{\"algorithm\":\"sha256\","));
    }

    #[test]
    fn replay_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.log");
        let (a, b) = {
            let reg = Registry::open(&path, options(5)).unwrap();
            let a = reg.mint(&request(&["https://a"])).unwrap();
            let b = reg.mint(&request(&["https://b"])).unwrap();
            reg.upgrade(&b.id, "10.1/x").unwrap();
            (a, b)
        };
        let reg = Registry::open(&path, options(6)).unwrap();
        assert_eq!(reg.resolve(&a.id).unwrap(), a);
        assert_eq!(reg.resolve(&b.id).unwrap().status, Status::Superseded);
        assert_eq!(reg.version_count(), 3);
    }

    #[test]
    fn replay_rejects_rewritten_history() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.log");
        let reg = Registry::open(&path, options(7)).unwrap();
        let rec = reg.mint(&request(&["https://a"])).unwrap();
        drop(reg);
        let mut forged = rec.clone();
        forged.version = 2;
        forged.checksum = Checksum::of(Algorithm::Sha256, b"other");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str(&serde_json::to_string(&forged).unwrap());
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            Registry::open(&path, options(7)),
            Err(IdError::CorruptLog { line: 2, .. })
        ));
    }

    #[test]
    fn idempotent_mint_returns_the_same_record() {
        let reg = Registry::in_memory(options(8));
        let first = reg
            .mint_idempotent(&request(&["https://a"]), "flow/step/abc")
            .unwrap();
        let again = reg
            .mint_idempotent(&request(&["https://a"]), "flow/step/abc")
            .unwrap();
        assert_eq!(first, again);
        assert_eq!(reg.id_count(), 1);
        let mut other = request(&["https://a"]);
        other.checksum = Checksum::of(Algorithm::Sha256, b"different");
        assert!(matches!(
            reg.mint_idempotent(&other, "flow/step/abc"),
            Err(IdError::KeyConflict(_))
        ));
    }

    fn small_bag(body: &[u8]) -> Bag {
        let mut b = BagBuilder::new();
        b.add_file(BagPath::in_payload("f.txt").unwrap(), body.to_vec())
            .unwrap();
        b.build().unwrap()
    }

    #[test]
    fn bound_bags_detect_modification() {
        let reg = Registry::in_memory(options(9));
        let bag = small_bag(b"payload");
        let one = reg
            .bind_bag(&bag, "ada", "DATA", vec!["https://x".into()], None)
            .unwrap();
        let two = reg
            .bind_bag(&bag, "ada", "DATA", vec!["https://x".into()], None)
            .unwrap();
        assert_ne!(one.id, two.id);
        assert_eq!(one.checksum, two.checksum);
        let altered = small_bag(b"paYload");
        assert_ne!(altered.archive_digest().unwrap(), one.checksum.digest);
    }

    #[test]
    fn minid_fetcher_uses_first_live_location() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.bin");
        let wrong = dir.path().join("wrong.bin");
        std::fs::write(&good, b"data").unwrap();
        std::fs::write(&wrong, b"not the data").unwrap();
        let reg = Arc::new(Registry::in_memory(options(10)));
        let rec = reg
            .mint(&request(&[
                "file:///definitely/missing",
                &crate::bag::file_url(&wrong).unwrap(),
                &crate::bag::file_url(&good).unwrap(),
            ]))
            .unwrap();
        let fetcher = MinidFetcher::new(reg.clone(), Resolvers::with_defaults());
        assert_eq!(
            fetcher.fetch(&format!("minid:{}", rec.id)).unwrap(),
            b"data"
        );
        assert!(fetcher.fetch("minid:SYNAPSE:1-1ACR").is_err());
    }
}
