//! BagIt packaging (RFC 8493) with the BDBag conventions: checksum
//! manifests, tag manifests, `fetch.txt` references for holey bags and a
//! `metadata/` tag directory.
//!
//! A [`Bag`] is an immutable value holding every payload byte in memory. It
//! is produced by [`create_bag`], [`read_bag`], [`BagBuilder`],
//! [`Bag::make_holey`] or [`Bag::materialize`], and written out with
//! [`write_bag`]. Validation of a bag on disk goes through [`check`], which
//! reports problems instead of failing.

mod check;
mod checksum;
mod fetch;
mod metadata;
mod path;
mod tagfile;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{
    check, check_archive_bytes, BagValidationReport, CheckLevel, Problem, ProblemCode, Severity,
};
pub use checksum::Algorithm;
pub use fetch::{
    file_url, materialize_in_place, FetchError, FetchHandler, FileFetcher, HttpFetcher, Resolvers,
};
pub use metadata::{FieldDescriptor, Mechanism, MetadataBlock, TablePackage, TableResource};
pub use path::BagPath;
pub use tree::ArchiveFormat;

use tree::FileTree;

pub const BAGIT_VERSION: &str = "1.0";
pub const PAYLOAD_OXUM: &str = "Payload-Oxum";
pub const PROFILE_LABEL: &str = "BagIt-Profile-Identifier";
pub const BDBAG_PROFILE: &str =
    "https://raw.githubusercontent.com/fair-research/bdbag/master/profiles/bdbag-profile.json";

#[derive(Debug, Error)]
pub enum BagError {
    #[error("cannot read source {path}: {source}")]
    UnreadableSource {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checksum algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("destination {0} already exists")]
    DestinationExists(PathBuf),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no bag declaration (bagit.txt) found")]
    NotABag,
    #[error("malformed line {line} in {file}: {detail}")]
    MalformedManifestLine {
        file: String,
        line: usize,
        detail: String,
    },
    #[error("malformed line {line} in fetch.txt: {detail}")]
    MalformedFetchLine { line: usize, detail: String },
    #[error("malformed tag file {path}: {detail}")]
    MalformedTagFile { path: String, detail: String },
    #[error("unsupported BagIt version `{0}`")]
    UnsupportedVersion(String),
    #[error("invalid bag path `{path}`: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("invalid bag-info label `{label}`: {reason}")]
    InvalidInfo { label: String, reason: String },
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("no well-formed {algorithm} digest supplied for {path}")]
    InvalidDigest { path: String, algorithm: Algorithm },
    #[error("path {0} appears twice")]
    DuplicatePath(String),
    #[error("no URL for externalized path {0}")]
    MissingUrl(String),
    #[error("no fetch handler for scheme `{0}`")]
    NoHandler(String),
    #[error("fetching {url} failed: {detail}")]
    FetchFailed { url: String, detail: String },
    #[error("content fetched for {path} does not match its {algorithm} manifest digest")]
    DigestMismatchAfterFetch {
        path: String,
        algorithm: Algorithm,
        expected: String,
        actual: String,
    },
    #[error("archive error: {0}")]
    Archive(String),
}

impl BagError {
    /// Stable machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            BagError::UnreadableSource { .. } => "UnreadableSource",
            BagError::UnsupportedAlgorithm(_) => "UnsupportedAlgorithm",
            BagError::DestinationExists(_) => "DestinationExists",
            BagError::Io { .. } => "IoFailure",
            BagError::NotABag => "NotABag",
            BagError::MalformedManifestLine { .. } => "MalformedManifestLine",
            BagError::MalformedFetchLine { .. } => "MalformedFetchLine",
            BagError::MalformedTagFile { .. } => "MalformedTagFile",
            BagError::UnsupportedVersion(_) => "UnsupportedVersion",
            BagError::InvalidPath { .. } => "InvalidPath",
            BagError::InvalidInfo { .. } => "InvalidInfo",
            BagError::InvalidMetadata(_) => "InvalidMetadata",
            BagError::InvalidDigest { .. } => "InvalidDigest",
            BagError::DuplicatePath(_) => "DuplicatePath",
            BagError::MissingUrl(_) => "MissingUrl",
            BagError::NoHandler(_) => "NoHandler",
            BagError::FetchFailed { .. } => "FetchFailed",
            BagError::DigestMismatchAfterFetch { .. } => "DigestMismatchAfterFetch",
            BagError::Archive(_) => "ArchiveError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub algorithm: Algorithm,
    pub digest: String,
    pub path: BagPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchEntry {
    pub url: String,
    /// `None` is written as `-`.
    pub length: Option<u64>,
    pub path: BagPath,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadEntry {
    pub path: BagPath,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    version: String,
    payload: Vec<PayloadEntry>,
    manifests: BTreeMap<Algorithm, Vec<ManifestEntry>>,
    tag_manifests: BTreeMap<Algorithm, Vec<ManifestEntry>>,
    bag_info: Vec<(String, String)>,
    fetch: Vec<FetchEntry>,
    metadata: Vec<MetadataBlock>,
    other_tags: BTreeMap<String, Vec<u8>>,
}

/// Where [`write_bag`] puts a bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    Directory(PathBuf),
    Archive(PathBuf, ArchiveFormat),
}

impl Destination {
    /// `*.zip` and `*.tar` become archives, anything else a directory.
    pub fn infer(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        match ArchiveFormat::from_path(&path) {
            Some(format) => Destination::Archive(path, format),
            None => Destination::Directory(path),
        }
    }
}

/// Remote content listed in `fetch.txt`, with the digests the manifests
/// should carry for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFile {
    pub url: String,
    pub length: Option<u64>,
    pub digests: BTreeMap<Algorithm, String>,
}

/// Assembles a bag from in-memory content.
#[derive(Debug, Clone)]
pub struct BagBuilder {
    algorithms: BTreeSet<Algorithm>,
    info: Vec<(String, String)>,
    metadata: BTreeMap<Mechanism, MetadataBlock>,
    files: BTreeMap<BagPath, Vec<u8>>,
    remote: BTreeMap<BagPath, RemoteFile>,
}

impl Default for BagBuilder {
    fn default() -> Self {
        BagBuilder::new()
    }
}

impl BagBuilder {
    /// Starts with SHA-256 selected; it is always produced.
    pub fn new() -> Self {
        BagBuilder {
            algorithms: BTreeSet::from([Algorithm::Sha256]),
            info: Vec::new(),
            metadata: BTreeMap::new(),
            files: BTreeMap::new(),
            remote: BTreeMap::new(),
        }
    }

    pub fn algorithm(mut self, algorithm: Algorithm) -> Result<Self, BagError> {
        if !algorithm.can_produce() {
            return Err(BagError::UnsupportedAlgorithm(algorithm.name().into()));
        }
        self.algorithms.insert(algorithm);
        Ok(self)
    }

    pub fn info(mut self, label: impl Into<String>, value: impl Into<String>) -> Self {
        self.info.push((label.into(), value.into()));
        self
    }

    /// Replaces any earlier block with the same mechanism.
    pub fn metadata(mut self, block: MetadataBlock) -> Self {
        self.metadata.insert(block.mechanism(), block);
        self
    }

    pub fn add_file(&mut self, path: BagPath, data: Vec<u8>) -> Result<&mut Self, BagError> {
        if !path.is_payload() {
            return Err(BagError::InvalidPath {
                path: path.to_string(),
                reason: "payload paths must be under data/".into(),
            });
        }
        if self.remote.contains_key(&path) || self.files.contains_key(&path) {
            return Err(BagError::DuplicatePath(path.to_string()));
        }
        self.files.insert(path, data);
        Ok(self)
    }

    pub fn add_remote(&mut self, path: BagPath, remote: RemoteFile) -> Result<&mut Self, BagError> {
        if !path.is_payload() {
            return Err(BagError::InvalidPath {
                path: path.to_string(),
                reason: "payload paths must be under data/".into(),
            });
        }
        if self.remote.contains_key(&path) || self.files.contains_key(&path) {
            return Err(BagError::DuplicatePath(path.to_string()));
        }
        self.remote.insert(path, remote);
        Ok(self)
    }

    pub fn build(self) -> Result<Bag, BagError> {
        for (label, value) in &self.info {
            tagfile::check_label(label, value)?;
        }
        for block in self.metadata.values() {
            block.validate()?;
        }
        for (path, remote) in &self.remote {
            for algorithm in &self.algorithms {
                let ok = remote
                    .digests
                    .get(algorithm)
                    .is_some_and(|d| algorithm.is_well_formed(d));
                if !ok {
                    return Err(BagError::InvalidDigest {
                        path: path.to_string(),
                        algorithm: *algorithm,
                    });
                }
            }
        }

        let algorithms: Vec<Algorithm> = self.algorithms.iter().copied().collect();
        let digests: Vec<(BagPath, Vec<String>)> = self
            .files
            .par_iter()
            .map(|(path, data)| {
                (
                    path.clone(),
                    algorithms.iter().map(|a| a.digest(data)).collect(),
                )
            })
            .collect();

        let mut manifests: BTreeMap<Algorithm, Vec<ManifestEntry>> =
            algorithms.iter().map(|a| (*a, Vec::new())).collect();
        for (path, per_alg) in digests {
            for (algorithm, digest) in algorithms.iter().zip(per_alg) {
                manifests.get_mut(algorithm).unwrap().push(ManifestEntry {
                    algorithm: *algorithm,
                    digest,
                    path: path.clone(),
                });
            }
        }
        for (path, remote) in &self.remote {
            for algorithm in &algorithms {
                manifests.get_mut(algorithm).unwrap().push(ManifestEntry {
                    algorithm: *algorithm,
                    digest: remote.digests[algorithm].clone(),
                    path: path.clone(),
                });
            }
        }
        for entries in manifests.values_mut() {
            sort_by_path(entries);
        }

        let fetch: Vec<FetchEntry> = self
            .remote
            .iter()
            .map(|(path, r)| FetchEntry {
                url: r.url.clone(),
                length: r.length,
                path: path.clone(),
            })
            .collect();

        let mut bag_info: Vec<(String, String)> = self
            .info
            .into_iter()
            .filter(|(l, _)| !l.eq_ignore_ascii_case(PAYLOAD_OXUM))
            .collect();
        if !bag_info
            .iter()
            .any(|(l, _)| l.eq_ignore_ascii_case(PROFILE_LABEL))
        {
            bag_info.push((PROFILE_LABEL.into(), BDBAG_PROFILE.into()));
        }
        let remote_octets: Option<u64> = self.remote.values().map(|r| r.length).sum();
        if let Some(remote_octets) = remote_octets {
            let octets: u64 =
                self.files.values().map(|d| d.len() as u64).sum::<u64>() + remote_octets;
            let count = self.files.len() + self.remote.len();
            bag_info.push((PAYLOAD_OXUM.into(), format!("{octets}.{count}")));
        }

        let payload = self
            .files
            .into_iter()
            .map(|(path, data)| PayloadEntry { path, data })
            .collect();

        let mut bag = Bag {
            version: BAGIT_VERSION.into(),
            payload,
            manifests,
            tag_manifests: BTreeMap::new(),
            bag_info,
            fetch,
            metadata: self.metadata.into_values().collect(),
            other_tags: BTreeMap::new(),
        };
        bag.seal_tags()?;
        Ok(bag)
    }
}

fn sort_by_path(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| a.path.as_str().as_bytes().cmp(b.path.as_str().as_bytes()));
}

/// Packages every file under `source_dir` as payload.
pub fn create_bag(
    source_dir: &Path,
    algorithms: &[Algorithm],
    info: &[(String, String)],
    metadata: Option<MetadataBlock>,
) -> Result<Bag, BagError> {
    let unreadable = |source: std::io::Error| BagError::UnreadableSource {
        path: source_dir.to_path_buf(),
        source,
    };
    let meta = std::fs::metadata(source_dir).map_err(unreadable)?;
    if !meta.is_dir() {
        return Err(unreadable(std::io::Error::new(
            std::io::ErrorKind::NotADirectory,
            "source is not a directory",
        )));
    }
    let files = tree::load_dir(source_dir).map_err(|e| match e {
        BagError::Io { path, source } => BagError::UnreadableSource { path, source },
        other => other,
    })?;

    let mut builder = BagBuilder::new();
    for algorithm in algorithms {
        builder = builder.algorithm(*algorithm)?;
    }
    for (label, value) in info {
        builder = builder.info(label.clone(), value.clone());
    }
    if let Some(block) = metadata {
        builder = builder.metadata(block);
    }
    for (rel, data) in files {
        builder.add_file(BagPath::in_payload(&rel)?, data)?;
    }
    builder.build()
}

/// Parses a bag from a directory, `.zip` or `.tar`.
pub fn read_bag(source: &Path) -> Result<Bag, BagError> {
    Bag::from_tree(tree::load(source)?)
}

/// Parses a zip or tar archive held in memory.
pub fn read_bag_bytes(archive: &[u8]) -> Result<Bag, BagError> {
    Bag::from_tree(tree::load_archive(archive)?)
}

/// Writes `bag` to `dest`. Returns the path written.
pub fn write_bag(bag: &Bag, dest: &Destination, deterministic: bool) -> Result<PathBuf, BagError> {
    let files = bag.to_tree()?;
    match dest {
        Destination::Directory(dir) => {
            tree::write_dir(&files, dir)?;
            Ok(dir.clone())
        }
        Destination::Archive(path, format) => {
            tree::write_archive_file(&files, path, *format, deterministic)
        }
    }
}

impl Bag {
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn payload(&self) -> &[PayloadEntry] {
        &self.payload
    }

    pub fn payload_file(&self, path: &str) -> Option<&PayloadEntry> {
        self.payload.iter().find(|p| p.path.as_str() == path)
    }

    pub fn manifests(&self) -> &BTreeMap<Algorithm, Vec<ManifestEntry>> {
        &self.manifests
    }

    pub fn tag_manifests(&self) -> &BTreeMap<Algorithm, Vec<ManifestEntry>> {
        &self.tag_manifests
    }

    pub fn bag_info(&self) -> &[(String, String)] {
        &self.bag_info
    }

    /// First value of a bag-info label, matched case-insensitively.
    pub fn info_value(&self, label: &str) -> Option<&str> {
        self.bag_info
            .iter()
            .find(|(l, _)| l.eq_ignore_ascii_case(label))
            .map(|(_, v)| v.as_str())
    }

    pub fn fetch(&self) -> &[FetchEntry] {
        &self.fetch
    }

    pub fn is_holey(&self) -> bool {
        !self.fetch.is_empty()
    }

    pub fn metadata(&self) -> &[MetadataBlock] {
        &self.metadata
    }

    pub fn metadata_block(&self, mechanism: Mechanism) -> Option<&MetadataBlock> {
        self.metadata.iter().find(|b| b.mechanism() == mechanism)
    }

    /// Tag files this library does not interpret, kept byte for byte.
    pub fn other_tags(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.other_tags
    }

    /// Every manifest-listed payload path, whether present or fetched.
    pub fn manifest_paths(&self) -> BTreeSet<&BagPath> {
        self.manifests.values().flatten().map(|e| &e.path).collect()
    }

    pub fn digest_of(&self, algorithm: Algorithm, path: &BagPath) -> Option<&str> {
        self.manifests
            .get(&algorithm)?
            .iter()
            .find(|e| &e.path == path)
            .map(|e| e.digest.as_str())
    }

    /// `octets.count` over present payload plus fetch entries; `None` when a
    /// fetch entry has unknown length.
    pub fn computed_oxum(&self) -> Option<String> {
        let fetched: Option<u64> = self.fetch.iter().map(|f| f.length).sum();
        let octets = self
            .payload
            .iter()
            .map(|p| p.data.len() as u64)
            .sum::<u64>()
            + fetched?;
        Some(format!(
            "{octets}.{}",
            self.payload.len() + self.fetch.len()
        ))
    }

    fn tag_algorithms(&self) -> Vec<Algorithm> {
        self.manifests
            .keys()
            .copied()
            .filter(|a| a.can_produce())
            .collect()
    }

    /// All tag files except the tag manifests themselves.
    fn tag_files(&self) -> Result<FileTree, BagError> {
        let mut files = FileTree::new();
        files.insert(
            tagfile::DECLARATION.into(),
            tagfile::write_declaration(&self.version),
        );
        if !self.bag_info.is_empty() {
            files.insert(
                tagfile::BAG_INFO.into(),
                tagfile::write_labels(&self.bag_info),
            );
        }
        for (algorithm, entries) in &self.manifests {
            files.insert(algorithm.manifest_name(), tagfile::write_manifest(entries));
        }
        if !self.fetch.is_empty() {
            files.insert(tagfile::FETCH.into(), tagfile::write_fetch(&self.fetch));
        }
        for block in &self.metadata {
            files.extend(block.to_files()?);
        }
        for (path, bytes) in &self.other_tags {
            files.insert(path.clone(), bytes.clone());
        }
        Ok(files)
    }

    /// Recomputes the tag manifests from the current tag files.
    fn seal_tags(&mut self) -> Result<(), BagError> {
        let files = self.tag_files()?;
        let mut tag_manifests = BTreeMap::new();
        for algorithm in self.tag_algorithms() {
            let mut entries: Vec<ManifestEntry> = files
                .iter()
                .map(|(path, bytes)| {
                    Ok(ManifestEntry {
                        algorithm,
                        digest: algorithm.digest(bytes),
                        path: BagPath::new(path.clone())?,
                    })
                })
                .collect::<Result<_, BagError>>()?;
            sort_by_path(&mut entries);
            tag_manifests.insert(algorithm, entries);
        }
        self.tag_manifests = tag_manifests;
        Ok(())
    }

    pub(crate) fn to_tree(&self) -> Result<FileTree, BagError> {
        let mut files = self.tag_files()?;
        for (algorithm, entries) in &self.tag_manifests {
            files.insert(
                algorithm.tag_manifest_name(),
                tagfile::write_manifest(entries),
            );
        }
        for entry in &self.payload {
            files.insert(entry.path.to_string(), entry.data.clone());
        }
        Ok(files)
    }

    pub(crate) fn from_tree(mut files: FileTree) -> Result<Bag, BagError> {
        let declaration = files
            .remove(tagfile::DECLARATION)
            .ok_or(BagError::NotABag)?;
        let version = tagfile::parse_declaration(&declaration)?;

        let mut payload = Vec::new();
        let mut tags = FileTree::new();
        for (name, data) in files {
            let path = BagPath::new(name.clone())?;
            if path.is_payload() {
                payload.push(PayloadEntry { path, data });
            } else {
                tags.insert(name, data);
            }
        }

        let bag_info = match tags.remove(tagfile::BAG_INFO) {
            Some(bytes) => tagfile::parse_labels(tagfile::BAG_INFO, &bytes)?,
            None => Vec::new(),
        };
        let manifests = take_manifests(&mut tags, "manifest-")?;
        let tag_manifests = take_manifests(&mut tags, "tagmanifest-")?;
        let fetch = match tags.remove(tagfile::FETCH) {
            Some(bytes) => tagfile::parse_fetch(&bytes)?,
            None => Vec::new(),
        };
        let mut metadata = MetadataBlock::take_from(&mut tags)?;
        metadata.sort_by_key(|b| b.mechanism());

        Ok(Bag {
            version,
            payload,
            manifests,
            tag_manifests,
            bag_info,
            fetch,
            metadata,
            other_tags: tags,
        })
    }

    /// The bag as archive bytes with members under `root/`.
    pub fn to_archive(
        &self,
        root: &str,
        format: ArchiveFormat,
        deterministic: bool,
    ) -> Result<Vec<u8>, BagError> {
        tree::to_archive(&self.to_tree()?, root, format, deterministic)
    }

    /// SHA-256 of the deterministic tar form with root `bag`. Equal bags
    /// have equal archive digests; any payload or tag change alters it.
    pub fn archive_digest(&self) -> Result<String, BagError> {
        Ok(Algorithm::Sha256.digest(&self.to_archive("bag", ArchiveFormat::Tar, true)?))
    }

    /// Moves the selected payload files into `fetch.txt`, leaving the
    /// payload manifests untouched so the content stays verifiable.
    pub fn make_holey(
        &self,
        externalize: impl Fn(&BagPath) -> bool,
        url_for: impl Fn(&BagPath) -> Option<String>,
    ) -> Result<Bag, BagError> {
        let mut kept = Vec::new();
        let mut fetch = self.fetch.clone();
        for entry in &self.payload {
            if externalize(&entry.path) {
                let url = url_for(&entry.path)
                    .ok_or_else(|| BagError::MissingUrl(entry.path.to_string()))?;
                fetch.push(FetchEntry {
                    url,
                    length: Some(entry.data.len() as u64),
                    path: entry.path.clone(),
                });
            } else {
                kept.push(entry.clone());
            }
        }
        if kept.len() == self.payload.len() {
            return Ok(self.clone());
        }
        fetch.sort_by(|a, b| a.path.as_str().as_bytes().cmp(b.path.as_str().as_bytes()));
        let mut bag = Bag {
            payload: kept,
            fetch,
            ..self.clone()
        };
        bag.seal_tags()?;
        Ok(bag)
    }

    fn with_fetched(&self, fetched: Vec<PayloadEntry>) -> Result<Bag, BagError> {
        let mut payload = self.payload.clone();
        payload.extend(fetched);
        payload.sort_by(|a, b| a.path.as_str().as_bytes().cmp(b.path.as_str().as_bytes()));
        let mut bag = Bag {
            payload,
            fetch: Vec::new(),
            ..self.clone()
        };
        bag.seal_tags()?;
        Ok(bag)
    }
}

fn take_manifests(
    tags: &mut FileTree,
    prefix: &str,
) -> Result<BTreeMap<Algorithm, Vec<ManifestEntry>>, BagError> {
    let names: Vec<String> = tags
        .keys()
        .filter(|k| k.starts_with(prefix) && k.ends_with(".txt") && !k.contains('/'))
        .cloned()
        .collect();
    let mut manifests = BTreeMap::new();
    for name in names {
        let alg_name = &name[prefix.len()..name.len() - 4];
        // Manifests for algorithms we do not know stay as opaque tag files.
        let Ok(algorithm) = alg_name.parse::<Algorithm>() else {
            continue;
        };
        let bytes = tags.remove(&name).unwrap();
        let mut entries = tagfile::parse_manifest(&name, algorithm, &bytes)?;
        sort_by_path(&mut entries);
        manifests.insert(algorithm, entries);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

    #[test]
    fn empty_directory_gives_empty_valid_bag() {
        let src = tempfile::tempdir().unwrap();
        let bag = create_bag(src.path(), &[Algorithm::Sha256], &[], None).unwrap();
        assert!(bag.payload().is_empty());
        assert_eq!(bag.info_value(PAYLOAD_OXUM), Some("0.0"));
        assert_eq!(bag.manifests()[&Algorithm::Sha256], vec![]);
    }

    #[test]
    fn zero_byte_file_digest() {
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("empty.dat"), b"").unwrap();
        let bag = create_bag(src.path(), &[Algorithm::Sha256], &[], None).unwrap();
        let entry = &bag.manifests()[&Algorithm::Sha256][0];
        assert_eq!(entry.path.as_str(), "data/empty.dat");
        assert_eq!(entry.digest, EMPTY_SHA256);
    }

    #[test]
    fn oxum_counts_octets_and_files() {
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("a"), b"1234").unwrap();
        std::fs::create_dir(src.path().join("sub")).unwrap();
        std::fs::write(src.path().join("sub/b"), b"123").unwrap();
        std::fs::write(src.path().join("sub/c"), b"abc").unwrap();
        let bag = create_bag(
            src.path(),
            &[Algorithm::Sha256, Algorithm::Sha512],
            &[],
            None,
        )
        .unwrap();
        assert_eq!(bag.info_value(PAYLOAD_OXUM), Some("10.3"));
        assert_eq!(bag.manifests()[&Algorithm::Sha512].len(), 3);
        assert_eq!(
            bag.tag_manifests().keys().copied().collect::<Vec<_>>(),
            vec![Algorithm::Sha256, Algorithm::Sha512]
        );
    }

    #[test]
    fn md5_is_never_produced() {
        let src = tempfile::tempdir().unwrap();
        let err = create_bag(src.path(), &[Algorithm::Md5], &[], None).unwrap_err();
        assert_eq!(err.code(), "UnsupportedAlgorithm");
    }

    #[test]
    fn missing_source_is_unreadable() {
        let err = create_bag(Path::new("/definitely/not/here"), &[], &[], None).unwrap_err();
        assert_eq!(err.code(), "UnreadableSource");
    }

    fn three_file_bag() -> Bag {
        let mut b = BagBuilder::new().info("Source-Organization", "Lab");
        for (name, body) in [("a.txt", "alpha"), ("b/c.txt", "charlie"), ("d.bin", "")] {
            b.add_file(BagPath::in_payload(name).unwrap(), body.as_bytes().to_vec())
                .unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn make_holey_identity_and_conservation() {
        let bag = three_file_bag();
        let same = bag.make_holey(|_| false, |_| None).unwrap();
        assert_eq!(same, bag);

        let holey = bag
            .make_holey(|_| true, |p| Some(format!("https://example.org/{p}")))
            .unwrap();
        assert!(holey.payload().is_empty());
        assert_eq!(holey.fetch().len(), 3);
        assert_eq!(holey.manifests(), bag.manifests());
        assert_eq!(holey.info_value(PAYLOAD_OXUM), bag.info_value(PAYLOAD_OXUM));
        assert_ne!(holey.tag_manifests(), bag.tag_manifests());
    }

    #[test]
    fn make_holey_needs_urls() {
        let err = three_file_bag().make_holey(|_| true, |_| None).unwrap_err();
        assert!(matches!(err, BagError::MissingUrl(_)));
    }

    #[test]
    fn write_then_read_is_identity() {
        let bag = three_file_bag();
        let dir = tempfile::tempdir().unwrap();
        for dest in [
            Destination::infer(dir.path().join("bag")),
            Destination::infer(dir.path().join("bag.zip")),
            Destination::infer(dir.path().join("bag.tar")),
        ] {
            let written = write_bag(&bag, &dest, true).unwrap();
            assert_eq!(read_bag(&written).unwrap(), bag, "{dest:?}");
        }
    }

    #[test]
    fn fetch_txt_has_one_line_per_entry() {
        let holey = three_file_bag()
            .make_holey(
                |p| p.as_str() != "data/a.txt",
                |p| Some(format!("file:///srv/{p}")),
            )
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = write_bag(&holey, &Destination::Directory(dir.path().join("h")), true).unwrap();
        let fetch = std::fs::read_to_string(out.join("fetch.txt")).unwrap();
        assert_eq!(fetch.lines().count(), holey.fetch().len());
        assert_eq!(fetch.lines().count(), 2);
    }

    #[test]
    fn deterministic_archives_match() {
        let bag = three_file_bag();
        for format in [ArchiveFormat::Zip, ArchiveFormat::Tar] {
            let a = bag.to_archive("x", format, true).unwrap();
            let b = bag.clone().to_archive("x", format, true).unwrap();
            assert_eq!(Algorithm::Sha256.digest(&a), Algorithm::Sha256.digest(&b));
        }
    }

    #[test]
    fn unknown_tag_files_survive_rewrite() {
        let bag = three_file_bag();
        let dir = tempfile::tempdir().unwrap();
        let first = write_bag(&bag, &Destination::Directory(dir.path().join("one")), true).unwrap();
        let odd = b"\x00binary\r\nnot utf8 \xff".to_vec();
        std::fs::create_dir(first.join("notes")).unwrap();
        std::fs::write(first.join("notes/odd.bin"), &odd).unwrap();
        std::fs::write(first.join("manifest-sha1.txt"), b"whatever\n").unwrap();

        let reread = read_bag(&first).unwrap();
        assert_eq!(reread.other_tags()["notes/odd.bin"], odd);
        let second = write_bag(
            &reread,
            &Destination::Directory(dir.path().join("two")),
            true,
        )
        .unwrap();
        assert_eq!(std::fs::read(second.join("notes/odd.bin")).unwrap(), odd);
        assert_eq!(
            std::fs::read(second.join("manifest-sha1.txt")).unwrap(),
            b"whatever\n"
        );
    }

    #[test]
    fn read_rejects_non_bags_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_bag(dir.path()), Err(BagError::NotABag)));

        let out = write_bag(
            &three_file_bag(),
            &Destination::Directory(dir.path().join("b")),
            true,
        )
        .unwrap();
        std::fs::write(out.join("manifest-sha256.txt"), format!("{EMPTY_SHA256}\n")).unwrap();
        assert!(matches!(
            read_bag(&out),
            Err(BagError::MalformedManifestLine { line: 1, .. })
        ));

        std::fs::write(
            out.join("bagit.txt"),
            "BagIt-Version: 9.9\nTag-File-Character-Encoding: UTF-8\n",
        )
        .unwrap();
        assert!(matches!(
            read_bag(&out),
            Err(BagError::UnsupportedVersion(_))
        ));
    }
}
