//! Completeness and validity checks of a bag as it exists on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{self, FileTree};
use super::{tagfile, Algorithm, BagError, BagPath, ManifestEntry, PAYLOAD_OXUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckLevel {
    /// Presence and path coverage only.
    Complete,
    /// Completeness plus recomputation of every digest.
    Valid,
}

/// Which property a problem breaks. An `Incomplete` problem also makes the
/// bag invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Incomplete,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProblemCode {
    Unreadable,
    NotABag,
    UnsupportedVersion,
    MalformedTagFile,
    MalformedManifest,
    MalformedFetch,
    InvalidPath,
    NoPayloadManifest,
    MissingPayload,
    UnmanifestedPayload,
    FetchNotManifested,
    MissingTagFile,
    OxumMismatch,
    ChecksumMismatch,
    TagChecksumMismatch,
    UnfetchedPayload,
}

impl ProblemCode {
    pub fn severity(self) -> Severity {
        match self {
            ProblemCode::ChecksumMismatch
            | ProblemCode::TagChecksumMismatch
            | ProblemCode::UnfetchedPayload => Severity::Invalid,
            _ => Severity::Incomplete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub severity: Severity,
    pub code: ProblemCode,
    pub path: Option<String>,
    pub detail: String,
}

impl Problem {
    fn new(code: ProblemCode, path: Option<&str>, detail: impl Into<String>) -> Self {
        Problem {
            severity: code.severity(),
            code,
            path: path.map(str::to_string),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagValidationReport {
    pub is_complete: bool,
    pub is_valid: bool,
    pub problems: Vec<Problem>,
}

impl BagValidationReport {
    fn from_problems(mut problems: Vec<Problem>) -> Self {
        problems.sort_by(|a, b| (&a.path, a.code, &a.detail).cmp(&(&b.path, b.code, &b.detail)));
        let is_complete = !problems.iter().any(|p| p.severity == Severity::Incomplete);
        BagValidationReport {
            is_complete,
            is_valid: problems.is_empty(),
            problems,
        }
    }

    /// Paths named by problems with `code`.
    pub fn paths_with(&self, code: ProblemCode) -> BTreeSet<&str> {
        self.problems
            .iter()
            .filter(|p| p.code == code)
            .filter_map(|p| p.path.as_deref())
            .collect()
    }

    pub fn has(&self, code: ProblemCode) -> bool {
        self.problems.iter().any(|p| p.code == code)
    }
}

/// Checks the bag at `location` (directory or archive). Problems are
/// reported, never raised.
pub fn check(location: &Path, level: CheckLevel) -> BagValidationReport {
    match tree::load(location) {
        Ok(files) => check_tree(&files, level),
        Err(e) => load_failure(e),
    }
}

pub fn check_archive_bytes(bytes: &[u8], level: CheckLevel) -> BagValidationReport {
    match tree::load_archive(bytes) {
        Ok(files) => check_tree(&files, level),
        Err(e) => load_failure(e),
    }
}

fn load_failure(e: BagError) -> BagValidationReport {
    let code = match e {
        BagError::NotABag => ProblemCode::NotABag,
        _ => ProblemCode::Unreadable,
    };
    BagValidationReport::from_problems(vec![Problem::new(code, None, e.to_string())])
}

fn manifest_files<'a>(files: &'a FileTree, prefix: &str) -> Vec<(&'a str, Algorithm)> {
    files
        .keys()
        .filter(|k| k.starts_with(prefix) && k.ends_with(".txt") && !k.contains('/'))
        .filter_map(|k| {
            let name = &k[prefix.len()..k.len() - 4];
            name.parse::<Algorithm>().ok().map(|a| (k.as_str(), a))
        })
        .collect()
}

pub(crate) fn check_tree(files: &FileTree, level: CheckLevel) -> BagValidationReport {
    let mut problems = Vec::new();

    let Some(declaration) = files.get(tagfile::DECLARATION) else {
        return BagValidationReport::from_problems(vec![Problem::new(
            ProblemCode::NotABag,
            None,
            "bagit.txt is missing",
        )]);
    };
    if let Err(e) = tagfile::parse_declaration(declaration) {
        let code = match e {
            BagError::UnsupportedVersion(_) => ProblemCode::UnsupportedVersion,
            BagError::NotABag => ProblemCode::NotABag,
            _ => ProblemCode::MalformedTagFile,
        };
        problems.push(Problem::new(
            code,
            Some(tagfile::DECLARATION),
            e.to_string(),
        ));
        return BagValidationReport::from_problems(problems);
    }

    let payload_files: BTreeSet<&str> = files
        .keys()
        .filter(|k| BagPath::new(k.as_str()).is_ok_and(|p| p.is_payload()))
        .map(String::as_str)
        .collect();

    let mut manifests: Vec<(String, Vec<ManifestEntry>)> = Vec::new();
    for (name, algorithm) in manifest_files(files, "manifest-") {
        match tagfile::parse_manifest(name, algorithm, &files[name]) {
            Ok(entries) => manifests.push((name.to_string(), entries)),
            Err(e) => problems.push(Problem::new(
                ProblemCode::MalformedManifest,
                Some(name),
                e.to_string(),
            )),
        }
    }
    if manifests.is_empty()
        && !problems
            .iter()
            .any(|p| p.code == ProblemCode::MalformedManifest)
    {
        problems.push(Problem::new(
            ProblemCode::NoPayloadManifest,
            None,
            "no payload manifest",
        ));
    }
    let mut tag_manifests: Vec<(String, Vec<ManifestEntry>)> = Vec::new();
    for (name, algorithm) in manifest_files(files, "tagmanifest-") {
        match tagfile::parse_manifest(name, algorithm, &files[name]) {
            Ok(entries) => tag_manifests.push((name.to_string(), entries)),
            Err(e) => problems.push(Problem::new(
                ProblemCode::MalformedManifest,
                Some(name),
                e.to_string(),
            )),
        }
    }

    let fetch = match files.get(tagfile::FETCH).map(|b| tagfile::parse_fetch(b)) {
        None => Vec::new(),
        Some(Ok(entries)) => entries,
        Some(Err(e)) => {
            problems.push(Problem::new(
                ProblemCode::MalformedFetch,
                Some(tagfile::FETCH),
                e.to_string(),
            ));
            Vec::new()
        }
    };
    let fetched: BTreeMap<&str, Option<u64>> =
        fetch.iter().map(|f| (f.path.as_str(), f.length)).collect();

    // Manifest coverage.
    let mut listed: BTreeSet<&str> = BTreeSet::new();
    for (name, entries) in &manifests {
        let in_this: BTreeSet<&str> = entries.iter().map(|e| e.path.as_str()).collect();
        for entry in entries {
            let path = entry.path.as_str();
            listed.insert(path);
            if !entry.path.is_payload() {
                problems.push(Problem::new(
                    ProblemCode::InvalidPath,
                    Some(path),
                    format!("{name} lists a path outside data/"),
                ));
            } else if !payload_files.contains(path) && !fetched.contains_key(path) {
                problems.push(Problem::new(
                    ProblemCode::MissingPayload,
                    Some(path),
                    format!("listed in {name} but not present or fetchable"),
                ));
            }
        }
        for path in &payload_files {
            if !in_this.contains(path) {
                problems.push(Problem::new(
                    ProblemCode::UnmanifestedPayload,
                    Some(path),
                    format!("not listed in {name}"),
                ));
            }
        }
    }
    for entry in &fetch {
        if !listed.contains(entry.path.as_str()) {
            problems.push(Problem::new(
                ProblemCode::FetchNotManifested,
                Some(entry.path.as_str()),
                "fetch entry has no manifest digest",
            ));
        }
    }

    for (name, entries) in &tag_manifests {
        for entry in entries {
            if !files.contains_key(entry.path.as_str()) {
                problems.push(Problem::new(
                    ProblemCode::MissingTagFile,
                    Some(entry.path.as_str()),
                    format!("listed in {name} but missing"),
                ));
            }
        }
    }

    if let Some(info) = files.get(tagfile::BAG_INFO) {
        match tagfile::parse_labels(tagfile::BAG_INFO, info) {
            Ok(labels) => {
                let stored = labels
                    .iter()
                    .find(|(l, _)| l.eq_ignore_ascii_case(PAYLOAD_OXUM));
                if let Some((_, stored)) = stored {
                    check_oxum(stored, files, &payload_files, &fetched, &mut problems);
                }
            }
            Err(e) => problems.push(Problem::new(
                ProblemCode::MalformedTagFile,
                Some(tagfile::BAG_INFO),
                e.to_string(),
            )),
        }
    }

    if level == CheckLevel::Valid {
        let mut checks: Vec<(&ManifestEntry, ProblemCode)> = Vec::new();
        for (_, entries) in &manifests {
            for entry in entries {
                if files.contains_key(entry.path.as_str()) {
                    checks.push((entry, ProblemCode::ChecksumMismatch));
                }
            }
        }
        for (_, entries) in &tag_manifests {
            for entry in entries {
                if files.contains_key(entry.path.as_str()) {
                    checks.push((entry, ProblemCode::TagChecksumMismatch));
                }
            }
        }
        let mismatches: Vec<Problem> = checks
            .par_iter()
            .filter_map(|(entry, code)| {
                let actual = entry.algorithm.digest(&files[entry.path.as_str()]);
                (actual != entry.digest).then(|| {
                    Problem::new(
                        *code,
                        Some(entry.path.as_str()),
                        format!(
                            "{} expected {} got {}",
                            entry.algorithm, entry.digest, actual
                        ),
                    )
                })
            })
            .collect();
        problems.extend(mismatches);

        for path in fetched.keys() {
            if !payload_files.contains(path) {
                problems.push(Problem::new(
                    ProblemCode::UnfetchedPayload,
                    Some(path),
                    "listed in fetch.txt but not yet retrieved",
                ));
            }
        }
    }

    BagValidationReport::from_problems(problems)
}

fn check_oxum(
    stored: &str,
    files: &FileTree,
    payload_files: &BTreeSet<&str>,
    fetched: &BTreeMap<&str, Option<u64>>,
    problems: &mut Vec<Problem>,
) {
    let parsed = stored
        .trim()
        .split_once('.')
        .and_then(|(o, c)| Some((o.parse::<u64>().ok()?, c.parse::<u64>().ok()?)));
    let Some((octets, count)) = parsed else {
        problems.push(Problem::new(
            ProblemCode::MalformedTagFile,
            Some(tagfile::BAG_INFO),
            format!("Payload-Oxum `{stored}` is not octets.count"),
        ));
        return;
    };
    // Fetched paths that are also present count once.
    let mut total_octets: u64 = payload_files.iter().map(|p| files[*p].len() as u64).sum();
    let mut total_count = payload_files.len() as u64;
    for (path, length) in fetched {
        if payload_files.contains(path) {
            continue;
        }
        match length {
            Some(n) => {
                total_octets += n;
                total_count += 1;
            }
            // Unknown length: the oxum cannot be checked.
            None => return,
        }
    }
    if (total_octets, total_count) != (octets, count) {
        problems.push(Problem::new(
            ProblemCode::OxumMismatch,
            Some(tagfile::BAG_INFO),
            format!("Payload-Oxum says {stored}, payload is {total_octets}.{total_count}"),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::super::{write_bag, BagBuilder, Destination};
    use super::*;

    fn written() -> (tempfile::TempDir, std::path::PathBuf) {
        let mut b = BagBuilder::new().info("Contact-Name", "Ada");
        b.add_file(BagPath::in_payload("x.txt").unwrap(), b"hello".to_vec())
            .unwrap();
        b.add_file(BagPath::in_payload("y.txt").unwrap(), b"world".to_vec())
            .unwrap();
        let bag = b.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = write_bag(&bag, &Destination::Directory(dir.path().join("bag")), true).unwrap();
        (dir, out)
    }

    #[test]
    fn untampered_bag_is_complete_and_valid() {
        let (_d, out) = written();
        let report = check(&out, CheckLevel::Valid);
        assert!(report.is_complete && report.is_valid, "{report:?}");
        assert!(report.problems.is_empty());
    }

    #[test]
    fn flipped_payload_byte_is_a_checksum_mismatch() {
        let (_d, out) = written();
        std::fs::write(out.join("data/x.txt"), b"hellO").unwrap();
        let complete = check(&out, CheckLevel::Complete);
        assert!(complete.is_complete && complete.is_valid);
        let report = check(&out, CheckLevel::Valid);
        assert!(report.is_complete);
        assert!(!report.is_valid);
        assert_eq!(
            report.paths_with(ProblemCode::ChecksumMismatch),
            BTreeSet::from(["data/x.txt"])
        );
        assert_eq!(report.problems.len(), 1);
    }

    #[test]
    fn deleted_payload_is_incomplete() {
        let (_d, out) = written();
        std::fs::remove_file(out.join("data/y.txt")).unwrap();
        let report = check(&out, CheckLevel::Complete);
        assert!(!report.is_complete && !report.is_valid);
        assert_eq!(
            report.paths_with(ProblemCode::MissingPayload),
            BTreeSet::from(["data/y.txt"])
        );
        assert!(report.has(ProblemCode::OxumMismatch));
    }

    #[test]
    fn extra_payload_file_is_unmanifested() {
        let (_d, out) = written();
        std::fs::write(out.join("data/stowaway"), b"?").unwrap();
        let report = check(&out, CheckLevel::Complete);
        assert!(!report.is_complete);
        assert_eq!(
            report.paths_with(ProblemCode::UnmanifestedPayload),
            BTreeSet::from(["data/stowaway"])
        );
    }

    #[test]
    fn edited_bag_info_is_a_tag_mismatch_only() {
        let (_d, out) = written();
        let info = std::fs::read_to_string(out.join("bag-info.txt")).unwrap();
        std::fs::write(out.join("bag-info.txt"), info.replace("Ada", "Bob")).unwrap();
        let report = check(&out, CheckLevel::Valid);
        assert!(report.is_complete && !report.is_valid);
        assert_eq!(report.problems.len(), 1);
        assert_eq!(
            report.paths_with(ProblemCode::TagChecksumMismatch),
            BTreeSet::from(["bag-info.txt"])
        );
    }

    #[test]
    fn missing_declaration_and_unreadable_location() {
        let (_d, out) = written();
        std::fs::remove_file(out.join("bagit.txt")).unwrap();
        assert!(check(&out, CheckLevel::Complete).has(ProblemCode::NotABag));
        assert!(check(Path::new("/no/such/bag"), CheckLevel::Complete).has(ProblemCode::Unreadable));
    }
}
