//! Acceptance suite. Each criterion runs in turn and prints one line:
//! `PASS <criterion> (<evidence>)` or `FAIL <criterion>: <reason>`.
//! The process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use fairkit::bag::{
    check, file_url, read_bag, write_bag, Algorithm, ArchiveFormat, Bag, BagBuilder, BagPath,
    CheckLevel, Destination, MetadataBlock, ProblemCode, RemoteFile, Resolvers,
};
use fairkit::catalog::{
    Catalog, CatalogOptions, Filter, FilterOp, ModelChange, Principal, Query, TableRef,
};
use fairkit::flows::{
    check_audit, define_flow, Action, Extractor, FlowEngine, FlowEngineOptions, FlowError,
    FlowServices, Interrupted, LocalServices, Phase, RunStatus,
};
use fairkit::idspace::{
    parse_id, Checksum, IdString, MinidRecord, MintRequest, Registry, RegistryOptions, Status,
};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("bag conformance", bag_conformance),
        ("tamper sensitivity", tamper_sensitivity),
        ("holey equivalence", holey_equivalence),
        ("identifier suite", identifier_suite),
        ("catalog snapshot oracle", snapshot_oracle),
        ("vocabulary closure", vocabulary_closure),
        ("flow idempotency", flow_idempotency),
        ("end-to-end scenario", end_to_end),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, criterion) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|panic| Err(panic_text(panic.as_ref())));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(evidence) => println!("PASS {name} ({evidence}; {secs:.1}s)"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(panic: &(dyn std::any::Any + Send)) -> String {
    panic
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

// ---------------------------------------------------------------- bags

fn p(path: &str) -> BagPath {
    BagPath::new(path).unwrap()
}

fn build(files: &[(&str, &[u8])], configure: impl FnOnce(BagBuilder) -> BagBuilder) -> Bag {
    let mut builder = configure(BagBuilder::new());
    for (path, data) in files {
        builder.add_file(p(path), data.to_vec()).unwrap();
    }
    builder.build().unwrap()
}

fn base_bag() -> Bag {
    build(
        &[("data/a.txt", b"alpha"), ("data/sub/b.txt", b"beta")],
        |b| b.info("Source-Organization", "Lab"),
    )
}

type Expected = (bool, bool, BTreeSet<(ProblemCode, Option<String>)>);

struct Fixture {
    name: &'static str,
    bag: Bag,
    /// Edits applied to the written directory.
    tamper: Box<dyn Fn(&Path)>,
    expected: Expected,
}

fn expect(complete: bool, valid: bool, problems: &[(ProblemCode, Option<&str>)]) -> Expected {
    (
        complete,
        valid,
        problems
            .iter()
            .map(|(c, p)| (*c, p.map(str::to_string)))
            .collect(),
    )
}

fn untouched() -> Box<dyn Fn(&Path)> {
    Box::new(|_| {})
}

fn corpus() -> Vec<Fixture> {
    use ProblemCode::*;
    let remote = |length: Option<u64>| RemoteFile {
        url: "https://repository.example.org/objects/c.bin".into(),
        length,
        digests: BTreeMap::from([(Algorithm::Sha256, Algorithm::Sha256.digest(b"gamma"))]),
    };
    let with_remote = |length| {
        let mut builder = BagBuilder::new();
        builder
            .add_file(p("data/a.txt"), b"alpha".to_vec())
            .unwrap();
        builder.add_remote(p("data/c.bin"), remote(length)).unwrap();
        builder.build().unwrap()
    };
    vec![
        Fixture {
            name: "valid",
            bag: base_bag(),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "incomplete",
            bag: base_bag(),
            tamper: Box::new(|d| std::fs::remove_file(d.join("data/sub/b.txt")).unwrap()),
            expected: expect(
                false,
                false,
                &[
                    (MissingPayload, Some("data/sub/b.txt")),
                    (OxumMismatch, Some("bag-info.txt")),
                ],
            ),
        },
        Fixture {
            name: "tampered payload",
            bag: base_bag(),
            tamper: Box::new(|d| std::fs::write(d.join("data/a.txt"), "alphA").unwrap()),
            expected: expect(true, false, &[(ChecksumMismatch, Some("data/a.txt"))]),
        },
        Fixture {
            name: "tampered tag",
            bag: base_bag(),
            tamper: Box::new(|d| {
                let info = std::fs::read_to_string(d.join("bag-info.txt")).unwrap();
                std::fs::write(d.join("bag-info.txt"), info.replace("Lab", "Lib")).unwrap();
            }),
            expected: expect(true, false, &[(TagChecksumMismatch, Some("bag-info.txt"))]),
        },
        Fixture {
            name: "holey",
            bag: base_bag()
                .make_holey(
                    |p| p.as_str() == "data/sub/b.txt",
                    |_| Some("https://example.org/b.txt".into()),
                )
                .unwrap(),
            tamper: untouched(),
            expected: expect(true, false, &[(UnfetchedPayload, Some("data/sub/b.txt"))]),
        },
        Fixture {
            name: "empty",
            bag: build(&[], |b| b),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "unicode paths",
            bag: build(
                &[
                    ("data/δεδομένα/naïve 文件.txt", "ü".as_bytes()),
                    ("data/Ωmega.csv", b"1,2\n"),
                ],
                |b| b,
            ),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "CRLF-encoded path",
            bag: build(&[("data/line\r\nbreak.txt", b"two lines")], |b| b),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "unknown-length fetch",
            bag: with_remote(None),
            tamper: untouched(),
            expected: expect(true, false, &[(UnfetchedPayload, Some("data/c.bin"))]),
        },
        Fixture {
            name: "unmanifested payload",
            bag: base_bag(),
            tamper: Box::new(|d| std::fs::write(d.join("data/extra.txt"), "stray").unwrap()),
            expected: expect(
                false,
                false,
                &[
                    (UnmanifestedPayload, Some("data/extra.txt")),
                    (OxumMismatch, Some("bag-info.txt")),
                ],
            ),
        },
        Fixture {
            name: "missing declaration",
            bag: base_bag(),
            tamper: Box::new(|d| std::fs::remove_file(d.join("bagit.txt")).unwrap()),
            expected: expect(false, false, &[(NotABag, None)]),
        },
        Fixture {
            name: "malformed manifest line",
            bag: base_bag(),
            tamper: Box::new(|d| {
                let path = d.join("manifest-sha256.txt");
                let mut text = std::fs::read_to_string(&path).unwrap();
                text.push_str("deadbeef\n");
                std::fs::write(path, text).unwrap();
            }),
            expected: expect(
                false,
                false,
                &[
                    (MalformedManifest, Some("manifest-sha256.txt")),
                    (TagChecksumMismatch, Some("manifest-sha256.txt")),
                ],
            ),
        },
        Fixture {
            name: "unsupported version",
            bag: base_bag(),
            tamper: Box::new(|d| {
                std::fs::write(
                    d.join("bagit.txt"),
                    "BagIt-Version: 2.0\nTag-File-Character-Encoding: UTF-8\n",
                )
                .unwrap()
            }),
            expected: expect(false, false, &[(UnsupportedVersion, Some("bagit.txt"))]),
        },
        Fixture {
            name: "two algorithms",
            bag: build(&[("data/a.txt", b"alpha")], |b| {
                b.algorithm(Algorithm::Sha512).unwrap()
            }),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "missing tag file",
            bag: base_bag(),
            tamper: Box::new(|d| std::fs::remove_file(d.join("bag-info.txt")).unwrap()),
            expected: expect(false, false, &[(MissingTagFile, Some("bag-info.txt"))]),
        },
        Fixture {
            name: "percent in path",
            bag: build(&[("data/100%.txt", b"full")], |b| b),
            tamper: untouched(),
            expected: expect(true, true, &[]),
        },
        Fixture {
            name: "fetch with known length",
            bag: with_remote(Some(5)),
            tamper: untouched(),
            expected: expect(true, false, &[(UnfetchedPayload, Some("data/c.bin"))]),
        },
    ]
}

fn observed(location: &Path) -> Expected {
    let report = check(location, CheckLevel::Valid);
    (
        report.is_complete,
        report.is_valid,
        report
            .problems
            .iter()
            .map(|p| (p.code, p.path.clone()))
            .collect(),
    )
}

const NAME_CHARS: &[char] = &[
    'a', 'b', 'c', 'x', 'Y', 'Z', '0', '1', '9', ' ', '_', '-', '.', '%', 'é', 'ß', '文', 'Ω',
    '\r', '\n',
];

fn random_segment(rng: &mut StdRng) -> String {
    loop {
        let len = rng.gen_range(1..=8);
        let segment: String = (0..len).map(|_| *NAME_CHARS.choose(rng).unwrap()).collect();
        if segment != "." && segment != ".." {
            return segment;
        }
    }
}

fn random_payload(rng: &mut StdRng, max_files: usize) -> BTreeMap<String, Vec<u8>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let count = rng.gen_range(0..=max_files);
    while files.len() < count {
        let depth = rng.gen_range(1..=3);
        let path = format!(
            "data/{}",
            (0..depth)
                .map(|_| random_segment(rng))
                .collect::<Vec<_>>()
                .join("/")
        );
        // A file may not also be a directory.
        let clash = files.keys().any(|k| {
            k == &path || k.starts_with(&format!("{path}/")) || path.starts_with(&format!("{k}/"))
        });
        if clash {
            continue;
        }
        let size = if rng.gen_bool(0.1) {
            0
        } else {
            rng.gen_range(1..2048)
        };
        files.insert(path, (0..size).map(|_| rng.gen()).collect());
    }
    files
}

fn random_bag(rng: &mut StdRng, max_files: usize) -> Bag {
    let files = random_payload(rng, max_files);
    let mut builder = BagBuilder::new();
    if rng.gen_bool(0.3) {
        builder = builder.algorithm(Algorithm::Sha512).unwrap();
    }
    for label in [
        "Source-Organization",
        "Contact-Name",
        "External-Description",
    ] {
        if rng.gen_bool(0.5) {
            let words = rng.gen_range(1..40);
            let value = (0..words)
                .map(|i| format!("w{i}"))
                .collect::<Vec<_>>()
                .join(" ");
            builder = builder.info(label, value);
        }
    }
    match rng.gen_range(0..3) {
        0 => {
            builder = builder.metadata(MetadataBlock::KeyValue(vec![(
                "Creator".into(),
                format!("n{}", rng.gen::<u16>()),
            )]))
        }
        1 => {
            builder = builder.metadata(MetadataBlock::ResearchObject(
                json!({"@context": "https://w3id.org/bundle/context", "n": rng.gen::<u32>()}),
            ))
        }
        _ => {}
    }
    for (path, data) in files {
        builder.add_file(p(&path), data).unwrap();
    }
    builder.build().unwrap()
}

fn bag_conformance() -> Outcome {
    let started = Instant::now();
    let dir = tempdir();
    let fixtures = corpus();
    ensure!(fixtures.len() >= 12, "only {} fixtures", fixtures.len());
    for (i, fixture) in fixtures.iter().enumerate() {
        let location = dir.path().join(format!("fixture{i}"));
        write_bag(
            &fixture.bag,
            &Destination::Directory(location.clone()),
            true,
        )
        .unwrap();
        (fixture.tamper)(&location);
        let got = observed(&location);
        ensure!(
            got == fixture.expected,
            "{}: expected {:?}, got {:?}",
            fixture.name,
            fixture.expected,
            got
        );
    }
    let crlf = std::fs::read_to_string(dir.path().join("fixture7/manifest-sha256.txt")).unwrap();
    ensure!(
        crlf.contains("  data/line%0D%0Abreak.txt\n"),
        "CR/LF not percent-encoded: {crlf:?}"
    );
    let unknown = std::fs::read_to_string(dir.path().join("fixture8/fetch.txt")).unwrap();
    ensure!(
        unknown.contains(" - data/c.bin"),
        "unknown length not written as a dash: {unknown:?}"
    );
    let empty = read_bag(&dir.path().join("fixture5")).unwrap();
    ensure!(
        empty.info_value("Payload-Oxum") == Some("0.0"),
        "empty bag oxum {:?}",
        empty.info_value("Payload-Oxum")
    );

    let mut rng = StdRng::seed_from_u64(0xBA6);
    for i in 0..200 {
        let bag = random_bag(&mut rng, 6);
        let dest = match i % 3 {
            0 => Destination::Directory(dir.path().join(format!("rt{i}"))),
            1 => Destination::Archive(dir.path().join(format!("rt{i}.tar")), ArchiveFormat::Tar),
            _ => Destination::Archive(dir.path().join(format!("rt{i}.zip")), ArchiveFormat::Zip),
        };
        let written = write_bag(&bag, &dest, true).unwrap();
        let back = read_bag(&written).map_err(|e| format!("random bag {i}: {e}"))?;
        ensure!(
            back == bag,
            "random bag {i} changed in a round trip through {}",
            written.display()
        );
        ensure!(
            check(&written, CheckLevel::Valid).is_valid,
            "random bag {i} is not valid once written"
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{} fixtures, 200 round trips", fixtures.len()))
}

fn tamper_sensitivity() -> Outcome {
    let dir = tempdir();
    let mut rng = StdRng::seed_from_u64(0x7A3);
    let mut pool: Vec<Bag> = corpus()
        .into_iter()
        .filter(|f| f.expected.1 && !f.bag.payload().iter().all(|e| e.data.is_empty()))
        .map(|f| f.bag)
        .collect();
    while pool.len() < 12 {
        let bag = random_bag(&mut rng, 5);
        if bag.payload().iter().any(|e| !e.data.is_empty()) {
            pool.push(bag);
        }
    }
    for i in 0..100 {
        let bag = pool.choose(&mut rng).unwrap();
        let candidates: Vec<_> = bag
            .payload()
            .iter()
            .filter(|e| !e.data.is_empty())
            .collect();
        let entry = candidates.choose(&mut rng).unwrap();
        let location = dir.path().join(format!("t{i}"));
        write_bag(bag, &Destination::Directory(location.clone()), true).unwrap();
        let target = location.join(entry.path.as_str());
        let mut bytes = std::fs::read(&target).unwrap();
        let at = rng.gen_range(0..bytes.len());
        bytes[at] ^= rng.gen_range(1..=255u8);
        std::fs::write(&target, bytes).unwrap();

        let report = check(&location, CheckLevel::Valid);
        ensure!(
            !report.is_valid,
            "mutation {i} of {:?} went unnoticed",
            entry.path.as_str()
        );
        let named: BTreeSet<(ProblemCode, Option<&str>)> = report
            .problems
            .iter()
            .map(|p| (p.code, p.path.as_deref()))
            .collect();
        let wanted = BTreeSet::from([(ProblemCode::ChecksumMismatch, Some(entry.path.as_str()))]);
        ensure!(
            named == wanted,
            "mutation {i}: expected {wanted:?}, got {named:?}"
        );
    }
    Ok(format!("100 mutations over {} bags", pool.len()))
}

fn holey_equivalence() -> Outcome {
    let dir = tempdir();
    let mut rng = StdRng::seed_from_u64(0x401E);
    let resolvers = Resolvers::with_defaults();
    let mut externalized = 0;
    for i in 0..50 {
        let bag = loop {
            let bag = random_bag(&mut rng, 6);
            if !bag.payload().is_empty() {
                break bag;
            }
        };
        let chosen: BTreeSet<String> = bag
            .payload()
            .iter()
            .filter(|_| rng.gen_bool(0.6))
            .map(|e| e.path.to_string())
            .collect();
        externalized += chosen.len();
        // The stub serves files from a plain directory through file URLs.
        let stub = dir.path().join(format!("stub{i}"));
        for entry in bag.payload() {
            if chosen.contains(entry.path.as_str()) {
                let target = stub.join(entry.path.as_str());
                std::fs::create_dir_all(target.parent().unwrap()).unwrap();
                std::fs::write(&target, &entry.data).unwrap();
            }
        }
        let holey = bag
            .make_holey(
                |p| chosen.contains(p.as_str()),
                |p| file_url(&stub.join(p.as_str())),
            )
            .unwrap();
        ensure!(
            holey.fetch().len() == chosen.len(),
            "pair {i}: fetch list has {} entries",
            holey.fetch().len()
        );
        let holey_dir = dir.path().join(format!("holey{i}"));
        write_bag(&holey, &Destination::Directory(holey_dir.clone()), true).unwrap();

        let restored = read_bag(&holey_dir)
            .unwrap()
            .materialize(&resolvers)
            .map_err(|e| format!("pair {i}: {e}"))?;
        let out = dir.path().join(format!("full{i}"));
        write_bag(&restored, &Destination::Directory(out.clone()), true).unwrap();
        let report = check(&out, CheckLevel::Valid);
        ensure!(report.is_valid, "pair {i}: {:?}", report.problems);
        ensure!(
            restored.payload() == bag.payload(),
            "pair {i}: payload bytes differ"
        );
        ensure!(
            restored.fetch().is_empty(),
            "pair {i}: fetch list not emptied"
        );
    }
    Ok(format!("50 pairs, {externalized} files externalized"))
}

// ---------------------------------------------------------- identifiers

fn identifier_suite() -> Outcome {
    let dir = tempdir();
    let log = dir.path().join("registry.log");
    let parsed = parse_id("SYNAPSE:1-1ACR").map_err(|e| e.to_string())?;
    ensure!(
        (
            parsed.namespace(),
            parsed.suffix(),
            parsed.to_string().as_str()
        ) == ("SYNAPSE", "1-1ACR", "SYNAPSE:1-1ACR"),
        "parsed as {parsed:?}"
    );

    let minted: Vec<MinidRecord> = {
        let registry = Registry::open(&log, RegistryOptions::default()).unwrap();
        (0..10_000u32)
            .map(|i| {
                let request = MintRequest {
                    creator: "acceptance".into(),
                    checksum: Checksum::of(Algorithm::Sha256, &i.to_be_bytes()),
                    locations: vec![format!("https://data.example.org/{i}")],
                    title: None,
                    namespace: "MINID".into(),
                };
                registry.mint(&request).unwrap()
            })
            .collect()
    };
    let distinct: BTreeSet<&IdString> = minted.iter().map(|r| &r.id).collect();
    ensure!(distinct.len() == 10_000, "{} distinct ids", distinct.len());

    let doi = "10.25551/1/1-1F6W";
    let upgraded = minted[4321].id.clone();
    {
        let registry = Registry::open(&log, RegistryOptions::default()).unwrap();
        for record in &minted {
            let found = registry
                .resolve(&record.id)
                .map_err(|e| format!("{} after restart: {e}", record.id))?;
            ensure!(&found == record, "{} changed across restart", record.id);
        }
        let record = registry.upgrade(&upgraded, doi).unwrap();
        ensure!(
            record.status == Status::Superseded,
            "upgrade left {:?}",
            record.status
        );
    }
    let registry = Registry::open(&log, RegistryOptions::default()).unwrap();
    let record = registry.resolve(&upgraded).unwrap();
    ensure!(
        record.status == Status::Superseded && record.superseded_by.as_deref() == Some(doi),
        "after restart the upgraded record reads {record:?}"
    );
    ensure!(
        registry.id_count() == 10_000,
        "{} ids after restart",
        registry.id_count()
    );
    Ok("10000 distinct, all resolve after restart, DOI upgrade persists".into())
}

// -------------------------------------------------------------- catalog

fn obj(value: Value) -> Map<String, Value> {
    value.as_object().unwrap().clone()
}

fn change(value: Value) -> ModelChange {
    serde_json::from_value(value).unwrap()
}

#[derive(Clone)]
enum Kind {
    Name,
    Int,
    Note,
    Float,
    Flag,
    Site,
}

#[derive(Clone)]
struct OracleColumn {
    /// Stable name: the one the column was created with.
    key: &'static str,
    names: Vec<String>,
    kind: Kind,
}

impl OracleColumn {
    fn name(&self) -> &str {
        self.names.last().unwrap()
    }
}

/// Naive model of one table: the live rows, keyed by stable column names.
#[derive(Clone, Default)]
struct Oracle {
    columns: Vec<OracleColumn>,
    rows: BTreeMap<String, BTreeMap<&'static str, Value>>,
}

impl Oracle {
    fn column(&self, key: &str) -> &OracleColumn {
        self.columns.iter().find(|c| c.key == key).unwrap()
    }

    /// Rows as a live query at this state renders them: current names,
    /// nulls dropped.
    fn render(&self) -> BTreeMap<String, BTreeMap<String, Value>> {
        self.rows
            .iter()
            .map(|(rid, values)| {
                let named = values
                    .iter()
                    .map(|(key, v)| (self.column(key).name().to_string(), v.clone()))
                    .collect();
                (rid.clone(), named)
            })
            .collect()
    }

    fn matching(&self, key: &str, value: &Value) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter(|(_, v)| v.get(key) == Some(value))
            .map(|(rid, _)| rid.clone())
            .collect()
    }
}

fn random_value(rng: &mut StdRng, kind: &Kind) -> Value {
    match kind {
        Kind::Name => json!(["ava", "bo", "cy", "dee", "eli"].choose(rng).unwrap()),
        Kind::Int => json!(rng.gen_range(0..50)),
        Kind::Note => json!(["x", "y", "z"].choose(rng).unwrap()),
        Kind::Float => json!(f64::from(rng.gen_range(0..400)) * 0.25),
        Kind::Flag => json!(rng.gen_bool(0.5)),
        Kind::Site => json!(["north", "south"].choose(rng).unwrap()),
    }
}

fn live_rows(
    catalog: &Catalog,
    query: &Query,
    who: &Principal,
) -> Result<BTreeMap<String, BTreeMap<String, Value>>, String> {
    let result = catalog
        .query(query, who)
        .map_err(|e| format!("{query:?}: {e}"))?;
    Ok(result
        .rows
        .into_iter()
        .map(|r| {
            let values = r.values.into_iter().filter(|(_, v)| !v.is_null()).collect();
            (r.rid.to_string(), values)
        })
        .collect())
}

fn snapshot_oracle() -> Outcome {
    let dir = tempdir();
    let log = dir.path().join("catalog.log");
    let who = Principal::new("curator", &[]);
    let table = TableRef::parse("Lab:Sample").unwrap();
    let catalog = Catalog::open(&log, CatalogOptions::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(0xCA7A);

    catalog
        .apply_model_change(
            change(
                json!({"change": "add_table", "table": "Lab:Sample", "columns": [
                {"name": "Name", "type": "text", "nullable": false},
                {"name": "Count", "type": "integer"},
                {"name": "Note", "type": "text"}]}),
            ),
            &who,
        )
        .unwrap();
    let column = |key: &'static str, kind: Kind| OracleColumn {
        key,
        names: vec![key.to_string()],
        kind,
    };
    let mut oracle = Oracle {
        columns: vec![
            column("Name", Kind::Name),
            column("Count", Kind::Int),
            column("Note", Kind::Note),
        ],
        rows: BTreeMap::new(),
    };

    // Five additive changes and two renames, at random points.
    let mut schedule: Vec<usize> = (20..480)
        .collect::<Vec<_>>()
        .choose_multiple(&mut rng, 7)
        .copied()
        .collect();
    schedule.sort_unstable();
    let changes = [
        json!({"change": "add_column", "table": "Lab:Sample", "column": {"name": "Weight", "type": "float"}}),
        json!({"change": "rename_column", "table": "Lab:Sample", "from": "Note", "to": "Comment"}),
        json!({"change": "add_column", "table": "Lab:Sample", "column": {"name": "Flag", "type": "boolean"}}),
        json!({"change": "add_table", "table": "Lab:Other", "columns": [{"name": "Label", "type": "text"}]}),
        json!({"change": "rename_column", "table": "Lab:Sample", "from": "Count", "to": "Total"}),
        json!({"change": "add_column", "table": "Lab:Sample", "column": {"name": "Site", "type": "text"}}),
        json!({"change": "add_vocabulary", "table": "Lab:Shape", "terms": [{"canonical": "round"}]}),
    ];

    // Per snapshot: the oracle state, and a query phrased with the column
    // names of that moment.
    let mut states: BTreeMap<u64, Oracle> = BTreeMap::from([(catalog.snapshot(), oracle.clone())]);
    let mut phrased: Vec<(u64, String, Value)> = Vec::new();
    let (mut inserts, mut updates, mut deletes) = (0, 0, 0);

    for op in 0..500 {
        if let Some(i) = schedule.iter().position(|s| *s == op) {
            let note = oracle.column("Note").name().to_string();
            phrased.push((
                catalog.snapshot(),
                note,
                random_value(&mut rng, &Kind::Note),
            ));
            let spec = changes[i].clone();
            catalog
                .apply_model_change(change(spec.clone()), &who)
                .map_err(|e| format!("{spec}: {e}"))?;
            match spec["change"].as_str().unwrap() {
                "rename_column" => {
                    let from = spec["from"].as_str().unwrap();
                    let col = oracle
                        .columns
                        .iter_mut()
                        .find(|c| c.name() == from)
                        .unwrap();
                    col.names.push(spec["to"].as_str().unwrap().to_string());
                }
                "add_column" if spec["table"] == "Lab:Sample" => {
                    let (key, kind) = match spec["column"]["name"].as_str().unwrap() {
                        "Weight" => ("Weight", Kind::Float),
                        "Flag" => ("Flag", Kind::Flag),
                        _ => ("Site", Kind::Site),
                    };
                    oracle.columns.push(column(key, kind));
                }
                _ => {}
            }
        } else {
            let roll = rng.gen_range(0..100);
            let live: Vec<String> = oracle.rows.keys().cloned().collect();
            if roll < 45 || live.is_empty() {
                let mut values = Map::new();
                let mut stored = BTreeMap::new();
                for col in &oracle.columns {
                    if col.key == "Name" || rng.gen_bool(0.6) {
                        let v = random_value(&mut rng, &col.kind);
                        // Any name the column ever had is accepted.
                        values.insert(col.names.choose(&mut rng).unwrap().clone(), v.clone());
                        stored.insert(col.key, v);
                    }
                }
                let row = catalog
                    .insert(&table, values, &who)
                    .map_err(|e| format!("insert: {e}"))?;
                oracle.rows.insert(row.rid.to_string(), stored);
                inserts += 1;
            } else if roll < 80 {
                let rid = live.choose(&mut rng).unwrap().clone();
                let mut values = Map::new();
                for col in oracle.columns.clone().choose_multiple(&mut rng, 2) {
                    let clear = col.key != "Name" && rng.gen_bool(0.25);
                    let v = if clear {
                        Value::Null
                    } else {
                        random_value(&mut rng, &col.kind)
                    };
                    values.insert(col.names.choose(&mut rng).unwrap().clone(), v.clone());
                    let row = oracle.rows.get_mut(&rid).unwrap();
                    if clear {
                        row.remove(col.key);
                    } else {
                        row.insert(col.key, v);
                    }
                }
                catalog
                    .update(&rid.parse().unwrap(), values, &who)
                    .map_err(|e| format!("update: {e}"))?;
                updates += 1;
            } else {
                let rid = live.choose(&mut rng).unwrap().clone();
                catalog
                    .delete(&rid.parse().unwrap(), &who)
                    .map_err(|e| format!("delete: {e}"))?;
                oracle.rows.remove(&rid);
                deletes += 1;
            }
        }
        let snapshot = catalog.snapshot();
        ensure!(
            !states.contains_key(&snapshot),
            "operation {op} did not advance the snapshot"
        );
        states.insert(snapshot, oracle.clone());
    }
    let last = catalog.snapshot();
    drop(catalog);
    // Everything below runs against the log as replayed by a fresh process.
    let catalog = Catalog::open(&log, CatalogOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        catalog.snapshot() == last,
        "replay ends at {} instead of {last}",
        catalog.snapshot()
    );

    for (snapshot, state) in &states {
        let query = Query {
            snapshot: Some(*snapshot),
            ..Query::table("Lab:Sample")
        };
        let live = live_rows(&catalog, &query, &who)?;
        ensure!(
            live == state.render(),
            "snapshot {snapshot} differs from replay"
        );
    }
    let final_state = &states[&last];
    for (snapshot, name, value) in &phrased {
        let then = &states[snapshot];
        for pinned in [Some(*snapshot), None] {
            let query = Query {
                filters: vec![Filter::new(name, FilterOp::Eq, value.clone())],
                snapshot: pinned,
                ..Query::table("Lab:Sample")
            };
            let got: BTreeSet<String> = live_rows(&catalog, &query, &who)?.into_keys().collect();
            let wanted = match pinned {
                Some(_) => then.matching("Note", value),
                None => final_state.matching("Note", value),
            };
            ensure!(
                got == wanted,
                "`{name} = {value}` at {pinned:?}: got {got:?}, wanted {wanted:?}"
            );
        }
    }
    Ok(format!(
        "{} snapshots ({inserts} inserts, {updates} updates, {deletes} tombstones, 7 model changes); {} old-name queries",
        states.len(),
        phrased.len()
    ))
}

const STATUS_FIXTURE: &str = "\
Experiment,Status
e01,completed
e02,Completed
e03,COMPLETED
e04,  completed
e05,complete
e06,Complete
e07,done
e08,DONE
e09,finished
e10,Finished.
e11,compl.
e12,complted
";

fn vocabulary_closure() -> Outcome {
    let who = Principal::new("curator", &[]);
    let catalog = Catalog::in_memory(CatalogOptions::default());
    catalog
        .apply_model_change(
            change(json!({"change": "add_vocabulary", "table": "Vocab:Status", "terms": [
                {"canonical": "completed", "synonyms": ["complete", "done", "finished", "finished.", "compl.", "complted"]},
                {"canonical": "running"}]})),
            &who,
        )
        .unwrap();
    catalog
        .apply_model_change(
            change(
                json!({"change": "add_table", "table": "Lab:Experiment", "columns": [
                {"name": "Experiment", "type": "text"},
                {"name": "Status", "type": "term", "vocabulary": "Vocab:Status"}]}),
            ),
            &who,
        )
        .unwrap();
    let table = TableRef::parse("Lab:Experiment").unwrap();
    let mut lines = STATUS_FIXTURE.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut raw = BTreeSet::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        raw.insert(cells[1]);
        let values = header
            .iter()
            .zip(&cells)
            .map(|(h, c)| (h.to_string(), json!(c)))
            .collect();
        catalog
            .insert(&table, values, &who)
            .map_err(|e| format!("{line}: {e}"))?;
    }
    ensure!(raw.len() == 12, "fixture has {} spellings", raw.len());
    let query = Query {
        facets: vec![Filter::new("Status", FilterOp::Any, Value::Null)],
        ..Query::table("Lab:Experiment")
    };
    let result = catalog.query(&query, &who).map_err(|e| e.to_string())?;
    let stored: BTreeSet<String> = result
        .rows
        .iter()
        .map(|r| r.values["Status"].to_string())
        .collect();
    ensure!(
        stored == BTreeSet::from([json!("completed").to_string()]),
        "stored values {stored:?}"
    );
    let facet = &result.facets["Status"];
    ensure!(facet.len() == 1 && facet[0].count == 12, "facet {facet:?}");
    Ok("12 spellings stored as 1 value".into())
}

// ---------------------------------------------------------------- flows

const PIPELINE: &str = r#"{
  "name": "publish",
  "on_error": {"retry": {"max": 2}},
  "params": ["file"],
  "steps": [
    {"name": "capture", "kind": "ingest_file", "inputs": {"file": "params.file"}},
    {"name": "checksum", "kind": "compute_checksum", "inputs": {"file": "capture.url"}},
    {"name": "describe", "kind": "extract_metadata", "inputs": {"file": "capture.url"}},
    {"name": "package", "kind": "build_bag", "inputs": {"file": "capture.url", "metadata": "describe.metadata"}},
    {"name": "qc", "kind": "quality_check", "params": {"predicate": "length > 0 && exists(bag)"},
     "inputs": {"length": "checksum.length", "bag": "package.bag"}},
    {"name": "mint", "kind": "mint_id", "params": {"title": "instrument capture"},
     "inputs": {"digest": "package.digest", "location": "package.bag"}},
    {"name": "catalog", "kind": "register_record", "params": {"table": "Lab:Image"},
     "inputs": {"URL": "capture.url", "Checksum": "checksum.digest", "Length": "checksum.length", "Minid": "mint.id"}}
  ]
}"#;

/// Local services that stop dead at a chosen point, as a killed process
/// would.
struct Killable {
    local: LocalServices,
    stop_at: Mutex<Option<(String, Phase)>>,
    stopped: Mutex<bool>,
}

impl FlowServices for Killable {
    fn read_source(&self, location: &str) -> Result<Vec<u8>, String> {
        self.local.read_source(location)
    }
    fn store(&self, name: &str, bytes: &[u8]) -> Result<String, String> {
        self.local.store(name, bytes)
    }
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String> {
        self.local.fetch(url)
    }
    fn mint(&self, request: &MintRequest, key: &str) -> Result<MinidRecord, String> {
        self.local.mint(request, key)
    }
    fn register(
        &self,
        table: &TableRef,
        values: Map<String, Value>,
        key: &str,
    ) -> Result<(IdString, String), String> {
        self.local.register(table, values, key)
    }
    fn extractor(&self, name: &str) -> Option<Arc<dyn Extractor>> {
        self.local.extractor(name)
    }
    fn checkpoint(&self, step: &str, phase: Phase) -> Result<(), Interrupted> {
        let mut stop = self.stop_at.lock().unwrap();
        if stop.as_ref().is_some_and(|(s, p)| s == step && *p == phase) {
            *stop = None;
            *self.stopped.lock().unwrap() = true;
            return Err(Interrupted);
        }
        Ok(())
    }
}

/// Registry, catalog and run log of one data directory, opened fresh.
struct Process {
    registry: Arc<Registry>,
    catalog: Arc<Catalog>,
    engine: FlowEngine,
    services: Killable,
}

impl Process {
    fn start(root: &Path, stop_at: Option<(String, Phase)>) -> Process {
        let registry = Arc::new(
            Registry::open(&root.join("registry.log"), RegistryOptions::default()).unwrap(),
        );
        let catalog =
            Arc::new(Catalog::open(&root.join("catalog.log"), CatalogOptions::default()).unwrap());
        let who = Principal::new("flow", &[]);
        if catalog
            .model()
            .table(&TableRef::parse("Lab:Image").unwrap())
            .is_none()
        {
            catalog
                .apply_model_change(
                    change(
                        json!({"change": "add_table", "table": "Lab:Image", "kind": "asset",
                                  "columns": [{"name": "Minid", "type": "identifier"}]}),
                    ),
                    &who,
                )
                .unwrap();
        }
        let engine =
            FlowEngine::open(&root.join("flows.log"), FlowEngineOptions::default()).unwrap();
        let local = LocalServices::new(
            &root.join("storage"),
            registry.clone(),
            catalog.clone(),
            who,
        );
        Process {
            registry,
            catalog,
            engine,
            services: Killable {
                local,
                stop_at: Mutex::new(stop_at),
                stopped: Mutex::new(false),
            },
        }
    }
}

fn flow_idempotency() -> Outcome {
    let flow = define_flow(PIPELINE).map_err(|e| e.to_string())?;
    ensure!(
        flow.steps.len() == 7,
        "pipeline has {} steps",
        flow.steps.len()
    );
    let image_table = TableRef::parse("Lab:Image").unwrap();
    let who = Principal::new("auditor", &[]);
    let mut kills = 0;
    for step in &flow.steps {
        for phase in [Phase::BeforeWork, Phase::AfterEffect] {
            let dir = tempdir();
            let root = dir.path();
            let file = root.join("img001.tif");
            std::fs::write(&file, b"II*\0 capture from the instrument").unwrap();
            let params = obj(json!({"file": file.to_string_lossy()}));

            let first = Process::start(root, Some((step.name.clone(), phase)));
            let result = first
                .engine
                .run_flow(&flow, params.clone(), &first.services);
            let stopped = *first.services.stopped.lock().unwrap();
            if !stopped {
                // This step has no external effect to stop after.
                ensure!(phase == Phase::AfterEffect, "{}: never reached", step.name);
                ensure!(
                    result.is_ok_and(|r| r.status == RunStatus::Completed),
                    "{}: run without a kill failed",
                    step.name
                );
                continue;
            }
            ensure!(
                matches!(&result, Err(FlowError::Interrupted(s)) if *s == step.name),
                "{} {phase:?}: run ended with {:?}",
                step.name,
                result.map(|r| r.status)
            );
            let run_id = first.engine.runs()[0].clone();
            drop(first);
            kills += 1;

            let second = Process::start(root, None);
            let run = second
                .engine
                .resume_flow(&run_id, &second.services)
                .map_err(|e| format!("{} {phase:?}: resume failed: {e}", step.name))?;
            ensure!(
                run.status == RunStatus::Completed,
                "{} {phase:?}: resumed to {:?}",
                step.name,
                run.status
            );
            check_audit(&run.audit).map_err(|e| format!("{} {phase:?}: {e}", step.name))?;
            let fails = run
                .audit
                .iter()
                .filter(|e| e.action == Action::Fail)
                .count();
            ensure!(fails == 1, "{} {phase:?}: {fails} fail events", step.name);
            ensure!(
                second.registry.id_count() == 1,
                "{} {phase:?}: {} ids minted",
                step.name,
                second.registry.id_count()
            );
            let rows = second
                .catalog
                .query(&Query::table("Lab:Image"), &who)
                .map_err(|e| e.to_string())?;
            ensure!(
                rows.total == 1,
                "{} {phase:?}: {} records in {image_table}",
                step.name,
                rows.total
            );
            let minid = run.outputs("mint").unwrap()["id"].clone();
            ensure!(
                rows.rows[0].values["Minid"] == minid,
                "{} {phase:?}: record points elsewhere",
                step.name
            );
        }
    }
    Ok(format!(
        "{kills} kill points across 7 steps, one id and one RID each"
    ))
}

// ----------------------------------------------------------- end to end

struct Fair {
    url: String,
    token: String,
}

impl Fair {
    fn run(&self, args: &[&str]) -> Result<Value, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_fair"))
            .args(["--json", "--url", &self.url, "--token", &self.token])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        if !out.status.success() {
            return Err(format!("fair {}: {text}", args.join(" ")));
        }
        serde_json::from_str(&text).map_err(|e| format!("fair {}: {e}: {text}", args.join(" ")))
    }

    fn offline(args: &[&str]) -> Result<Value, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_fair"))
            .arg("--json")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        if !out.status.success() {
            return Err(format!("fair {}: {text}", args.join(" ")));
        }
        serde_json::from_str(&text).map_err(|e| format!("fair {}: {e}: {text}", args.join(" ")))
    }
}

fn rid_of(value: &Value) -> String {
    value["RID"].as_str().unwrap_or_default().to_string()
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempdir();
    let root = dir.path();
    let data = root.join("data");
    let d = data.to_str().unwrap();
    let token = Fair::offline(&["init", d])?["admin_token"]
        .as_str()
        .unwrap()
        .to_string();

    let mut server = Command::new(env!("CARGO_BIN_EXE_fair"))
        .args(["serve", "--data-dir", d, "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_default()
        .to_string();
    let fair = Fair { url, token };
    let result = scenario(&fair, root);
    let _ = server.kill();
    let _ = server.wait();
    let evidence = result?;
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(evidence)
}

fn write_json(path: &Path, value: &Value) -> PathBuf {
    std::fs::write(path, value.to_string()).unwrap();
    path.to_path_buf()
}

fn scenario(fair: &Fair, root: &Path) -> Outcome {
    let s = |p: &Path| p.to_string_lossy().into_owned();
    for (i, model) in [
        json!({"change": "add_vocabulary", "table": "Vocab:Species", "terms": [
            {"canonical": "Danio rerio", "synonyms": ["zebrafish"]}]}),
        json!({"change": "add_table", "table": "Lab:Protocol", "columns": [
            {"name": "Title", "type": "text", "nullable": false}, {"name": "Description", "type": "text"}]}),
        json!({"change": "add_table", "table": "Lab:Subject", "columns": [
            {"name": "Name", "type": "text", "nullable": false},
            {"name": "Species", "type": "term", "vocabulary": "Vocab:Species"},
            {"name": "Protocol", "type": "identifier"}],
            "foreign_keys": [{"columns": ["Protocol"], "table": "Lab:Protocol", "ref_columns": ["RID"]}]}),
        json!({"change": "add_table", "table": "Lab:Image", "kind": "asset", "columns": [
            {"name": "Subject", "type": "identifier"}, {"name": "Minid", "type": "identifier"}],
            "foreign_keys": [{"columns": ["Subject"], "table": "Lab:Subject", "ref_columns": ["RID"]}]}),
    ]
    .iter()
    .enumerate()
    {
        let file = write_json(&root.join(format!("model{i}.json")), model);
        fair.run(&["catalog", "model", "--apply", &s(&file)])?;
    }

    let protocol = rid_of(&fair.run(&[
        "catalog",
        "insert",
        "Lab:Protocol",
        "--set",
        "Title=Synapse imaging",
        "--set",
        "Description=two-photon, 4 dpf",
    ])?);
    let mut subjects = Vec::new();
    for name in ["fish-1", "fish-2", "fish-3"] {
        let row = fair.run(&[
            "catalog",
            "insert",
            "Lab:Subject",
            "--set",
            &format!("Name={name}"),
            "--set",
            "Species=zebrafish",
            "--set",
            &format!("Protocol={protocol}"),
        ])?;
        ensure!(
            row["values"]["Species"] == "Danio rerio",
            "species stored as {}",
            row["values"]["Species"]
        );
        subjects.push(rid_of(&row));
    }

    let flow = json!({
        "name": "ingest-image",
        "params": ["file", "subject"],
        "steps": [
            {"name": "ingest", "kind": "ingest_file", "inputs": {"file": "params.file"}},
            {"name": "checksum", "kind": "compute_checksum", "inputs": {"file": "ingest.url"}},
            {"name": "describe", "kind": "extract_metadata", "inputs": {"file": "ingest.url"}},
            {"name": "qc", "kind": "quality_check", "params": {"predicate": "length > 0"},
             "inputs": {"length": "checksum.length"}},
            {"name": "package", "kind": "build_bag", "inputs": {"file": "ingest.url", "metadata": "describe.metadata"}},
            {"name": "mint", "kind": "mint_id", "inputs": {"digest": "package.digest", "location": "package.bag"}},
            {"name": "register", "kind": "register_record", "params": {"table": "Lab:Image"},
             "inputs": {"URL": "ingest.url", "Checksum": "checksum.digest", "Length": "checksum.length",
                        "Minid": "mint.id", "Subject": "params.subject"}}
        ]
    });
    let flow_file = write_json(&root.join("ingest.flow"), &flow);
    fair.run(&["flow", "define", &s(&flow_file)])?;
    let mut images = BTreeMap::new();
    for (i, subject) in subjects.iter().enumerate() {
        let bytes = format!("II*\0 stack {i} of the synapse time series").into_bytes();
        let file = root.join(format!("img00{}.tif", i + 1));
        std::fs::write(&file, &bytes).unwrap();
        let run = fair.run(&[
            "flow",
            "run",
            "ingest-image",
            "--param",
            &format!("file={}", s(&file)),
            "--param",
            &format!("subject={subject}"),
        ])?;
        ensure!(run["status"] == "completed", "flow run {i}: {run}");
        images.insert(
            file.file_name().unwrap().to_string_lossy().into_owned(),
            bytes,
        );
    }
    let listed = fair.run(&["catalog", "query", "Lab:Image", "--facet", "Subject"])?;
    ensure!(
        listed["total"] == 3,
        "{} images catalogued",
        listed["total"]
    );

    let archive = root.join("dataset.tar");
    let exported = fair.run(&[
        "catalog",
        "export",
        &protocol,
        "--inbound",
        "2",
        "--title",
        "Synapse imaging dataset",
        "--out",
        &s(&archive),
    ])?;
    let minid = exported["minid"]["id"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let bytes = std::fs::read(&archive).map_err(|e| e.to_string())?;
    ensure!(
        exported["minid"]["checksum"]["digest"] == Algorithm::Sha256.digest(&bytes),
        "archive digest does not match the identifier checksum"
    );

    let materialized = root.join("dataset");
    let done = fair.run(&[
        "bag",
        "materialize",
        &s(&archive),
        "--out",
        &s(&materialized),
    ])?;
    ensure!(
        done["report"]["is_valid"] == true,
        "materialized bag: {}",
        done["report"]
    );
    let validated = fair.run(&["bag", "validate", &s(&materialized)])?;
    ensure!(validated["is_valid"] == true, "validation: {validated}");
    let bag = read_bag(&materialized).map_err(|e| e.to_string())?;
    let mut found = 0;
    for entry in bag.payload() {
        let name = entry.path.as_str().rsplit('/').next().unwrap();
        if let Some(original) = images.get(name) {
            ensure!(
                &entry.data == original,
                "{name} differs from the ingested file"
            );
            found += 1;
        }
    }
    ensure!(found == 3, "{found} of 3 images in the dataset");

    let record = fair.run(&["id", "resolve", &minid])?;
    ensure!(
        record["title"] == "Synapse imaging dataset",
        "resolved {record}"
    );
    let landing = ureq::get(&format!("{}/v1/id/{minid}", fair.url))
        .set("Accept", "text/html")
        .call()
        .map_err(|e| format!("landing page: {e}"))?
        .into_string()
        .unwrap_or_default();
    ensure!(
        landing.contains(&minid),
        "landing page does not name {minid}"
    );
    let location = record["locations"][0].as_str().unwrap_or_default();
    let served = Resolvers::with_defaults()
        .fetch(location)
        .map_err(|e| e.to_string())?;
    ensure!(
        served == bytes,
        "the identifier's location does not serve the archive"
    );

    let cited = fair.run(&["catalog", "query", &format!("Lab:Protocol/RID={protocol}")])?;
    let citation = format!("{}/v1/catalog/entity/{protocol}", fair.url);
    let resolved: Value = serde_json::from_str(
        &ureq::get(&citation)
            .call()
            .map_err(|e| format!("{citation}: {e}"))?
            .into_string()
            .unwrap(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        resolved["citation"] == citation,
        "citation resolves to {resolved}"
    );
    ensure!(cited["total"] == 1, "protocol query {cited}");
    Ok(format!(
        "protocol, 3 subjects, 3 flow-ingested images, dataset {minid}"
    ))
}
