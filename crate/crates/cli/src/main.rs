//! `fair`: bags, identifiers, catalog and flows from the command line.
//!
//! Catalog, identifier and flow commands run either against a local data
//! directory (`--data-dir`) or a running service (`--url`). Both give the
//! same JSON for the same state. Bag commands only touch local files.

mod backend;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairkit::bag::{
    check, create_bag, materialize_in_place, read_bag, write_bag, Algorithm, BagValidationReport,
    CheckLevel, Destination, Resolvers,
};
use fairkit::catalog::{Filter, FilterOp, ModelChange, Principal, Query, TableRef};
use fairkit::clock::Timestamp;
use fairkit::flows::{define_flow, FlowDef};
use fairkit::idspace::{Checksum, MintRequest};
use fairkit_server::ops::{ExportBody, FlowRef, LocationsBody, RunBody, UpdateBody, UpgradeBody};
use fairkit_server::{serve, ApiError, DataDir, ServeConfig};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use backend::{Backend, Remote};

#[derive(Parser)]
#[command(
    name = "fair",
    version,
    about = "FAIR research data: bags, identifiers, catalog and flows"
)]
struct Cli {
    /// JSON file with default `url`, `data_dir`, `token` and `json` settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print canonical JSON only.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, env = "FAIR_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Base URL of a running service.
    #[arg(long, global = true, env = "FAIR_URL")]
    url: Option<String>,
    /// Local data directory (offline mode).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create, check and transform bags.
    #[command(subcommand)]
    Bag(BagCommand),
    /// Mint and maintain identifiers.
    #[command(subcommand)]
    Id(IdCommand),
    /// Model, records, queries and exports.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Define, run and inspect publication flows.
    #[command(subcommand)]
    Flow(FlowCommand),
    /// Lay out a new data directory.
    Init {
        /// Defaults to `--data-dir`.
        dir: Option<PathBuf>,
    },
    /// Serve a data directory over HTTP until interrupted.
    Serve {
        /// `host:port`; the directory's configured address by default.
        #[arg(long)]
        bind: Option<String>,
        /// Token and policy file replacing `acl.json`.
        #[arg(long)]
        acl: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BagCommand {
    /// Package a directory's files as a bag.
    Create {
        source: PathBuf,
        /// Directory, `.zip` or `.tar`.
        dest: PathBuf,
        #[arg(long = "algorithm", default_value = "sha256")]
        algorithms: Vec<String>,
        /// `Label=Value` for bag-info.txt.
        #[arg(long = "info")]
        info: Vec<String>,
    },
    /// Check a bag directory or archive.
    Validate {
        path: PathBuf,
        /// Only check that every file is present, without recomputing digests.
        #[arg(long)]
        complete: bool,
    },
    /// Move payload files into fetch.txt, pointing at `<base-url>/<path>`.
    Holey {
        source: PathBuf,
        dest: PathBuf,
        #[arg(long)]
        base_url: String,
        /// Also copy the payload under this directory, laid out to match
        /// the URLs.
        #[arg(long)]
        copy_to: Option<PathBuf>,
    },
    /// Fetch and verify every fetch.txt entry.
    Materialize {
        path: PathBuf,
        /// Where to write the complete bag; required for archives. A
        /// directory is completed in place when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a bag as a deterministic `.zip` or `.tar`.
    Archive { source: PathBuf, dest: PathBuf },
}

#[derive(Subcommand)]
enum IdCommand {
    /// Mint an identifier for content given by file or checksum.
    Mint {
        #[arg(
            long,
            conflicts_with = "checksum",
            required_unless_present = "checksum"
        )]
        file: Option<PathBuf>,
        /// `algorithm:hex`, e.g. `sha256:ab12…`.
        #[arg(long)]
        checksum: Option<String>,
        #[arg(long = "location", required = true)]
        locations: Vec<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        namespace: Option<String>,
        #[arg(long)]
        creator: Option<String>,
        /// Repeating a mint with the same key returns the same identifier.
        #[arg(long)]
        key: Option<String>,
    },
    /// Show the record behind an identifier
    Resolve { id: String },
    /// Replace an identifier's locations.
    Update {
        id: String,
        #[arg(long = "location", required = true)]
        locations: Vec<String>,
    },
    /// Mark an identifier superseded by a DOI.
    Upgrade { id: String, doi: String },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Show the model, or apply a change read from a JSON file (`-` for stdin).
    Model {
        #[arg(long)]
        snapshot: Option<u64>,
        #[arg(long)]
        apply: Option<PathBuf>,
    },
    /// Insert records into `Schema:Table`.
    Insert {
        table: String,
        #[command(flatten)]
        values: ValueArgs,
        /// CSV file with a header row; one record per row, empty cells left out.
        #[arg(long, conflicts_with_all = ["set", "values"])]
        csv: Option<PathBuf>,
        #[arg(long)]
        key: Option<String>,
    },
    /// Change columns of an existing record.
    Update {
        rid: String,
        #[command(flatten)]
        values: ValueArgs,
        /// Fail if the record was modified after this RMT.
        #[arg(long)]
        rmt: Option<String>,
    },
    /// Query `Schema:Table[/col=value][/Schema:Table…]`.
    Query {
        path: String,
        /// `column:op[:value]`, repeatable.
        #[arg(long = "filter")]
        filters: Vec<String>,
        /// A column name, or `column:op:value` to also restrict rows.
        #[arg(long = "facet")]
        facets: Vec<String>,
        #[arg(long)]
        snapshot: Option<u64>,
        #[arg(long)]
        after: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Export records and what they link to as an identified bag archive.
    Export {
        #[arg(required = true)]
        roots: Vec<String>,
        /// Archive file to write; `<suffix>.tar` by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, default_value_t = 1)]
        inbound: u32,
        #[arg(long)]
        outbound: Option<u32>,
        #[arg(long)]
        namespace: Option<String>,
    },
}

#[derive(Args)]
struct ValueArgs {
    /// `column=value`, repeatable.
    #[arg(long = "set")]
    set: Vec<String>,
    /// A JSON object of column values.
    #[arg(long)]
    values: Option<String>,
}

#[derive(Subcommand)]
enum FlowCommand {
    /// Store a flow from its JSON description.
    Define { file: PathBuf },
    /// Run a stored flow by name, or a flow description file.
    Run {
        flow: String,
        /// `name=value`, repeatable. Values naming an existing file are
        /// made absolute.
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Continue an interrupted or failed run
    Resume { run_id: String },
    /// Print a run's audit events
    Audit { run_id: String },
}

/// Why a command failed, and with which exit status.
pub enum Failure {
    Api(ApiError),
    Usage(String),
    Connectivity(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Api(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Connectivity(_) => 3,
        }
    }

    fn as_api(&self) -> ApiError {
        match self {
            Failure::Api(e) => e.clone(),
            Failure::Usage(detail) => ApiError::new("UsageError", detail.clone()),
            Failure::Connectivity(detail) => ApiError::new("Unreachable", detail.clone()),
        }
    }
}

impl<E: Into<ApiError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Api(e.into())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Api(ApiError::new(
        "IoFailure",
        format!("{}: {e}", path.display()),
    ))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    url: Option<String>,
    data_dir: Option<PathBuf>,
    token: Option<String>,
    #[serde(default)]
    json: bool,
}

/// Result of a command: the JSON payload, its human rendering, and
/// whether it reports a failure.
struct Output {
    value: Value,
    human: Option<String>,
    failed: bool,
}

impl Output {
    fn json(value: Value) -> Self {
        Output {
            value,
            human: None,
            failed: false,
        }
    }

    fn with_human(mut self, text: String) -> Self {
        self.human = Some(text);
        self
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let config = match &cli.config {
        None => Ok(ConfigFile::default()),
        Some(path) => std::fs::read(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
            .and_then(|b| {
                serde_json::from_slice(&b)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
            }),
    };
    let json_mode = cli.json || config.as_ref().is_ok_and(|c| c.json);
    let result = config.and_then(|config| run(&cli, config));
    let mut stdout = std::io::stdout().lock();
    match result {
        Ok(output) => {
            let text = match (json_mode, output.human) {
                (false, Some(human)) => human,
                (false, None) => serde_json::to_string_pretty(&output.value).expect("json"),
                (true, _) => serde_json::to_string(&output.value).expect("json"),
            };
            let _ = writeln!(stdout, "{text}");
            ExitCode::from(u8::from(output.failed))
        }
        Err(failure) => {
            let error = failure.as_api();
            if json_mode {
                let _ = writeln!(stdout, "{}", serde_json::to_string(&error).expect("json"));
            } else {
                eprintln!("error: {}: {}", error.code, error.detail);
            }
            ExitCode::from(failure.exit_code())
        }
    }
}

/// Flags beat environment variables, which beat the config file.
struct Target {
    url: Option<String>,
    data_dir: Option<PathBuf>,
    token: Option<String>,
}

impl Target {
    fn resolve(cli: &Cli, config: ConfigFile) -> Result<Target, Failure> {
        let url = cli.url.clone().or(config.url);
        let data_dir = cli.data_dir.clone().or(config.data_dir);
        if url.is_some() && data_dir.is_some() {
            return Err(Failure::Usage(
                "give either a service URL or a data directory, not both".into(),
            ));
        }
        Ok(Target {
            url,
            data_dir,
            token: cli.token.clone().or(config.token),
        })
    }

    fn backend(&self) -> Result<Backend, Failure> {
        match (&self.url, &self.data_dir) {
            (Some(url), None) => Ok(Backend::Remote(Remote::new(url, self.token.clone()))),
            (None, Some(dir)) => {
                let data = DataDir::open(dir)?;
                // Offline, whoever can write the directory owns it.
                let who = match &self.token {
                    Some(token) => data.principal_for(Some(token))?,
                    None => Principal::new("local", &["admin"]),
                };
                Ok(Backend::Local {
                    data: Box::new(data),
                    who,
                })
            }
            _ => Err(Failure::Usage(
                "set --url (or FAIR_URL) or --data-dir".into(),
            )),
        }
    }

    fn data_dir(&self) -> Result<&Path, Failure> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| Failure::Usage("this command needs --data-dir".into()))
    }
}

fn run(cli: &Cli, config: ConfigFile) -> Result<Output, Failure> {
    let target = Target::resolve(cli, config)?;
    match &cli.command {
        Command::Bag(command) => bag(command),
        Command::Id(command) => id(command, &target.backend()?),
        Command::Catalog(command) => catalog(command, &target.backend()?),
        Command::Flow(command) => flow(command, &target.backend()?),
        Command::Init { dir } => {
            let dir = match dir {
                Some(d) => d.as_path(),
                None => target.data_dir()?,
            };
            let report = DataDir::init(dir)?;
            let human = format!(
                "initialized {}\nadmin token: {}",
                report.root.display(),
                report.admin_token
            );
            Ok(Output::json(json!(report)).with_human(human))
        }
        Command::Serve { bind, acl } => {
            let config = ServeConfig {
                bind: bind.clone(),
                data_dir: target.data_dir()?.to_path_buf(),
                acl_file: acl.clone(),
            };
            let handle = serve(&config)?;
            let announce = if cli.json {
                json!({"listening": handle.base_url()}).to_string()
            } else {
                format!("listening on {}", handle.base_url())
            };
            println!("{announce}");
            let _ = std::io::stdout().flush();
            handle.wait();
            Ok(Output::json(json!({"stopped": true})))
        }
    }
}

fn pair<'a>(text: &'a str, what: &str) -> Result<(&'a str, &'a str), Failure> {
    text.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Failure::Usage(format!("expected {what}=value, got `{text}`")))
}

fn report_text(report: &BagValidationReport) -> String {
    if report.problems.is_empty() {
        return "valid".into();
    }
    let mut lines = vec![if report.is_complete {
        "invalid"
    } else {
        "incomplete"
    }
    .to_string()];
    for p in &report.problems {
        let path = p.path.as_deref().unwrap_or("-");
        lines.push(format!("{:?} {path} {}", p.code, p.detail));
    }
    lines.join("\n")
}

fn bag(command: &BagCommand) -> Result<Output, Failure> {
    match command {
        BagCommand::Create {
            source,
            dest,
            algorithms,
            info,
        } => {
            let algorithms = algorithms
                .iter()
                .map(|a| a.parse::<Algorithm>())
                .collect::<Result<Vec<_>, _>>()?;
            let info = info
                .iter()
                .map(|i| pair(i, "Label").map(|(l, v)| (l.to_string(), v.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let bag = create_bag(source, &algorithms, &info, None)?;
            let written = write_bag(&bag, &Destination::infer(dest), true)?;
            Ok(Output::json(json!({
                "path": written,
                "oxum": bag.computed_oxum(),
                "files": bag.payload().len(),
            })))
        }
        BagCommand::Validate { path, complete } => {
            let level = if *complete {
                CheckLevel::Complete
            } else {
                CheckLevel::Valid
            };
            let report = check(path, level);
            let ok = if *complete {
                report.is_complete
            } else {
                report.is_valid
            };
            Ok(Output {
                value: json!(report),
                human: Some(report_text(&report)),
                failed: !ok,
            })
        }
        BagCommand::Holey {
            source,
            dest,
            base_url,
            copy_to,
        } => {
            let bag = read_bag(source)?;
            if let Some(root) = copy_to {
                for file in bag.payload() {
                    let target = root.join(file.path.as_str());
                    if let Some(parent) = target.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
                    }
                    std::fs::write(&target, &file.data).map_err(|e| io_failure(&target, e))?;
                }
            }
            let base = base_url.trim_end_matches('/');
            let holey = bag.make_holey(|_| true, |p| Some(format!("{base}/{p}")))?;
            let written = write_bag(&holey, &Destination::infer(dest), true)?;
            Ok(Output::json(
                json!({"path": written, "fetch": holey.fetch().len()}),
            ))
        }
        BagCommand::Materialize { path, out } => {
            let resolvers = Resolvers::with_defaults();
            let (bag, written) = match out {
                None if path.is_dir() => (materialize_in_place(path, &resolvers)?, path.clone()),
                None => {
                    return Err(Failure::Usage(
                        "materializing an archive needs --out".into(),
                    ))
                }
                Some(out) => {
                    let bag = read_bag(path)?.materialize(&resolvers)?;
                    let written = write_bag(&bag, &Destination::infer(out), true)?;
                    (bag, written)
                }
            };
            let report = check(&written, CheckLevel::Valid);
            Ok(Output {
                value: json!({"path": written, "files": bag.payload().len(), "report": report}),
                human: Some(format!("{}: {}", written.display(), report_text(&report))),
                failed: !report.is_valid,
            })
        }
        BagCommand::Archive { source, dest } => {
            let destination = Destination::infer(dest);
            if !matches!(destination, Destination::Archive(..)) {
                return Err(Failure::Usage(
                    "the destination must end in .zip or .tar".into(),
                ));
            }
            let bag = read_bag(source)?;
            let written = write_bag(&bag, &destination, true)?;
            let bytes = std::fs::read(&written).map_err(|e| io_failure(&written, e))?;
            Ok(Output::json(json!({
                "path": written,
                "sha256": Algorithm::Sha256.digest(&bytes),
            })))
        }
    }
}

fn id(command: &IdCommand, backend: &Backend) -> Result<Output, Failure> {
    let value = match command {
        IdCommand::Mint {
            file,
            checksum,
            locations,
            title,
            namespace,
            creator,
            key,
        } => {
            let checksum = match (file, checksum) {
                (Some(path), _) => {
                    let bytes = std::fs::read(path).map_err(|e| io_failure(path, e))?;
                    Checksum::of(Algorithm::Sha256, &bytes)
                }
                (None, Some(text)) => {
                    let (algorithm, digest) = text
                        .split_once(':')
                        .ok_or_else(|| Failure::Usage("--checksum takes algorithm:hex".into()))?;
                    Checksum {
                        algorithm: algorithm.parse()?,
                        digest: digest.to_ascii_lowercase(),
                    }
                }
                (None, None) => return Err(Failure::Usage("give --file or --checksum".into())),
            };
            let request = MintRequest {
                creator: creator.clone().unwrap_or_else(|| "fair".into()),
                checksum,
                locations: locations.clone(),
                title: title.clone(),
                namespace: namespace.clone().unwrap_or_else(|| "MINID".into()),
            };
            backend.mint(&request, key.as_deref())?
        }
        IdCommand::Resolve { id } => backend.resolve_id(id)?,
        IdCommand::Update { id, locations } => backend.update_locations(
            id,
            &LocationsBody {
                locations: locations.clone(),
            },
        )?,
        IdCommand::Upgrade { id, doi } => {
            backend.upgrade_id(id, &UpgradeBody { doi: doi.clone() })?
        }
    };
    Ok(Output::json(value))
}

fn values(args: &ValueArgs) -> Result<Map<String, Value>, Failure> {
    let mut values = match &args.values {
        Some(text) => match serde_json::from_str(text) {
            Ok(Value::Object(map)) => map,
            _ => return Err(Failure::Usage("--values takes a JSON object".into())),
        },
        None => Map::new(),
    };
    for item in &args.set {
        let (column, value) = pair(item, "column")?;
        values.insert(column.to_string(), Value::String(value.to_string()));
    }
    Ok(values)
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin()).map_err(|e| io_failure(path, e))
    } else {
        std::fs::read_to_string(path).map_err(|e| io_failure(path, e))
    }
}

fn catalog(command: &CatalogCommand, backend: &Backend) -> Result<Output, Failure> {
    match command {
        CatalogCommand::Model { snapshot, apply } => match apply {
            None => Ok(Output::json(backend.model(*snapshot)?)),
            Some(_) if snapshot.is_some() => {
                Err(Failure::Usage("--apply changes the current model".into()))
            }
            Some(path) => {
                let change: ModelChange = serde_json::from_str(&read_input(path)?)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                Ok(Output::json(backend.apply_model_change(change)?))
            }
        },
        CatalogCommand::Insert {
            table,
            values: args,
            csv,
            key,
        } => {
            let table = TableRef::parse(table)?;
            let Some(path) = csv else {
                return Ok(Output::json(backend.insert(
                    &table,
                    values(args)?,
                    key.as_deref(),
                )?));
            };
            let mut reader = csv::Reader::from_path(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let header = reader
                .headers()
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
                .clone();
            let mut inserted = Vec::new();
            for (i, record) in reader.records().enumerate() {
                let record =
                    record.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                let row: Map<String, Value> = header
                    .iter()
                    .zip(record.iter())
                    .filter(|(_, cell)| !cell.is_empty())
                    .map(|(column, cell)| (column.to_string(), Value::String(cell.to_string())))
                    .collect();
                let row_key = key.as_ref().map(|k| format!("{k}/{i}"));
                inserted.push(backend.insert(&table, row, row_key.as_deref())?);
            }
            Ok(Output::json(Value::Array(inserted)))
        }
        CatalogCommand::Update {
            rid,
            values: args,
            rmt,
        } => {
            let rmt =
                match rmt {
                    None => None,
                    Some(text) => Some(Timestamp::parse(text).ok_or_else(|| {
                        Failure::Usage(format!("`{text}` is not an RFC 3339 time"))
                    })?),
                };
            let body = UpdateBody {
                values: values(args)?,
                rmt,
            };
            Ok(Output::json(backend.update_entity(rid, &body)?))
        }
        CatalogCommand::Query {
            path,
            filters,
            facets,
            snapshot,
            after,
            limit,
        } => {
            let query = Query {
                path: path.clone(),
                filters: filters
                    .iter()
                    .map(|f| Filter::parse(f))
                    .collect::<Result<_, _>>()?,
                facets: facets
                    .iter()
                    .map(|f| {
                        if f.contains(':') {
                            Filter::parse(f)
                        } else {
                            Ok(Filter::new(f, FilterOp::Any, Value::Null))
                        }
                    })
                    .collect::<Result<_, _>>()?,
                snapshot: *snapshot,
                after: after.as_deref().map(str::parse).transpose()?,
                limit: *limit,
            };
            Ok(Output::json(backend.query(&query)?))
        }
        CatalogCommand::Export {
            roots,
            out,
            title,
            inbound,
            outbound,
            namespace,
        } => {
            let body = ExportBody {
                roots: roots.iter().map(|r| r.parse()).collect::<Result<_, _>>()?,
                inbound: *inbound,
                outbound: *outbound,
                namespace: namespace.clone(),
                title: title.clone(),
                locations: Vec::new(),
                info: Vec::new(),
            };
            let outcome = backend.export(&body)?;
            let id = outcome.minid["id"].as_str().unwrap_or("export").to_string();
            let out = out.clone().unwrap_or_else(|| {
                let suffix = id.split_once(':').map_or(id.as_str(), |(_, s)| s);
                PathBuf::from(format!("{suffix}.tar"))
            });
            std::fs::write(&out, &outcome.archive).map_err(|e| io_failure(&out, e))?;
            let human = format!("{id}\n{}", out.display());
            Ok(Output::json(json!({
                "minid": outcome.minid,
                "snapshot": outcome.snapshot,
                "archive": out,
            }))
            .with_human(human))
        }
    }
}

/// The RID registered by the run's last register step.
fn final_rid(run: &Value) -> Option<&str> {
    let kinds: Vec<&str> = run["flow"]["steps"]
        .as_array()?
        .iter()
        .map(|s| s["kind"].as_str().unwrap_or_default())
        .collect();
    let steps = run["steps"].as_array()?;
    kinds
        .iter()
        .zip(steps)
        .rev()
        .find(|(kind, _)| **kind == "register_record")
        .and_then(|(_, step)| step["outputs"]["rid"].as_str())
}

fn run_output(run: Value) -> Output {
    let id = run["run_id"].as_str().unwrap_or_default().to_string();
    let status = run["status"].as_str().unwrap_or_default().to_string();
    let mut lines = vec![id];
    match status.as_str() {
        "completed" => {
            if let Some(rid) = final_rid(&run) {
                lines.push(rid.to_string());
            }
        }
        _ => lines.push(format!(
            "{status} at step {}: {}",
            run["step"].as_str().unwrap_or("?"),
            run["error"].as_str().unwrap_or_default()
        )),
    }
    Output {
        failed: status != "completed",
        human: Some(lines.join("\n")),
        value: run,
    }
}

fn flow(command: &FlowCommand, backend: &Backend) -> Result<Output, Failure> {
    match command {
        FlowCommand::Define { file } => Ok(Output::json(backend.define_flow(&read_input(file)?)?)),
        FlowCommand::Run { flow, params } => {
            let path = Path::new(flow);
            let flow = if path.is_file() {
                let def: FlowDef = define_flow(&read_input(path)?)?;
                FlowRef::Inline(Box::new(def))
            } else {
                FlowRef::Name(flow.clone())
            };
            let mut values = Map::new();
            for item in params {
                let (name, value) = pair(item, "name")?;
                let local = Path::new(value);
                let value = if local.exists() && local.is_relative() {
                    std::path::absolute(local)
                        .map_err(|e| io_failure(local, e))?
                        .to_string_lossy()
                        .into_owned()
                } else {
                    value.to_string()
                };
                values.insert(name.to_string(), Value::String(value));
            }
            Ok(run_output(backend.run_flow(&RunBody {
                flow,
                params: values,
            })?))
        }
        FlowCommand::Resume { run_id } => Ok(run_output(backend.resume_flow(run_id)?)),
        FlowCommand::Audit { run_id } => {
            let events = backend.audit(run_id)?;
            let human = events
                .as_array()
                .map(|list| {
                    list.iter()
                        .map(|e| {
                            format!(
                                "{} {:<8} {:<7} {}",
                                e["timestamp"].as_str().unwrap_or_default(),
                                e["step"].as_str().unwrap_or_default(),
                                e["action"].as_str().unwrap_or_default(),
                                e["detail"].as_str().unwrap_or_default()
                            )
                            .trim_end()
                            .to_string()
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                })
                .unwrap_or_default();
            Ok(Output::json(events).with_human(human))
        }
    }
}
