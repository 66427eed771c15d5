//! The on-disk layout shared by `fair serve` and offline CLI use.
//!
//! ```text
//! <root>/config.json    namespaces, base URL, bind address
//! <root>/acl.json       bearer tokens and the access policy
//! <root>/registry.log   identifier records
//! <root>/catalog.log    catalog operations
//! <root>/flows.log      flow definitions, runs and audit events
//! <root>/storage/       content-addressed files written by flows and exports
//! <root>/.lock          held while the directory is open
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions, TryLockError};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fairkit::catalog::{Access, AclPolicy, Catalog, CatalogOptions, Principal};
use fairkit::flows::{FlowEngine, FlowEngineOptions, LocalServices};
use fairkit::idspace::{Registry, RegistryOptions};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::ServerError;

pub const CONFIG_FILE: &str = "config.json";
pub const ACL_FILE: &str = "acl.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Namespace of catalog RIDs.
    #[serde(default = "default_catalog_namespace")]
    pub catalog_namespace: String,
    /// Namespace used when a mint request names none.
    #[serde(default = "default_id_namespace")]
    pub id_namespace: String,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Prefix of citation URLs. Derived from the bind address when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

fn default_catalog_namespace() -> String {
    "CAT".into()
}

fn default_id_namespace() -> String {
    "MINID".into()
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

impl Default for Config {
    fn default() -> Self {
        Config {
            catalog_namespace: default_catalog_namespace(),
            id_namespace: default_id_namespace(),
            bind: default_bind(),
            base_url: None,
        }
    }
}

/// Bearer tokens and the rights their principals hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AclFile {
    /// Who a request without a token acts as.
    #[serde(default = "Principal::anonymous")]
    pub anonymous: Principal,
    #[serde(default)]
    pub tokens: BTreeMap<String, Principal>,
    #[serde(default)]
    pub policy: AclPolicy,
}

impl AclFile {
    pub fn principal_for(&self, token: Option<&str>) -> Result<Principal, ServerError> {
        match token {
            None => Ok(self.anonymous.clone()),
            Some(t) => self.tokens.get(t).cloned().ok_or(ServerError::Unauthorized),
        }
    }
}

/// Result of [`DataDir::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub root: PathBuf,
    /// Token of the `admin` principal written to `acl.json`.
    pub admin_token: String,
}

/// An opened data directory. Holds an exclusive lock until dropped.
pub struct DataDir {
    root: PathBuf,
    config: Config,
    acl: AclFile,
    base_url: String,
    pub registry: Arc<Registry>,
    pub catalog: Arc<Catalog>,
    pub flows: Arc<FlowEngine>,
    _lock: File,
}

impl std::fmt::Debug for DataDir {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataDir").field("root", &self.root).finish()
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ServerError + '_ {
    move |e| ServerError::Io(format!("{}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ServerError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ServerError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("config serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io(path))
}

impl DataDir {
    /// Lays out a fresh data directory. The directory must be empty or
    /// absent.
    pub fn init(root: &Path) -> Result<InitReport, ServerError> {
        if root.exists() {
            let mut entries = std::fs::read_dir(root).map_err(io(root))?;
            if entries.next().is_some() {
                return Err(ServerError::NotEmpty(root.to_path_buf()));
            }
        }
        std::fs::create_dir_all(root.join("storage")).map_err(io(root))?;
        let mut bytes = [0u8; 24];
        rand::thread_rng().fill_bytes(&mut bytes);
        let admin_token = hex::encode(bytes);
        let acl = AclFile {
            anonymous: Principal::anonymous(),
            tokens: BTreeMap::from([(admin_token.clone(), Principal::new("admin", &["admin"]))]),
            policy: AclPolicy::uniform(Access::Read).grant("admin", Access::ModelChange),
        };
        write_json(&root.join(CONFIG_FILE), &Config::default())?;
        write_json(&root.join(ACL_FILE), &acl)?;
        for log in ["registry.log", "catalog.log", "flows.log"] {
            let path = root.join(log);
            File::create(&path).map_err(io(&path))?;
        }
        Ok(InitReport {
            root: root.to_path_buf(),
            admin_token,
        })
    }

    /// Opens an initialized directory, replaying its logs.
    pub fn open(root: &Path) -> Result<DataDir, ServerError> {
        DataDir::open_with(root, None, None)
    }

    /// Like [`DataDir::open`], with the ACL read from `acl_file` instead of
    /// `acl.json` and citation URLs rooted at `base_url` when given.
    pub fn open_with(
        root: &Path,
        acl_file: Option<&Path>,
        base_url: Option<&str>,
    ) -> Result<DataDir, ServerError> {
        let config_path = root.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(ServerError::NotInitialized(root.to_path_buf()));
        }
        let lock_path = root.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(ServerError::Locked(root.to_path_buf())),
            Err(TryLockError::Error(e)) => return Err(io(&lock_path)(e)),
        }

        let config: Config = read_json(&config_path)?;
        let acl: AclFile = read_json(acl_file.unwrap_or(&root.join(ACL_FILE)))?;
        let base_url = base_url
            .map(str::to_string)
            .or_else(|| config.base_url.clone())
            .unwrap_or_else(|| format!("http://{}", config.bind));
        let registry = Registry::open(&root.join("registry.log"), RegistryOptions::default())?;
        let catalog = Catalog::open(
            &root.join("catalog.log"),
            CatalogOptions {
                namespace: config.catalog_namespace.clone(),
                base_url: base_url.clone(),
                acl: acl.policy.clone(),
                ..CatalogOptions::default()
            },
        )?;
        let flows = FlowEngine::open(&root.join("flows.log"), FlowEngineOptions::default())?;
        Ok(DataDir {
            root: root.to_path_buf(),
            config,
            acl,
            base_url,
            registry: Arc::new(registry),
            catalog: Arc::new(catalog),
            flows: Arc::new(flows),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn acl(&self) -> &AclFile {
        &self.acl
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn storage(&self) -> PathBuf {
        self.root.join("storage")
    }

    pub fn principal_for(&self, token: Option<&str>) -> Result<Principal, ServerError> {
        self.acl.principal_for(token)
    }

    /// Fails with `Forbidden` unless `who` holds `needed` catalog-wide.
    pub fn require(&self, who: &Principal, needed: Access) -> Result<(), ServerError> {
        if self.acl.policy.allows(who, None, needed) {
            Ok(())
        } else {
            Err(ServerError::Forbidden {
                actor: who.name.clone(),
                needed,
            })
        }
    }

    /// Flow services acting as `who`.
    pub fn services_for(&self, who: Principal) -> LocalServices {
        LocalServices::new(
            &self.storage(),
            self.registry.clone(),
            self.catalog.clone(),
            who,
        )
    }

    /// Stores `bytes` under `storage/` by content and returns the path.
    pub fn store(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, ServerError> {
        let dir = self
            .storage()
            .join(fairkit::bag::Algorithm::Sha256.digest(bytes));
        let path = dir.join(name);
        if !path.is_file() {
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
            std::fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(path)
    }
}
