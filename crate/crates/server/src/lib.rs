//! HTTP services over a fairkit data directory: identifier minting and
//! resolution, catalog model, entity, query and export routes, and flow
//! execution. All routes live under `/v1` and exchange JSON; failures carry
//! an [`ApiError`] body.

mod datadir;
mod error;
mod html;
pub mod ops;
mod routes;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fairkit::catalog::{Access, CatalogError};
use fairkit::flows::FlowError;
use fairkit::idspace::IdError;
use thiserror::Error;
use tokio::sync::oneshot;

pub use datadir::{AclFile, Config, DataDir, InitReport, ACL_FILE, CONFIG_FILE};
pub use error::{status_for, ApiError};
pub use routes::{route_table, router, Route, IDEMPOTENCY_KEY};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {detail}")]
    BindFailure { addr: String, detail: String },
    #[error("{} is not empty", .0.display())]
    NotEmpty(PathBuf),
    #[error("{} is not an initialized data directory", .0.display())]
    NotInitialized(PathBuf),
    #[error("{} is in use by another process", .0.display())]
    Locked(PathBuf),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown bearer token")]
    Unauthorized,
    #[error("{actor} lacks {needed:?} access to the catalog")]
    Forbidden { actor: String, needed: Access },
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::BindFailure { .. } => "BindFailure",
            ServerError::NotEmpty(_) => "NotEmpty",
            ServerError::NotInitialized(_) => "NotInitialized",
            ServerError::Locked(_) => "Locked",
            ServerError::Config(_) => "ConfigError",
            ServerError::Io(_) => "IoFailure",
            ServerError::Unauthorized => "Unauthorized",
            ServerError::Forbidden { .. } => "Forbidden",
            ServerError::Id(e) => e.code(),
            ServerError::Catalog(e) => e.code(),
            ServerError::Flow(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeConfig {
    /// `host:port`; the data directory's configured address when absent.
    pub bind: Option<String>,
    pub data_dir: PathBuf,
    /// Overrides `<data_dir>/acl.json`.
    pub acl_file: Option<PathBuf>,
}

impl ServeConfig {
    pub fn new(data_dir: &Path) -> Self {
        ServeConfig {
            bind: None,
            data_dir: data_dir.to_path_buf(),
            acl_file: None,
        }
    }

    pub fn bind(mut self, addr: &str) -> Self {
        self.bind = Some(addr.to_string());
        self
    }
}

/// A running service. Dropping the handle leaves it running; call
/// [`ServerHandle::shutdown`] to stop it.
pub struct ServerHandle {
    addr: SocketAddr,
    base_url: String,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port`, the prefix of every route and citation URL.
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Stops accepting connections, lets in-flight requests finish and
    /// releases the data directory.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    /// Blocks until the service stops.
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn stop_and_join(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Binds the listener, replays the data directory's logs and starts
/// serving on a background thread.
pub fn serve(config: &ServeConfig) -> Result<ServerHandle, ServerError> {
    let configured = if config.data_dir.join(CONFIG_FILE).is_file() {
        let bytes = std::fs::read(config.data_dir.join(CONFIG_FILE))
            .map_err(|e| ServerError::Io(e.to_string()))?;
        serde_json::from_slice::<Config>(&bytes).map_err(|e| ServerError::Config(e.to_string()))?
    } else {
        return Err(ServerError::NotInitialized(config.data_dir.clone()));
    };
    let addr = config.bind.clone().unwrap_or(configured.bind.clone());
    let listener = std::net::TcpListener::bind(&addr).map_err(|e| ServerError::BindFailure {
        addr: addr.clone(),
        detail: e.to_string(),
    })?;
    let bound = listener
        .local_addr()
        .map_err(|e| ServerError::Io(e.to_string()))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| ServerError::Io(e.to_string()))?;
    let base_url = configured
        .base_url
        .clone()
        .unwrap_or_else(|| format!("http://{bound}"));
    let data = DataDir::open_with(
        &config.data_dir,
        config.acl_file.as_deref(),
        Some(&base_url),
    )?;
    let app = router(Arc::new(data));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServerError::Io(e.to_string()))?;
    let listener = {
        let _guard = runtime.enter();
        tokio::net::TcpListener::from_std(listener).map_err(|e| ServerError::Io(e.to_string()))?
    };
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("fair-serve".into())
        .spawn(move || {
            runtime.block_on(async move {
                let shutdown = async {
                    let _ = stopped.await;
                };
                if let Err(e) = axum::serve(listener, app)
                    .with_graceful_shutdown(shutdown)
                    .await
                {
                    eprintln!("server stopped: {e}");
                }
            });
        })
        .map_err(|e| ServerError::Io(e.to_string()))?;
    Ok(ServerHandle {
        addr: bound,
        base_url,
        stop: Some(stop),
        thread: Some(thread),
    })
}
