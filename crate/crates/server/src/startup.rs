//! Key and TLS resolution, store opening, and listener startup.
//!
//! Startup refuses to proceed without a master key or TLS material unless
//! `insecure_dev` is set, in which case an ephemeral key is generated and the
//! API is served over plain HTTP.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum_server::tls_rustls::RustlsConfig;
use axum_server::Handle;
use dietwise_core::profiles::SystemClock;
use dietwise_core::security::{MasterKey, SecurityError, MASTER_KEY_ENV};
use dietwise_core::store::{FileStore, KvStore, MemoryStore};
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer};
use tokio::task::JoinHandle;

use crate::config::{Config, TlsSection, TlsVersion};
use crate::http::{metrics_router, router};
use crate::service::{Service, StartupError};

#[derive(Debug, Clone, Default)]
pub struct ServeFlags {
    pub key_file: Option<PathBuf>,
    pub insecure_dev: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(
        "no master key: set {MASTER_KEY_ENV} to 64 hex characters, pass --key-file, or set security.key_file \
         (--insecure-dev generates a throwaway key)"
    )]
    MissingKey,
    #[error("master key: {0}")]
    Key(#[from] SecurityError),
    #[error(
        "no TLS material: set tls.cert_path and tls.key_path in the config (--insecure-dev serves plain HTTP)"
    )]
    MissingTls,
    #[error("TLS: {0}")]
    Tls(String),
    #[error("store: {0}")]
    Store(String),
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("listener: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySource {
    Flag,
    Environment,
    ConfigFile,
    Ephemeral,
}

/// `--key-file`, then the environment, then `security.key_file`.
pub fn resolve_master_key(config: &Config, flags: &ServeFlags) -> Result<(MasterKey, KeySource), ServeError> {
    let id = &config.security.key_id;
    let note = config.security.rotation_note.clone();
    if let Some(path) = &flags.key_file {
        return Ok((MasterKey::from_key_file(id, path)?.with_rotation_note(note), KeySource::Flag));
    }
    match MasterKey::from_env(id) {
        Ok(key) => return Ok((key.with_rotation_note(note), KeySource::Environment)),
        Err(SecurityError::MissingKey) => {}
        Err(e) => return Err(e.into()),
    }
    if let Some(path) = &config.security.key_file {
        return Ok((MasterKey::from_key_file(id, path)?.with_rotation_note(note), KeySource::ConfigFile));
    }
    if flags.insecure_dev {
        return Ok((MasterKey::generate(id)?, KeySource::Ephemeral));
    }
    Err(ServeError::MissingKey)
}

/// Builds a rustls server config with the configured minimum version.
pub fn load_tls(tls: &TlsSection) -> Result<Arc<rustls::ServerConfig>, ServeError> {
    let tls_err = |what: &str, e: &dyn std::fmt::Display| ServeError::Tls(format!("{what}: {e}"));
    let certs: Vec<CertificateDer<'static>> = CertificateDer::pem_file_iter(&tls.cert_path)
        .map_err(|e| tls_err(&tls.cert_path.display().to_string(), &e))?
        .collect::<Result<_, _>>()
        .map_err(|e| tls_err(&tls.cert_path.display().to_string(), &e))?;
    if certs.is_empty() {
        return Err(ServeError::Tls(format!("{}: no certificates", tls.cert_path.display())));
    }
    let key = PrivateKeyDer::from_pem_file(&tls.key_path).map_err(|e| tls_err(&tls.key_path.display().to_string(), &e))?;
    let versions: &[&'static rustls::SupportedProtocolVersion] = match tls.min_version {
        TlsVersion::Tls12 => &[&rustls::version::TLS13, &rustls::version::TLS12],
        TlsVersion::Tls13 => &[&rustls::version::TLS13],
    };
    let provider = Arc::new(rustls::crypto::aws_lc_rs::default_provider());
    let mut config = rustls::ServerConfig::builder_with_provider(provider)
        .with_protocol_versions(versions)
        .map_err(|e| tls_err("protocol versions", &e))?
        .with_no_client_auth()
        .with_single_cert(certs, key)
        .map_err(|e| tls_err("certificate", &e))?;
    config.alpn_protocols = vec![b"h2".to_vec(), b"http/1.1".to_vec()];
    Ok(Arc::new(config))
}

/// Everything resolved before any socket is bound.
pub struct Prepared {
    pub config: Config,
    pub service: Arc<Service>,
    pub tls: Option<Arc<rustls::ServerConfig>>,
    pub key_source: KeySource,
}

pub fn prepare(config: Config, flags: &ServeFlags) -> Result<Prepared, ServeError> {
    let (key, key_source) = resolve_master_key(&config, flags)?;
    let tls = match &config.tls {
        Some(section) => Some(load_tls(section)?),
        None if flags.insecure_dev => None,
        None => return Err(ServeError::MissingTls),
    };
    let store: Arc<dyn KvStore> = match &config.store.path {
        Some(path) => Arc::new(FileStore::open(path).map_err(|e| ServeError::Store(format!("{}: {e}", path.display())))?),
        None => Arc::new(MemoryStore::new()),
    };
    let service = Arc::new(Service::build(&config, Arc::new(key), store, Arc::new(SystemClock))?);
    Ok(Prepared { config, service, tls, key_source })
}

pub struct Running {
    pub addr: SocketAddr,
    pub metrics_addr: Option<SocketAddr>,
    pub service: Arc<Service>,
    pub tls: bool,
    handles: Vec<Handle>,
    tasks: Vec<JoinHandle<std::io::Result<()>>>,
}

impl Running {
    /// Stops accepting, lets in-flight requests finish, and waits.
    pub async fn shutdown(self) -> std::io::Result<()> {
        for h in &self.handles {
            h.graceful_shutdown(Some(Duration::from_secs(10)));
        }
        for t in self.tasks {
            t.await.map_err(std::io::Error::other)??;
        }
        Ok(())
    }

    /// Waits until a listener exits on its own.
    pub async fn wait(self) -> std::io::Result<()> {
        for t in self.tasks {
            t.await.map_err(std::io::Error::other)??;
        }
        Ok(())
    }
}

async fn bound(handle: &Handle) -> Result<SocketAddr, ServeError> {
    handle
        .listening()
        .await
        .ok_or_else(|| ServeError::Io(std::io::Error::other("listener failed to bind")))
}

/// Binds the API listener (TLS when configured) and, if
/// `telemetry.bind` is set, a separate plain-HTTP `/metrics` listener.
pub async fn start(prepared: Prepared) -> Result<Running, ServeError> {
    let Prepared { config, service, tls, .. } = prepared;
    let separate_metrics = config.telemetry.bind;
    let app = router(service.clone(), separate_metrics.is_none());
    let handle = Handle::new();
    let mut tasks = Vec::new();
    let api = handle.clone();
    let bind = config.server.bind;
    let is_tls = tls.is_some();
    tasks.push(match tls {
        Some(tls) => {
            let rustls = RustlsConfig::from_config(tls);
            tokio::spawn(async move {
                axum_server::bind_rustls(bind, rustls).handle(api).serve(app.into_make_service()).await
            })
        }
        None => tokio::spawn(async move { axum_server::bind(bind).handle(api).serve(app.into_make_service()).await }),
    });
    let addr = bound(&handle).await?;
    let mut handles = vec![handle];
    let mut metrics_addr = None;
    if let Some(bind) = separate_metrics {
        let metrics_handle = Handle::new();
        let h = metrics_handle.clone();
        let app = metrics_router().with_state(service.clone());
        tasks.push(tokio::spawn(async move { axum_server::bind(bind).handle(h).serve(app.into_make_service()).await }));
        metrics_addr = Some(bound(&metrics_handle).await?);
        handles.push(metrics_handle);
    }
    Ok(Running { addr, metrics_addr, service, tls: is_tls, handles, tasks })
}
