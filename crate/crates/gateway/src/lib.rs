// SPDX-License-Identifier: Apache-2.0

//! Normal-world edge gateway.
//!
//! [`Gateway::build`] connects to the secure world, obtains the storage key
//! and assembles the activity manager. [`GatewayServer::spawn`] additionally
//! serves the REST API on its own runtime, which is how tests and the binary
//! run it.

pub mod actmgr;
pub mod auth;
pub mod config;
pub mod datastore;
pub mod http;
pub mod netclient;
pub mod scheduler;
pub mod smclient;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use ecig_core::clock::Clock;
use ecig_worldlink::WorldError;
use thiserror::Error;
use tokio::sync::oneshot;

pub use actmgr::{ActivityConfig, ActivityManager, ActivityResult, FailReason, Payload, Principal};
pub use auth::{AuthError, Authenticator, UserFile};
pub use config::{ConfigError, GatewayConfig, SchedulerConfig};
pub use datastore::{Category, DataStore, RecordFilter, StoreError, StoredRecord};
pub use scheduler::{BadInterval, Schedule, Scheduler};
pub use smclient::SmClient;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("secure world: {0}")]
    World(#[from] WorldError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Schedule(#[from] BadInterval),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// The assembled gateway without its HTTP listener.
pub struct Gateway {
    pub am: Arc<ActivityManager>,
    pub auth: Arc<Authenticator>,
    pub sm: Arc<SmClient>,
    pub scheduler: Option<Scheduler>,
    cfg: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn build(cfg: GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        cfg.check().map_err(|reason| ConfigError {
            path: "<memory>".into(),
            reason,
        })?;
        let image = match &cfg.image {
            Some(p) => p.clone(),
            None => std::env::current_exe()?,
        };
        let sm = SmClient::connect(&cfg.sw_socket, &image)?;
        let key = match sm.storage_key() {
            Ok(k) => Some(k),
            Err(e) => {
                tracing::warn!("no storage key; records and profiles are unavailable: {e}");
                None
            }
        };
        let mut store = DataStore::open(&cfg.data_dir, key, clock.clone())?;
        if let Some(p) = &cfg.sw_audit_log {
            store = store.with_sw_log(p);
        }
        std::fs::create_dir_all(cfg.staging_dir())?;
        let mut act = ActivityConfig::new(cfg.staging_dir());
        act.modbus_timeout = cfg.modbus_timeout();
        act.profile_window = cfg.profile_window();
        let sm = Arc::new(sm);
        let am = Arc::new(ActivityManager::new(sm.clone(), Arc::new(store), clock.clone(), act));
        let users = UserFile::load(&cfg.users_file)?;
        let auth = Arc::new(Authenticator::new(users, cfg.token_ttl(), clock));
        let scheduler = match (&cfg.scheduler.enabled, &cfg.scheduler.key) {
            (true, Some(key)) => Some(Scheduler::start(
                am.clone(),
                Schedule {
                    store_interval: std::time::Duration::from_secs(cfg.scheduler.store_interval_secs),
                    profile_interval: std::time::Duration::from_secs(cfg.scheduler.profile_interval_secs),
                    assets: cfg.scheduler.assets.clone(),
                    key: *key,
                },
            )?),
            _ => None,
        };
        Ok(Self {
            am,
            auth,
            sm,
            scheduler,
            cfg,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn app_state(&self) -> Arc<http::AppState> {
        Arc::new(http::AppState {
            am: self.am.clone(),
            auth: self.auth.clone(),
            staging_dir: self.cfg.staging_dir(),
            firmware_cap: self.cfg.firmware_cap_bytes,
            attested: self.sm.is_attested(),
        })
    }
}

/// A gateway serving HTTP on a background runtime. Stops on drop.
pub struct GatewayServer {
    addr: SocketAddr,
    gateway: Gateway,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for GatewayServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl GatewayServer {
    /// Builds the gateway and listens on `cfg.listen` (port 0 picks a free
    /// port).
    pub fn spawn(cfg: GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        let listener = std::net::TcpListener::bind(&cfg.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let gateway = Gateway::build(cfg, clock)?;
        let app = http::router(gateway.app_state());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .thread_name("gateway-http")
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("gateway".into()).spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        tracing::error!("cannot adopt listener: {e}");
                        return;
                    }
                };
                let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = serve.await {
                    tracing::error!("http server stopped: {e}");
                }
            });
        })?;
        Ok(Self {
            addr,
            gateway,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn gateway_mut(&mut self) -> &mut Gateway {
        &mut self.gateway
    }

    /// Blocks until the server stops by itself.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        if let Some(mut s) = self.gateway.scheduler.take() {
            s.stop();
        }
    }
}

impl Drop for GatewayServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
