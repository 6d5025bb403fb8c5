//! Online forecast service.
//!
//! Requests are answered from an immutable [`Snapshot`] (log index,
//! calibrator and their versions). Reloading swaps the snapshot pointer, so
//! each response is computed against exactly one snapshot.

pub mod api;
pub mod snapshot;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, AppState, ErrorBody, ForecastResponse, Meta, RawReplay};
pub use snapshot::{LoadOptions, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] cpf_core::Error),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Command-line and environment settings of the server.
#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Directory with auction.ndjson, uts.ndjson and urf.ndjson (or world.json plus --urf-model).
    #[arg(long, env = "LOGS_DIR")]
    pub logs_dir: PathBuf,
    /// Calibrator model file.
    #[arg(long, env = "MODEL")]
    pub model: PathBuf,
    /// URF model used to emit urf.ndjson when the logs directory lacks it.
    #[arg(long, env = "URF_MODEL")]
    pub urf_model: Option<PathBuf>,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    /// Overrides the scale factor recorded in the log manifest.
    #[arg(long, env = "SCALE_FACTOR")]
    pub scale_factor: Option<f64>,
}

impl ServeArgs {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            logs_dir: self.logs_dir.clone(),
            model: self.model.clone(),
            urf_model: self.urf_model.clone(),
            scale_factor: self.scale_factor,
        }
    }
}

/// Binds the port, then loads the snapshot in the background; until it is
/// installed `/health` reports `not_ready` and `/forecast` answers 503.
pub async fn serve(args: ServeArgs) -> Result<(), ServiceError> {
    let state = AppState::default();
    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    let loader = state.clone();
    let opts = args.load_options();
    tokio::task::spawn_blocking(move || match Snapshot::load(&opts) {
        Ok(s) => {
            tracing::info!(records = s.record_count(), model = %s.model_version, "snapshot ready");
            loader.install(s);
        }
        Err(e) => tracing::error!(error = %e, "snapshot load failed"),
    });
    serve_with(listener, state).await
}

/// Serves `state` on an already bound listener.
pub async fn serve_with(listener: tokio::net::TcpListener, state: AppState) -> Result<(), ServiceError> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}
