//! HTTP service: event intake, periodic recompute, and ranking queries.

pub mod api;
pub mod app;
pub mod cache;
pub mod config;

use std::sync::Arc;

pub use api::router;
pub use app::AppState;
pub use config::ServiceConfig;

/// Serves until Ctrl-C or SIGTERM, recomputing on the configured interval.
/// Publishes an initial epoch before accepting requests and snapshots the
/// store on the way out.
pub async fn run(config: ServiceConfig) -> anyhow::Result<()> {
    let listen = config.listen;
    let interval = config.recompute_interval;
    let state = AppState::open(config)?;
    state.recompute_all().await?;

    let timer = {
        let state = Arc::clone(&state);
        tokio::spawn(async move {
            let mut ticks = tokio::time::interval(interval);
            ticks.tick().await;
            loop {
                ticks.tick().await;
                if let Err(error) = state.recompute_all().await {
                    tracing::error!(%error, "periodic recompute failed");
                }
            }
        })
    };

    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(shutdown_signal())
        .await?;

    timer.abort();
    state.snapshot()?;
    tracing::info!("snapshot written, shutting down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}
