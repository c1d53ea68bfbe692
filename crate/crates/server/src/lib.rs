//! HTTP API over a tracelens workspace directory.
//!
//! The service keeps nothing in memory that is not also on disk, so a
//! restart reproduces every `GET`. Responses use the same canonical text as
//! the command line.

mod api;
mod error;
pub mod workspace;

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::http::StatusCode;
use tokio::net::TcpListener;

pub use api::{router, AppState};
pub use error::ApiError;
pub use workspace::Workspace;

/// Binds the listener, reporting a busy or forbidden port as `SERVE_BIND`.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ApiError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "SERVE_BIND", format!("cannot bind {addr}: {e}")))
}

/// Serves `workspace` on an already bound listener until the process ends.
pub async fn serve_on(listener: TcpListener, workspace: PathBuf) -> Result<(), ApiError> {
    let state = AppState::new(Workspace::open(workspace)?)?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

pub async fn serve(workspace: PathBuf, addr: SocketAddr) -> Result<(), ApiError> {
    serve_on(bind(addr).await?, workspace).await
}
