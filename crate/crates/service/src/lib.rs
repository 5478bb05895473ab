//! Session lifecycle, on-disk storage and the HTTP API.

pub mod api;
pub mod error;
pub mod store;

pub use api::{AppState, router};
pub use error::ServiceError;
pub use store::{SessionDir, SessionRecord, SessionState, SessionStore};

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
