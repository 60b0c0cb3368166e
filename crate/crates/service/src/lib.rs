//! HTTP front end for perplexity-based origin detection.
//!
//! [`router`] exposes the detector API; [`scorer_router`] exposes a scorer
//! over the wire protocol consumed by `remote:` scorer specs.

pub mod detector;
pub mod error;
pub mod http;

use std::net::SocketAddr;

use axum::Router;

pub use detector::{AnalyzeRequest, CategorySelection, Detector, ThresholdKey, Verdict, MAX_TEXT_BYTES};
pub use error::ServiceError;
pub use http::{router, scorer_router};

/// Binds `addr` and serves `app` until ctrl-c.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
