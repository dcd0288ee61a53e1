//! Network front-ends for a [`Controller`].
//!
//! All transports share one controller behind an async mutex. Requests run
//! one at a time on the blocking pool, in the order the lock is granted.

use std::io;
use std::sync::Arc;

use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use nbb_core::controller::protocol::{handle_line, Response, PROTOCOL_VERSION};
use nbb_core::Controller;
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::Mutex;

#[derive(Clone)]
pub struct Server {
    ctrl: Arc<Mutex<Controller>>,
}

impl Server {
    pub fn new(ctrl: Controller) -> Self {
        Self {
            ctrl: Arc::new(Mutex::new(ctrl)),
        }
    }

    /// Handles one request line and returns the response line (no newline).
    pub async fn handle(&self, line: String) -> String {
        let mut guard = self.ctrl.clone().lock_owned().await;
        let joined =
            tokio::task::spawn_blocking(move || handle_line(&mut guard, &line).to_line()).await;
        joined.unwrap_or_else(|e| {
            tracing::error!("request handler panicked: {e}");
            Response::failure(None, "internal_error", "request handler panicked").to_line()
        })
    }

    /// Serves newline-delimited requests from `reader`, answering on
    /// `writer`, until end of input. Blank lines are ignored.
    pub async fn serve_stream<R, W>(&self, reader: R, mut writer: W) -> io::Result<()>
    where
        R: AsyncRead + Unpin,
        W: AsyncWrite + Unpin,
    {
        let mut lines = BufReader::new(reader).lines();
        while let Some(line) = lines.next_line().await? {
            if line.trim().is_empty() {
                continue;
            }
            let mut out = self.handle(line).await;
            out.push('\n');
            writer.write_all(out.as_bytes()).await?;
            writer.flush().await?;
        }
        Ok(())
    }

    pub async fn serve_stdio(&self) -> io::Result<()> {
        self.serve_stream(tokio::io::stdin(), tokio::io::stdout())
            .await
    }

    /// Accepts NDJSON connections forever; each connection is its own session.
    pub async fn serve_tcp(&self, listener: TcpListener) -> io::Result<()> {
        loop {
            let (socket, peer) = listener.accept().await?;
            tracing::info!(%peer, "client connected");
            let server = self.clone();
            tokio::spawn(async move {
                let (r, w) = socket.into_split();
                match server.serve_stream(r, w).await {
                    Ok(()) => tracing::info!(%peer, "client disconnected"),
                    Err(e) => tracing::warn!(%peer, "session ended: {e}"),
                }
            });
        }
    }

    /// `POST /v1/rpc` takes one request object, `GET /v1/health` reports liveness.
    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/rpc", post(rpc))
            .route("/v1/health", get(health))
            .with_state(self.clone())
    }

    pub async fn serve_http(&self, listener: TcpListener) -> io::Result<()> {
        axum::serve(listener, self.router()).await
    }
}

async fn rpc(State(server): State<Server>, body: String) -> impl IntoResponse {
    let line = body.trim().to_string();
    (
        [(header::CONTENT_TYPE, "application/json")],
        server.handle(line).await,
    )
}

async fn health() -> impl IntoResponse {
    Json(json!({"status": "ok", "protocol_version": PROTOCOL_VERSION}))
}
