//! HTTP API, versioned under `/api/v1`:
//!
//! | method | path                 | response                                  |
//! |--------|----------------------|-------------------------------------------|
//! | GET    | `/queries/next`      | 200 query JSON, or 204 when nothing waits |
//! | GET    | `/images/{query_id}` | 200 `image/png`, 404 unknown              |
//! | POST   | `/labels`            | 200, 404 unknown, 409 answered, 422 bad   |
//! | GET    | `/status`            | 200 run status JSON                       |
//!
//! Any other path is served from the optional static directory (the labeling
//! UI build).

use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

use super::{encode_png, LabelQueue, Submit};
use crate::error::{Error, Result};

type Shared = Arc<LabelQueue>;

async fn next_query(State(q): State<Shared>) -> Response {
    match q.next() {
        None => StatusCode::NO_CONTENT.into_response(),
        Some((p, depth)) => Json(json!({
            "query_id": p.query.query_id,
            "dataset_index": p.query.dataset_index,
            "image_url": format!("/api/v1/images/{}", p.query.query_id),
            "issued_at_ms": p.issued_at_ms,
            "class_names": p.query.class_names,
            "queue_depth": depth,
        }))
        .into_response(),
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn image(State(q): State<Shared>, Path(id): Path<String>) -> Response {
    let Some(img) = id.parse().ok().and_then(|id| q.image(id)) else {
        return error(StatusCode::NOT_FOUND, format!("no outstanding query {id}"));
    };
    match encode_png(&img) {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct LabelPost {
    query_id: u64,
    label: i64,
}

async fn label(State(q): State<Shared>, body: Bytes) -> Response {
    let post: LabelPost = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("expected {{query_id, label}}: {e}")),
    };
    match q.submit(post.query_id, post.label) {
        Submit::Accepted => Json(json!({ "query_id": post.query_id, "label": post.label, "accepted": true })).into_response(),
        Submit::UnknownQuery => error(StatusCode::NOT_FOUND, format!("no outstanding query {}", post.query_id)),
        Submit::AlreadyAnswered => error(StatusCode::CONFLICT, format!("query {} is already answered", post.query_id)),
        Submit::LabelOutOfRange { num_classes } => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("label {} is outside 0..{num_classes}", post.label),
        ),
    }
}

async fn status(State(q): State<Shared>) -> Response {
    let s = q.status();
    Json(json!({
        "labels_collected": s.labels_collected,
        "budget": s.budget,
        "test_accuracy": s.test_accuracy,
        "step": s.step,
        "total_steps": s.total_steps,
        "phase": s.phase,
        "finished": s.finished,
        "queue_depth": q.depth(),
    }))
    .into_response()
}

pub fn router(queue: Arc<LabelQueue>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/queries/next", get(next_query))
        .route("/api/v1/images/{id}", get(image))
        .route("/api/v1/labels", post(label))
        .route("/api/v1/status", get(status))
        .with_state(queue);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// A running label service; dropping it shuts the service down.
pub struct LabelServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl LabelServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the service stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for LabelServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Bind `addr` and serve on a background thread.
pub fn serve(addr: &str, queue: Arc<LabelQueue>, static_dir: Option<PathBuf>) -> Result<LabelServer> {
    let bind_err = |source| Error::Bind {
        addr: addr.to_string(),
        source,
    };
    let listener = TcpListener::bind(addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let local = listener.local_addr().map_err(bind_err)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(bind_err)?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(queue, static_dir);
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("label service: {e}");
                    return;
                }
            };
            let stop = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stop).await {
                log::error!("label service: {e}");
            }
        });
    });
    Ok(LabelServer {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
