//! WebSocket front end. One endpoint, `/ws`: the client sends JSON control
//! requests as text, the server answers with text replies, pushes a status
//! message periodically and streams wire frames as binary messages.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;

use crate::broadcast::SubscriberPolicy;
use crate::control::{Request, ServerMessage};
use crate::service::StreamService;
use crate::ServiceError;

#[derive(Debug, Clone, Copy)]
pub struct WsOptions {
    pub subscriber: SubscriberPolicy,
    pub status_every: Duration,
}

impl Default for WsOptions {
    fn default() -> Self {
        Self {
            subscriber: SubscriberPolicy::default(),
            status_every: Duration::from_millis(500),
        }
    }
}

#[derive(Clone)]
struct AppState {
    service: Arc<StreamService>,
    options: WsOptions,
}

/// Routes: `GET /ws` (upgrade) and `GET /status` (JSON snapshot).
pub fn router(service: Arc<StreamService>, options: WsOptions) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/status", get(status))
        .with_state(AppState { service, options })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<StreamService>,
    options: WsOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    log::info!("listening on ws://{}/ws", listener.local_addr()?);
    axum::serve(listener, router(service, options))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    Ok(TcpListener::bind(addr).await?)
}

async fn status(State(st): State<AppState>) -> impl IntoResponse {
    let svc = Arc::clone(&st.service);
    let report = tokio::task::spawn_blocking(move || svc.status())
        .await
        .expect("status task");
    Json(report)
}

async fn upgrade(ws: WebSocketUpgrade, State(st): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, st))
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(
        serde_json::to_string(msg)
            .expect("server messages serialize")
            .into(),
    )
}

/// Parses and executes one text request.
async fn execute(service: &Arc<StreamService>, raw: &str) -> ServerMessage {
    let req: Request = match serde_json::from_str(raw) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(raw)
                .ok()
                .and_then(|v| v.get("id").cloned());
            return ServerMessage::Reply {
                id,
                kind: "invalid".into(),
                ok: false,
                result: None,
                error: Some(e.to_string()),
            };
        }
    };
    let kind = req.message.kind().to_string();
    let svc = Arc::clone(service);
    // Stop joins threads and annotate waits on the recorder.
    let result = tokio::task::spawn_blocking(move || svc.handle(req.message))
        .await
        .unwrap_or_else(|e| Err(ServiceError::Source(format!("control task failed: {e}"))));
    match result {
        Ok(v) => ServerMessage::Reply {
            id: req.id,
            kind,
            ok: true,
            result: Some(v),
            error: None,
        },
        Err(e) => ServerMessage::Reply {
            id: req.id,
            kind,
            ok: false,
            result: None,
            error: Some(e.to_string()),
        },
    }
}

async fn client(socket: WebSocket, st: AppState) {
    let (mut tx, mut rx) = socket.split();
    let sub = st.service.subscribe(st.options.subscriber);
    let mut ticker = tokio::time::interval(st.options.status_every);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    log::info!("client {} connected", sub.id());

    let outcome: Result<(), axum::Error> = async {
        loop {
            tokio::select! {
                incoming = rx.next() => match incoming {
                    Some(Ok(Message::Text(t))) => {
                        let reply = execute(&st.service, t.as_str()).await;
                        tx.send(text(&reply)).await?;
                    }
                    Some(Ok(Message::Close(_))) | None => return Ok(()),
                    Some(Ok(_)) => {}
                    Some(Err(e)) => return Err(e),
                },
                _ = sub.queue().wait() => {
                    for bytes in sub.queue().drain() {
                        tx.send(Message::Binary(bytes)).await?;
                    }
                    if sub.queue().is_closed() {
                        return Ok(());
                    }
                },
                _ = ticker.tick() => {
                    let svc = Arc::clone(&st.service);
                    if let Ok(report) = tokio::task::spawn_blocking(move || svc.status()).await {
                        tx.send(text(&ServerMessage::Status(report))).await?;
                    }
                }
            }
        }
    }
    .await;
    match outcome {
        Ok(()) => log::info!("client {} disconnected", sub.id()),
        Err(e) => log::warn!("client {} dropped: {e}", sub.id()),
    }
}
