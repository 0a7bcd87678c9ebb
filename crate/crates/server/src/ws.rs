//! WebSocket hosting. Each connection gets its own driver thread so a slow
//! responder never stalls the runtime; the thread also owns the timer that
//! ends playback.

use std::net::SocketAddr;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedSender;

use crate::driver::{ServerContext, SessionDriver};
use crate::protocol::ServerEnvelope;

/// Frames above this size are refused by the socket layer.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

enum Inbound {
    Text(String),
    Binary,
}

pub fn router(ctx: ServerContext) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/healthz", get(|| async { "ok" }))
        .route("/scenario", get(scenario))
        .with_state(ctx)
}

async fn scenario(State(ctx): State<ServerContext>) -> Json<Value> {
    let scenes: Vec<Value> = ctx
        .pack
        .scenes
        .iter()
        .map(|s| json!({ "id": s.id, "title": s.title, "setting": s.setting_description }))
        .collect();
    Json(json!({ "version": ctx.pack.version, "persona": ctx.pack.persona.name, "scenes": scenes }))
}

async fn upgrade(ws: WebSocketUpgrade, State(ctx): State<ServerContext>) -> Response {
    ws.max_message_size(MAX_FRAME_BYTES).on_upgrade(move |socket| connection(socket, ctx))
}

async fn connection(mut socket: WebSocket, ctx: ServerContext) {
    let id = uuid::Uuid::new_v4().to_string();
    let (in_tx, in_rx) = mpsc::channel::<Inbound>();
    let (out_tx, mut out_rx) = tokio::sync::mpsc::unbounded_channel::<String>();
    let driver = SessionDriver::new(ctx, id.clone());
    let worker = std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || drive(driver, in_rx, out_tx));
    let worker = match worker {
        Ok(w) => w,
        Err(e) => {
            tracing::error!(error = %e, "could not start session thread");
            return;
        }
    };

    loop {
        tokio::select! {
            inbound = socket.recv() => match inbound {
                Some(Ok(Message::Text(t))) => {
                    if in_tx.send(Inbound::Text(t.as_str().to_string())).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    if in_tx.send(Inbound::Binary).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            outbound = out_rx.recv() => match outbound {
                Some(frame) => {
                    if socket.send(Message::Text(frame.into())).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
        }
    }
    drop(in_tx);
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
    tracing::info!(session = %id, "connection closed");
}

fn drive(mut driver: SessionDriver, inbound: mpsc::Receiver<Inbound>, outbound: UnboundedSender<String>) {
    loop {
        let next = match driver.speaking_until() {
            Some(until) => {
                let wait = until.saturating_sub(driver.now_ms());
                match inbound.recv_timeout(Duration::from_millis(wait)) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            None => match inbound.recv() {
                Ok(m) => Some(m),
                Err(_) => break,
            },
        };
        let frames = match next {
            Some(Inbound::Text(t)) => driver.handle_text(&t),
            Some(Inbound::Binary) => vec![ServerEnvelope::error(
                Some(driver.session_id().to_string()),
                None,
                "bad_frame",
                "binary frames are not accepted; send audio as audio_chunk",
            )],
            None => driver.tick(),
        };
        for f in frames {
            if outbound.send(f.to_json()).is_err() {
                break;
            }
        }
    }
    driver.finish();
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, ctx: ServerContext) -> std::io::Result<()> {
    axum::serve(listener, router(ctx)).await
}

/// Binds `addr` and serves on a fresh runtime. Blocks.
pub fn run(addr: SocketAddr, ctx: ServerContext, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        serve(listener, ctx).await
    })
}
