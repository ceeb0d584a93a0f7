//! WebSocket client that stores a live stream as a session.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use earexg::session::{Annotation, AnnotationSource, Session, SessionMeta, SessionTransport};
use earexg::wire::{decode_frame, Frame, TransportClass};
use earexg_service::{RunState, ServerMessage, StatusReport};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

type Ws =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

const BATCH: usize = 16;

async fn call(ws: &mut Ws, pending: &mut Vec<Frame>, req: Value) -> anyhow::Result<Value> {
    ws.send(Message::Text(req.to_string().into())).await?;
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .context("no reply from service")?
            .context("service closed the connection")??;
        match msg {
            Message::Binary(b) => pending.push(decode_frame(&b)?),
            Message::Text(t) => {
                if let ServerMessage::Reply {
                    id,
                    ok,
                    result,
                    error,
                    ..
                } = serde_json::from_str(t.as_str())?
                {
                    if id.as_ref() == req.get("id") {
                        if !ok {
                            bail!("{}", error.unwrap_or_default());
                        }
                        return Ok(result.unwrap_or(Value::Null));
                    }
                }
            }
            Message::Close(_) => bail!("service closed the connection"),
            _ => {}
        }
    }
}

/// Records `duration_s` of stream time from the service at `url` into `out`.
/// Starts the stream if it is stopped and stops it again afterwards.
pub async fn record(url: &str, out: &Path, duration_s: f64) -> anyhow::Result<SessionMeta> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url)
        .await
        .with_context(|| format!("connecting to {url}"))?;
    let mut pending = Vec::new();
    let status: StatusReport = serde_json::from_value(
        call(&mut ws, &mut pending, json!({"id": 1, "kind": "status"})).await?,
    )?;
    let started_here = status.state == RunState::Stopped;
    if started_here {
        call(
            &mut ws,
            &mut pending,
            json!({"id": 2, "kind": "start", "payload": {"record": false}}),
        )
        .await?;
    }
    let cfg = status.config;
    let transport = match cfg.transport {
        TransportClass::Serial => SessionTransport::Serial,
        TransportClass::Ble => SessionTransport::Ble,
    };
    let sps = cfg.afe.sps;
    let mut session = Session::create(out, SessionMeta::new(cfg.afe, cfg.montage, transport))?;
    session.annotate(&Annotation::new(
        0,
        "start",
        AnnotationSource::ProtocolScript,
    ))?;
    let target = (duration_s * sps as f64).ceil() as u64;
    let timeout = Duration::from_secs_f64(duration_s + 10.0);
    let deadline = tokio::time::Instant::now() + timeout;

    // Frames that arrived with the control replies come first.
    loop {
        let queued: u64 = pending.iter().map(|f| f.sample_count() as u64).sum();
        if pending.len() >= BATCH || session.samples_per_channel() + queued >= target {
            session.append_frames(&pending)?;
            pending.clear();
        }
        if session.samples_per_channel() >= target {
            break;
        }
        let msg = match tokio::time::timeout_at(deadline, ws.next()).await {
            Err(_) => bail!(
                "stream stalled at {} of {target} samples",
                session.samples_per_channel()
            ),
            Ok(None) => break,
            Ok(Some(m)) => m?,
        };
        match msg {
            Message::Binary(b) => pending.push(decode_frame(&b)?),
            Message::Close(_) => break,
            _ => {}
        }
    }
    if !pending.is_empty() {
        session.append_frames(&pending)?;
        pending.clear();
    }
    let end_us = session.meta().last_tick_us.unwrap_or(0);
    session.annotate(&Annotation::new(
        end_us,
        "stop",
        AnnotationSource::ProtocolScript,
    ))?;
    let meta = session.finish()?;
    if started_here {
        let mut ignored = Vec::new();
        call(&mut ws, &mut ignored, json!({"id": 3, "kind": "stop"})).await?;
    }
    let _ = ws.close(None).await;
    Ok(meta)
}
