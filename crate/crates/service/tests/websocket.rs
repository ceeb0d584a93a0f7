use std::sync::Arc;
use std::time::{Duration, Instant};

use earexg::afe::{AfeConfig, Montage};
use earexg::session::{read_annotations, AnnotationSource};
use earexg::sim::{Physiology, Scenario};
use earexg::wire::{decode_frame, StreamTracker, TransportClass};
use earexg_service::ws::{bind, serve, WsOptions};
use earexg_service::{
    Pacing, RunState, ServerMessage, ServiceOptions, SimulatorFactory, StreamService,
};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

type Ws =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Client {
    ws: Ws,
    frames: Vec<Vec<u8>>,
    statuses: Vec<earexg_service::StatusReport>,
}

impl Client {
    async fn connect(addr: std::net::SocketAddr) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
            .await
            .unwrap();
        Self {
            ws,
            frames: Vec::new(),
            statuses: Vec::new(),
        }
    }

    fn absorb(&mut self, m: Message) -> Option<ServerMessage> {
        match m {
            Message::Binary(b) => {
                self.frames.push(b.to_vec());
                None
            }
            Message::Text(t) => match serde_json::from_str::<ServerMessage>(t.as_str()).unwrap() {
                ServerMessage::Status(s) => {
                    self.statuses.push(s);
                    None
                }
                r => Some(r),
            },
            _ => None,
        }
    }

    /// Sends a request and returns the matching reply, collecting anything
    /// that arrives in between.
    async fn call(&mut self, req: Value) -> (bool, Value, Option<String>) {
        self.ws
            .send(Message::Text(req.to_string().into()))
            .await
            .unwrap();
        loop {
            let m = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("reply in time")
                .unwrap()
                .unwrap();
            if let Some(ServerMessage::Reply {
                ok,
                result,
                error,
                id,
                ..
            }) = self.absorb(m)
            {
                assert_eq!(id, req.get("id").cloned());
                return (ok, result.unwrap_or(Value::Null), error);
            }
        }
    }

    async fn pump_for(&mut self, d: Duration) {
        let end = Instant::now() + d;
        while let Ok(Some(m)) = tokio::time::timeout_at(end.into(), self.ws.next()).await {
            self.absorb(m.unwrap());
        }
    }
}

async fn start_server(record: &std::path::Path) -> (std::net::SocketAddr, Arc<StreamService>) {
    // Mains pickup over white noise only: in-band EEG would set a floor under
    // the DRL-on reading.
    let s = Scenario::new("mains", Physiology::Silence { duration_s: 60.0 })
        .with_montage(Montage::dual_inamp_drl())
        .with_afe(AfeConfig {
            line_filter: false,
            ..AfeConfig::default()
        });
    let f = SimulatorFactory::looping(s);
    let cfg = f.default_config(TransportClass::Ble);
    let svc = Arc::new(
        StreamService::new(
            Arc::new(f),
            cfg,
            ServiceOptions {
                record_dir: Some(record.to_path_buf()),
                pacing: Pacing::RealTime,
                ..ServiceOptions::default()
            },
        )
        .unwrap(),
    );
    let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let svc2 = Arc::clone(&svc);
    tokio::spawn(async move {
        serve(listener, svc2, WsOptions::default(), std::future::pending())
            .await
            .unwrap()
    });
    (addr, svc)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn control_round_trip_over_websocket() {
    let tmp = tempfile::tempdir().unwrap();
    let (addr, svc) = start_server(tmp.path()).await;
    let mut c = Client::connect(addr).await;

    let (ok, _, err) = c.call(json!({"id": 1, "kind": "stop"})).await;
    assert!(!ok);
    assert!(err.unwrap().contains("stopped"));
    let (ok, _, err) = c.call(json!({"kind": "reboot"})).await;
    assert!(!ok && err.is_some());
    let (ok, _, _) = c
        .call(json!({"id": "c", "kind": "configure", "payload": {"sps": 501}}))
        .await;
    assert!(!ok, "BLE caps the rate at 500 SPS");
    let (ok, cfg, _) = c
        .call(json!({"kind": "configure", "payload": {"sps": 500}}))
        .await;
    assert!(ok);
    assert_eq!(cfg["afe"]["sps"], 500);

    let (ok, st, _) = c.call(json!({"id": 2, "kind": "start"})).await;
    assert!(ok, "{st}");
    assert_eq!(st["state"], "running");
    c.pump_for(Duration::from_millis(500)).await;
    let (ok, ann, _) = c
        .call(json!({"kind": "annotate", "payload": {"label": "eyes-closed"}}))
        .await;
    assert!(ok);
    assert_eq!(ann["label"], "eyes-closed");
    assert_eq!(ann["source"], "operator");

    // Line interference on the first channel, DRL off then on.
    c.pump_for(Duration::from_millis(2600)).await;
    let off = c.statuses.last().unwrap().quality_uv_rms.unwrap();
    let (ok, r, _) = c
        .call(json!({"kind": "set_drl", "payload": {"enabled": true}}))
        .await;
    assert!(ok);
    assert_eq!(r["drl_enabled"], true);
    c.pump_for(Duration::from_millis(2600)).await;
    let on = c.statuses.last().unwrap().quality_uv_rms.unwrap();
    assert!(20.0 * (off / on).log10() >= 20.0, "{off} -> {on}");

    let (ok, summary, _) = c.call(json!({"kind": "stop"})).await;
    assert!(ok);
    assert_eq!(svc.state(), RunState::Stopped);
    assert_eq!(summary["frames_recorded"], summary["frames_emitted"]);

    // Binary frames decode, arrive in order and carry the DRL flag.
    let frames: Vec<_> = c.frames.iter().map(|b| decode_frame(b).unwrap()).collect();
    assert!(frames.len() > 100);
    let mut tracker = StreamTracker::new();
    for f in &frames {
        assert_eq!(tracker.observe(f), None);
        assert_eq!(f.channel_mask, 0b11);
    }
    assert!(!frames[0].drl_enabled);
    assert!(frames.last().unwrap().drl_enabled);

    let dir = summary["session_dir"].as_str().unwrap();
    let anns = read_annotations(std::path::Path::new(dir)).unwrap();
    let labels: Vec<&str> = anns.iter().map(|a| a.label.as_str()).collect();
    assert_eq!(labels, ["start", "eyes-closed", "stop"]);
    assert_eq!(anns[1].source, AnnotationSource::Operator);
    assert!(
        anns[1].t_us >= 400_000 && anns[1].t_us < 2_000_000,
        "{}",
        anns[1].t_us
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn status_is_pushed_and_served() {
    let tmp = tempfile::tempdir().unwrap();
    let (addr, _svc) = start_server(tmp.path()).await;
    let mut c = Client::connect(addr).await;
    c.pump_for(Duration::from_millis(1200)).await;
    assert!(c.statuses.len() >= 2);
    assert_eq!(c.statuses[0].state, RunState::Stopped);
    assert_eq!(c.statuses[0].subscribers.len(), 1);

    let body: Value = http_get(addr, "/status").await;
    assert_eq!(body["state"], "stopped");
    assert_eq!(body["transport"], "ble");
}

/// Minimal HTTP/1.1 GET without pulling in a client crate.
async fn http_get(addr: std::net::SocketAddr, path: &str) -> Value {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}
