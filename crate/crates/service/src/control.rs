//! JSON control schema carried in WebSocket text messages.

use earexg::afe::{AfeConfig, Montage};
use earexg::session::AnnotationSource;
use earexg::wire::TransportClass;
use serde::{Deserialize, Serialize};

use crate::broadcast::SubscriberStatus;
use crate::source::StreamConfig;

/// Client request. `{"kind": ..., "payload": {...}}`; `stop` and `status`
/// take no payload and `start` may omit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "payload",
    rename_all = "snake_case",
    try_from = "RawControl"
)]
pub enum ControlMessage {
    Configure(ConfigurePayload),
    Start(StartPayload),
    Stop,
    Annotate(AnnotatePayload),
    Status,
    SetDrl(SetDrlPayload),
}

impl ControlMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlMessage::Configure(_) => "configure",
            ControlMessage::Start(_) => "start",
            ControlMessage::Stop => "stop",
            ControlMessage::Annotate(_) => "annotate",
            ControlMessage::Status => "status",
            ControlMessage::SetDrl(_) => "set_drl",
        }
    }
}

#[derive(Deserialize)]
struct RawControl {
    kind: String,
    #[serde(default)]
    payload: Option<serde_json::Value>,
}

impl TryFrom<RawControl> for ControlMessage {
    type Error = String;

    fn try_from(raw: RawControl) -> Result<Self, String> {
        fn body<T: serde::de::DeserializeOwned>(
            kind: &str,
            p: Option<serde_json::Value>,
        ) -> Result<T, String> {
            let p = p.ok_or_else(|| format!("{kind} needs a payload"))?;
            serde_json::from_value(p).map_err(|e| format!("{kind} payload: {e}"))
        }
        let empty = |p: &Option<serde_json::Value>| match p {
            None | Some(serde_json::Value::Null) => true,
            Some(serde_json::Value::Object(m)) => m.is_empty(),
            _ => false,
        };
        let k = raw.kind.as_str();
        Ok(match k {
            "configure" => ControlMessage::Configure(body(k, raw.payload)?),
            "start" if empty(&raw.payload) => ControlMessage::Start(StartPayload::default()),
            "start" => ControlMessage::Start(body(k, raw.payload)?),
            "annotate" => ControlMessage::Annotate(body(k, raw.payload)?),
            "set_drl" => ControlMessage::SetDrl(body(k, raw.payload)?),
            "stop" | "status" if !empty(&raw.payload) => {
                return Err(format!("{k} takes no payload"))
            }
            "stop" => ControlMessage::Stop,
            "status" => ControlMessage::Status,
            other => return Err(format!("unknown kind {other:?}")),
        })
    }
}

/// Request envelope: the message plus an optional id echoed in the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<serde_json::Value>,
    #[serde(flatten)]
    pub message: ControlMessage,
}

/// Fields left out keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigurePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub afe: Option<AfeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montage: Option<Montage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportClass>,
    /// Shorthand for `afe.sps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sps: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartPayload {
    /// Overrides the service default for this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatePayload {
    pub label: String,
    #[serde(default = "operator")]
    pub source: AnnotationSource,
}

fn operator() -> AnnotationSource {
    AnnotationSource::Operator
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDrlPayload {
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Stopped,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub state: RunState,
    pub source: String,
    /// Configuration in force, or staged for the next start.
    pub config: StreamConfig,
    pub sps: u32,
    pub channel_mask: u8,
    pub transport: TransportClass,
    pub drl_enabled: bool,
    pub frames_emitted: u64,
    pub frames_recorded: u64,
    pub samples_emitted: u64,
    /// Service clock: microseconds of the next tick in the current run.
    pub clock_us: u64,
    pub subscribers: Vec<SubscriberStatus>,
    /// RMS of the powerline band (±5 Hz) of the first channel over the last 2 s, in
    /// input-referred microvolts.
    pub quality_uv_rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

/// Server to client text messages, tagged by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Reply {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<serde_json::Value>,
        kind: String,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<serde_json::Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Status(StatusReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_every_kind() {
        let cases = [
            json!({"kind": "configure", "payload": {"transport": "ble", "sps": 500}}),
            json!({"kind": "start"}),
            json!({"kind": "start", "payload": {"record": false}}),
            json!({"kind": "stop"}),
            json!({"kind": "annotate", "payload": {"label": "eyes-closed"}}),
            json!({"kind": "status"}),
            json!({"kind": "set_drl", "payload": {"enabled": true}}),
        ];
        let kinds: Vec<&str> = cases
            .iter()
            .map(|c| {
                serde_json::from_value::<ControlMessage>(c.clone())
                    .unwrap()
                    .kind()
            })
            .collect();
        assert_eq!(
            kinds,
            [
                "configure",
                "start",
                "start",
                "stop",
                "annotate",
                "status",
                "set_drl"
            ]
        );
        let a: ControlMessage = serde_json::from_value(cases[4].clone()).unwrap();
        assert_eq!(
            a,
            ControlMessage::Annotate(AnnotatePayload {
                label: "eyes-closed".into(),
                source: AnnotationSource::Operator
            })
        );
    }

    #[test]
    fn rejects_unknown_kind_and_bad_payload() {
        assert!(serde_json::from_value::<ControlMessage>(json!({"kind": "reboot"})).is_err());
        assert!(serde_json::from_value::<ControlMessage>(
            json!({"kind": "set_drl", "payload": {}})
        )
        .is_err());
    }

    #[test]
    fn request_id_round_trip() {
        let r: Request = serde_json::from_value(json!({"id": 7, "kind": "status"})).unwrap();
        assert_eq!(r.id, Some(json!(7)));
        assert_eq!(r.message, ControlMessage::Status);
        let r: Request =
            serde_json::from_value(json!({"kind": "set_drl", "payload": {"enabled": false}}))
                .unwrap();
        assert_eq!(r.id, None);
    }

    #[test]
    fn reply_shape() {
        let m = ServerMessage::Reply {
            id: None,
            kind: "start".into(),
            ok: false,
            result: None,
            error: Some("illegal transition".into()),
        };
        assert_eq!(
            serde_json::to_value(&m).unwrap(),
            json!({"type": "reply", "kind": "start", "ok": false, "error": "illegal transition"})
        );
    }
}
