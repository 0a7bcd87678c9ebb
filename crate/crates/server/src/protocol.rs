//! JSON wire format shared with the browser client. Every frame is
//! `{"type", "session_id", "turn_id", "payload"}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vpatient_core::dialogue::TurnPhase;
use vpatient_core::scenario::Role;

/// Largest decoded audio chunk accepted.
pub const MAX_AUDIO_CHUNK_BYTES: usize = 32 * 1024;

pub const CLIENT_TYPES: &[&str] =
    &["hello", "gate_open", "audio_chunk", "gate_close", "text_input", "switch_scene", "set_role", "ping"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        role: Role,
        scene_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        display_name: Option<String>,
    },
    GateOpen {},
    AudioChunk {
        seq: u64,
        b64: String,
    },
    GateClose {},
    TextInput {
        text: String,
    },
    SwitchScene {
        scene_id: String,
    },
    SetRole {
        role: Role,
    },
    Ping {},
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_id: Option<u64>,
    #[serde(flatten)]
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    SessionAck {
        session_id: String,
        persona: String,
        role: Role,
        scene: SceneSummary,
        setting: String,
        scenes: Vec<SceneSummary>,
    },
    State {
        turn_state: TurnPhase,
    },
    Transcript {
        speaker: String,
        text: String,
    },
    PatientResponse {
        text: String,
        clip_id: String,
        expression: String,
        start_offset_ms: u64,
        play_duration_ms: u64,
        audio_duration_ms: u64,
        loop_count: u32,
    },
    InputDiscarded {
        reason: String,
    },
    SceneChanged {
        scene: SceneSummary,
    },
    Error {
        code: String,
        message: String,
    },
    Pong {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_id: Option<u64>,
    #[serde(flatten)]
    pub message: ServerMessage,
}

impl ServerEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }

    pub fn error(session_id: Option<String>, turn_id: Option<u64>, code: &str, message: impl Into<String>) -> Self {
        ServerEnvelope {
            session_id,
            turn_id,
            message: ServerMessage::Error { code: code.to_string(), message: message.into() },
        }
    }

    /// The wire `type` of this frame.
    pub fn kind(&self) -> &'static str {
        match self.message {
            ServerMessage::SessionAck { .. } => "session_ack",
            ServerMessage::State { .. } => "state",
            ServerMessage::Transcript { .. } => "transcript",
            ServerMessage::PatientResponse { .. } => "patient_response",
            ServerMessage::InputDiscarded { .. } => "input_discarded",
            ServerMessage::SceneChanged { .. } => "scene_changed",
            ServerMessage::Error { .. } => "error",
            ServerMessage::Pong {} => "pong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame is not a JSON object: {0}")]
    NotJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("bad {kind} payload: {message}")]
    BadPayload { kind: String, message: String },
    #[error("audio chunk of {0} bytes exceeds {MAX_AUDIO_CHUNK_BYTES}")]
    ChunkTooLarge(usize),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::NotJson(_) => "bad_frame",
            ProtocolError::UnknownType(_) => "unknown_type",
            ProtocolError::BadPayload { .. } => "bad_payload",
            ProtocolError::ChunkTooLarge(_) => "chunk_too_large",
        }
    }
}

/// Decoded size of a padded base64 string.
fn decoded_len(b64: &str) -> usize {
    let pad = b64.bytes().rev().take_while(|b| *b == b'=').count();
    (b64.len() / 4 * 3).saturating_sub(pad) + (b64.len() % 4) * 3 / 4
}

pub fn parse_client(text: &str) -> Result<ClientEnvelope, ProtocolError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::NotJson(e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| ProtocolError::NotJson("expected an object".into()))?;
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(ProtocolError::UnknownType(other.to_string())),
        None => return Err(ProtocolError::UnknownType(String::new())),
    };
    if !CLIENT_TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    // payload may be omitted for messages without fields
    if obj.get("payload").is_none_or(Value::is_null) {
        obj.insert("payload".into(), Value::Object(Default::default()));
    }
    let env: ClientEnvelope = serde_json::from_value(value)
        .map_err(|e| ProtocolError::BadPayload { kind: kind.clone(), message: e.to_string() })?;
    if let ClientMessage::AudioChunk { b64, .. } = &env.message {
        let n = decoded_len(b64);
        if n > MAX_AUDIO_CHUNK_BYTES {
            return Err(ProtocolError::ChunkTooLarge(n));
        }
    }
    Ok(env)
}
