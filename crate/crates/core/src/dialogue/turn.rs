use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

/// Post-close window during which late chunks are still discarded.
pub const DEFAULT_GATE_COOLDOWN_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnPhase {
    Idle,
    Listening,
    Finalizing,
    Generating,
    Speaking,
}

impl TurnPhase {
    pub const ALL: [TurnPhase; 5] = [
        TurnPhase::Idle,
        TurnPhase::Listening,
        TurnPhase::Finalizing,
        TurnPhase::Generating,
        TurnPhase::Speaking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TurnPhase::Idle => "idle",
            TurnPhase::Listening => "listening",
            TurnPhase::Finalizing => "finalizing",
            TurnPhase::Generating => "generating",
            TurnPhase::Speaking => "speaking",
        }
    }
}

impl fmt::Display for TurnPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The only legal moves of the turn machine.
pub fn is_legal_transition(from: TurnPhase, to: TurnPhase) -> bool {
    use TurnPhase::*;
    matches!(
        (from, to),
        (Idle, Listening)
            | (Listening, Finalizing)
            | (Finalizing, Generating)
            | (Generating, Speaking)
            | (Speaking, Idle)
            | (Listening, Idle)
            | (Finalizing, Idle)
            | (Generating, Idle)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub turn_id: u64,
    pub from: TurnPhase,
    pub to: TurnPhase,
}

/// Per-session conversation state. `gate_open()` is true exactly in
/// `Listening`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnState {
    phase: TurnPhase,
    current_turn_id: u64,
}

impl Default for TurnState {
    fn default() -> Self {
        TurnState { phase: TurnPhase::Idle, current_turn_id: 0 }
    }
}

impl TurnState {
    pub fn phase(&self) -> TurnPhase {
        self.phase
    }

    pub fn gate_open(&self) -> bool {
        self.phase == TurnPhase::Listening
    }

    pub fn current_turn_id(&self) -> u64 {
        self.current_turn_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Voice,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputChunk {
    /// Turn the client believes it is speaking in; `None` means current.
    pub turn_id: Option<u64>,
    pub at_ms: u64,
    /// Opaque base64 payload; only the transcriber looks inside.
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UtteranceBuffer {
    pub turn_id: u64,
    pub chunks: Vec<String>,
    pub source: Option<InputSource>,
    pub finalized_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    GateClosed,
    StaleTurn,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::GateClosed => "gate_closed",
            DiscardReason::StaleTurn => "stale_turn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkVerdict {
    Accepted,
    Discarded(DiscardReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PatientSpeaking,
    Busy,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::PatientSpeaking => "patient_speaking",
            RejectReason::Busy => "busy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOpenOutcome {
    Opened { turn_id: u64 },
    AlreadyOpen,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateCloseOutcome {
    /// Text finalized; the machine is now `Generating`.
    Finalized { turn_id: u64, text: String, source: InputSource },
    /// Nothing was said; back to `Idle`, no patient turn.
    Empty { turn_id: u64 },
    /// Transcription failed; back to `Idle`.
    TranscriberFailed { turn_id: u64, message: String },
    /// The gate was not open.
    NotListening,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcription failed: {0}")]
pub struct TranscribeError(pub String);

/// Speech-to-text behind the input gate.
pub trait Transcriber: Send {
    fn transcribe(&mut self, chunks: &[String]) -> Result<String, TranscribeError>;
}

/// Reference transcriber: every chunk is base64 of UTF-8 text; the
/// transcript is their space-joined concatenation.
#[derive(Debug, Clone, Copy, Default)]
pub struct TextChunkTranscriber;

impl Transcriber for TextChunkTranscriber {
    fn transcribe(&mut self, chunks: &[String]) -> Result<String, TranscribeError> {
        let mut parts = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(chunk.as_bytes())
                .map_err(|e| TranscribeError(format!("chunk {i}: {e}")))?;
            let text = String::from_utf8(bytes).map_err(|e| TranscribeError(format!("chunk {i}: {e}")))?;
            let trimmed = text.trim();
            if !trimmed.is_empty() {
                parts.push(trimmed.to_string());
            }
        }
        Ok(parts.join(" "))
    }
}

/// Encodes text the way [`TextChunkTranscriber`] expects.
pub fn encode_text_chunk(text: &str) -> String {
    base64::engine::general_purpose::STANDARD.encode(text.as_bytes())
}

/// Push-to-talk gate and turn machine for one session.
///
/// Every phase change goes through one checked transition and is recorded;
/// callers drain the record with [`DialogueManager::take_transitions`].
#[derive(Debug, Clone)]
pub struct DialogueManager {
    state: TurnState,
    buffer: UtteranceBuffer,
    cooldown_ms: u64,
    closed_at_ms: Option<u64>,
    transitions: Vec<Transition>,
}

impl Default for DialogueManager {
    fn default() -> Self {
        Self::new(DEFAULT_GATE_COOLDOWN_MS)
    }
}

impl DialogueManager {
    pub fn new(cooldown_ms: u64) -> Self {
        DialogueManager {
            state: TurnState::default(),
            buffer: UtteranceBuffer::default(),
            cooldown_ms,
            closed_at_ms: None,
            transitions: Vec::new(),
        }
    }

    pub fn state(&self) -> &TurnState {
        &self.state
    }

    pub fn phase(&self) -> TurnPhase {
        self.state.phase
    }

    pub fn buffer(&self) -> &UtteranceBuffer {
        &self.buffer
    }

    pub fn take_transitions(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.transitions)
    }

    fn go(&mut self, to: TurnPhase) {
        let from = self.state.phase;
        assert!(is_legal_transition(from, to), "illegal turn transition {from} -> {to}");
        self.state.phase = to;
        self.transitions.push(Transition { turn_id: self.state.current_turn_id, from, to });
    }

    fn start_turn(&mut self, source: InputSource) -> u64 {
        self.state.current_turn_id += 1;
        self.buffer = UtteranceBuffer {
            turn_id: self.state.current_turn_id,
            chunks: Vec::new(),
            source: Some(source),
            finalized_text: None,
        };
        self.go(TurnPhase::Listening);
        self.state.current_turn_id
    }

    pub fn on_gate_open(&mut self) -> GateOpenOutcome {
        match self.state.phase {
            TurnPhase::Idle => GateOpenOutcome::Opened { turn_id: self.start_turn(InputSource::Voice) },
            TurnPhase::Listening => GateOpenOutcome::AlreadyOpen,
            TurnPhase::Generating | TurnPhase::Speaking => {
                GateOpenOutcome::Rejected(RejectReason::PatientSpeaking)
            }
            TurnPhase::Finalizing => GateOpenOutcome::Rejected(RejectReason::Busy),
        }
    }

    /// Accepts a chunk only while listening, for the current turn, and
    /// outside the cooldown after the previous close.
    pub fn on_input_chunk(&mut self, chunk: InputChunk) -> ChunkVerdict {
        if self.state.phase != TurnPhase::Listening {
            return ChunkVerdict::Discarded(DiscardReason::GateClosed);
        }
        if let Some(closed) = self.closed_at_ms {
            if chunk.at_ms < closed.saturating_add(self.cooldown_ms) {
                return ChunkVerdict::Discarded(DiscardReason::GateClosed);
            }
        }
        if chunk.turn_id.is_some_and(|t| t != self.state.current_turn_id) {
            return ChunkVerdict::Discarded(DiscardReason::StaleTurn);
        }
        self.buffer.chunks.push(chunk.payload);
        ChunkVerdict::Accepted
    }

    /// Finalizes the buffered utterance. Generation may begin only after this
    /// returns `Finalized`.
    pub fn on_gate_close(&mut self, now_ms: u64, transcriber: &mut dyn Transcriber) -> GateCloseOutcome {
        if self.state.phase != TurnPhase::Listening {
            return GateCloseOutcome::NotListening;
        }
        let turn_id = self.state.current_turn_id;
        self.closed_at_ms = Some(now_ms);
        if self.buffer.chunks.is_empty() {
            self.go(TurnPhase::Idle);
            return GateCloseOutcome::Empty { turn_id };
        }
        self.go(TurnPhase::Finalizing);
        match transcriber.transcribe(&self.buffer.chunks) {
            Err(e) => {
                self.go(TurnPhase::Idle);
                GateCloseOutcome::TranscriberFailed { turn_id, message: e.0 }
            }
            Ok(text) => self.finalize(turn_id, text, InputSource::Voice),
        }
    }

    /// Typed input: a whole turn in one step. Only accepted from `Idle`.
    pub fn on_text_input(&mut self, text: &str) -> Result<GateCloseOutcome, RejectReason> {
        match self.state.phase {
            TurnPhase::Idle => {}
            TurnPhase::Generating | TurnPhase::Speaking => return Err(RejectReason::PatientSpeaking),
            TurnPhase::Listening | TurnPhase::Finalizing => return Err(RejectReason::Busy),
        }
        let turn_id = self.start_turn(InputSource::Text);
        if text.trim().is_empty() {
            self.go(TurnPhase::Idle);
            return Ok(GateCloseOutcome::Empty { turn_id });
        }
        self.buffer.chunks.push(text.to_string());
        self.go(TurnPhase::Finalizing);
        Ok(self.finalize(turn_id, text.to_string(), InputSource::Text))
    }

    fn finalize(&mut self, turn_id: u64, text: String, source: InputSource) -> GateCloseOutcome {
        let text = text.trim().to_string();
        if text.is_empty() {
            self.go(TurnPhase::Idle);
            return GateCloseOutcome::Empty { turn_id };
        }
        self.buffer.finalized_text = Some(text.clone());
        self.go(TurnPhase::Generating);
        GateCloseOutcome::Finalized { turn_id, text, source }
    }

    /// Patient reply emitted. Returns false if not generating.
    pub fn begin_speaking(&mut self) -> bool {
        if self.state.phase != TurnPhase::Generating {
            return false;
        }
        self.go(TurnPhase::Speaking);
        true
    }

    /// Playback window elapsed. Returns false if not speaking.
    pub fn finish_speaking(&mut self) -> bool {
        if self.state.phase != TurnPhase::Speaking {
            return false;
        }
        self.go(TurnPhase::Idle);
        true
    }

    /// Responder failed while generating; back to `Idle`.
    pub fn responder_failed(&mut self) -> bool {
        if self.state.phase != TurnPhase::Generating {
            return false;
        }
        self.go(TurnPhase::Idle);
        true
    }
}
