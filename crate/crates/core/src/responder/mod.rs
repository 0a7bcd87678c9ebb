//! Patient reply generation behind one interface: a deterministic scripted
//! responder and an external chat-completion adapter. Both are subject to
//! disclosure gating.

mod disclosure;
mod llm;
mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::Role;

pub use disclosure::{asked_rules, leaked_terms, mentions_term, record_ask, redact, DisclosureCounters};
pub use llm::{
    llm_respond, ChatMessage, ChatRequest, ChatTransport, LlmExchange, LlmOutcome, LlmResponder, TransportError,
    WITHHOLDING_REMINDER_PREFIX,
};
pub use scripted::{intent_overlap, scripted_respond, ScriptedReply, ScriptedResponder, FALLBACK_INTENT_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnSpeaker {
    Provider,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub speaker: TurnSpeaker,
    pub text: String,
}

/// What a responder sees when asked for a reply.
///
/// `disclosure_counters` holds asks counted before the current utterance, so
/// the first ask about a gated topic sees 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponderContext {
    pub scene_id: String,
    pub active_role: Role,
    pub history: Vec<HistoryTurn>,
    pub disclosure_counters: DisclosureCounters,
    /// Times each intent has answered so far; drives variant rotation.
    pub intent_uses: BTreeMap<String, u32>,
    pub seed: u64,
}

impl ResponderContext {
    pub fn new(scene_id: impl Into<String>, active_role: Role, seed: u64) -> Self {
        ResponderContext {
            scene_id: scene_id.into(),
            active_role,
            history: Vec::new(),
            disclosure_counters: DisclosureCounters::default(),
            intent_uses: BTreeMap::new(),
            seed,
        }
    }

    pub fn patient_replies(&self) -> Vec<&str> {
        self.history
            .iter()
            .filter(|t| t.speaker == TurnSpeaker::Patient)
            .map(|t| t.text.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRequest<'a> {
    pub ctx: &'a ResponderContext,
    pub utterance: &'a str,
    /// 0 for the first try; regenerations count up.
    pub attempt: u32,
    /// Extra instruction for a regeneration, e.g. "do not repeat".
    pub directive: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub text: String,
    pub intent_id: Option<String>,
    /// True when no intent matched and the scene fallback line was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResponderError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("responder timed out after {0} ms")]
    Timeout(u64),
    #[error("responder transport failed: {0}")]
    Transport(String),
    #[error("malformed responder reply: {0}")]
    Malformed(String),
}

impl ResponderError {
    pub fn code(&self) -> &'static str {
        match self {
            ResponderError::UnknownScene(_) => "unknown_scene",
            ResponderError::Timeout(_) => "responder_timeout",
            ResponderError::Transport(_) => "responder_transport",
            ResponderError::Malformed(_) => "responder_malformed",
        }
    }
}

pub trait Responder: Send {
    fn respond(&mut self, req: &ResponseRequest<'_>) -> Result<Reply, ResponderError>;

    /// Short name for logs and session headers.
    fn kind(&self) -> &'static str;
}

impl<R: Responder + ?Sized> Responder for Box<R> {
    fn respond(&mut self, req: &ResponseRequest<'_>) -> Result<Reply, ResponderError> {
        (**self).respond(req)
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }
}
