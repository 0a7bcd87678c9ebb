use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::disclosure::{leaked_terms, redact};
use super::{Reply, Responder, ResponderContext, ResponderError, ResponseRequest, TurnSpeaker};
use crate::scenario::{assemble_system_prompt, ScenarioPack};

pub const WITHHOLDING_REMINDER_PREFIX: &str = "Reminder: you must not mention";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("request failed: {0}")]
    Failed(String),
    #[error("malformed endpoint reply: {0}")]
    Malformed(String),
}

impl From<TransportError> for ResponderError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout(ms) => ResponderError::Timeout(ms),
            TransportError::Failed(m) => ResponderError::Transport(m),
            TransportError::Malformed(m) => ResponderError::Malformed(m),
        }
    }
}

/// A chat-completion endpoint. Implementations own credentials; requests
/// carry none.
pub trait ChatTransport: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// One request/response pair, kept for the session record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request: ChatRequest,
    pub response: Result<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmOutcome {
    pub text: String,
    pub regenerated: bool,
    pub redacted: bool,
    pub exchanges: Vec<LlmExchange>,
}

fn call(
    transport: &mut dyn ChatTransport,
    request: ChatRequest,
    exchanges: &mut Vec<LlmExchange>,
) -> Result<String, TransportError> {
    let result = transport.complete(&request).and_then(|text| {
        let trimmed = text.trim().to_string();
        if trimmed.is_empty() {
            Err(TransportError::Malformed("empty completion".into()))
        } else {
            Ok(trimmed)
        }
    });
    exchanges.push(LlmExchange {
        request,
        response: result.clone().map_err(|e| e.to_string()),
    });
    result
}

/// Asks the endpoint for a reply and enforces disclosure gating on it.
///
/// If the reply mentions a term whose rule is still withheld, one
/// regeneration is requested with a reminder appended; a reply that still
/// leaks is redacted. The returned text never contains a withheld term.
pub fn llm_respond(
    ctx: &ResponderContext,
    utterance: &str,
    prompt: &str,
    directive: Option<&str>,
    pack: &ScenarioPack,
    transport: &mut dyn ChatTransport,
) -> Result<LlmOutcome, ResponderError> {
    let mut system = prompt.to_string();
    if let Some(d) = directive {
        system.push_str("\n\n");
        system.push_str(d);
    }
    let mut messages = vec![ChatMessage::new("system", system)];
    for turn in &ctx.history {
        let role = match turn.speaker {
            TurnSpeaker::Provider => "user",
            TurnSpeaker::Patient => "assistant",
        };
        messages.push(ChatMessage::new(role, turn.text.clone()));
    }
    messages.push(ChatMessage::new("user", utterance));

    let mut exchanges = Vec::new();
    let text = call(transport, ChatRequest { messages: messages.clone() }, &mut exchanges)?;

    let leaks = leaked_terms(&text, pack, &ctx.disclosure_counters);
    if leaks.is_empty() {
        return Ok(LlmOutcome { text, regenerated: false, redacted: false, exchanges });
    }

    let terms: Vec<&str> = leaks.iter().map(|(_, t)| *t).collect();
    let mut retry = messages;
    retry.push(ChatMessage::new(
        "system",
        format!(
            "{WITHHOLDING_REMINDER_PREFIX} {} yet. Answer the last question again without it.",
            terms.join(" or ")
        ),
    ));
    let second = call(transport, ChatRequest { messages: retry }, &mut exchanges).unwrap_or(text);
    if leaked_terms(&second, pack, &ctx.disclosure_counters).is_empty() {
        return Ok(LlmOutcome { text: second, regenerated: true, redacted: false, exchanges });
    }
    Ok(LlmOutcome {
        text: redact(&second, pack, &ctx.disclosure_counters),
        regenerated: true,
        redacted: true,
        exchanges,
    })
}

/// [`llm_respond`] behind the [`Responder`] interface.
pub struct LlmResponder {
    pack: Arc<ScenarioPack>,
    transport: Box<dyn ChatTransport>,
    log: Vec<LlmExchange>,
}

impl LlmResponder {
    pub fn new(pack: Arc<ScenarioPack>, transport: Box<dyn ChatTransport>) -> Self {
        LlmResponder { pack, transport, log: Vec::new() }
    }

    pub fn take_log(&mut self) -> Vec<LlmExchange> {
        std::mem::take(&mut self.log)
    }
}

impl Responder for LlmResponder {
    fn respond(&mut self, req: &ResponseRequest<'_>) -> Result<Reply, ResponderError> {
        let prompt = assemble_system_prompt(&self.pack, &req.ctx.scene_id, req.ctx.active_role)
            .map_err(|_| ResponderError::UnknownScene(req.ctx.scene_id.clone()))?;
        let outcome = llm_respond(
            req.ctx,
            req.utterance,
            &prompt,
            req.directive,
            &self.pack,
            self.transport.as_mut(),
        )?;
        self.log.extend(outcome.exchanges);
        Ok(Reply { text: outcome.text, intent_id: None, fallback: false })
    }

    fn kind(&self) -> &'static str {
        "llm"
    }
}
