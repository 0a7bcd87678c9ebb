//! Turns wire frames into session calls and session events into frames.
//! Synchronous on purpose: the WebSocket layer and the simulator both drive
//! it, so they cannot drift apart.

use std::path::PathBuf;
use std::sync::Arc;

use vpatient_core::clock::Clock;
use vpatient_core::responder::{LlmResponder, Responder, ScriptedResponder};
use vpatient_core::scenario::{Role, ScenarioPack, SceneSpec};
use vpatient_core::session::{FileSink, Session, SessionConfig, SessionEvent};

use crate::llm::{HttpChatTransport, LlmConfig};
use crate::protocol::{parse_client, ClientEnvelope, ClientMessage, SceneSummary, ServerEnvelope, ServerMessage};

pub type ResponderFactory = Arc<dyn Fn(Arc<ScenarioPack>) -> Box<dyn Responder> + Send + Sync>;

#[derive(Clone)]
pub enum ResponderChoice {
    Scripted,
    Llm(LlmConfig),
    Custom(ResponderFactory),
}

impl std::fmt::Debug for ResponderChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResponderChoice::Scripted => f.write_str("Scripted"),
            ResponderChoice::Llm(c) => f.debug_tuple("Llm").field(c).finish(),
            ResponderChoice::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Everything shared by the sessions of one server.
#[derive(Clone)]
pub struct ServerContext {
    pub pack: Arc<ScenarioPack>,
    pub responder: ResponderChoice,
    /// Records go to `<data_dir>/<session id>.jsonl` when set.
    pub data_dir: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
    pub session: SessionConfig,
}

impl ServerContext {
    fn build_responder(&self) -> Result<Box<dyn Responder>, String> {
        Ok(match &self.responder {
            ResponderChoice::Scripted => Box::new(ScriptedResponder::new(Arc::clone(&self.pack))),
            ResponderChoice::Llm(cfg) => {
                let transport = HttpChatTransport::new(cfg.clone()).map_err(|e| e.to_string())?;
                Box::new(LlmResponder::new(Arc::clone(&self.pack), Box::new(transport)))
            }
            ResponderChoice::Custom(f) => f(Arc::clone(&self.pack)),
        })
    }
}

fn summary(scene: &SceneSpec) -> SceneSummary {
    SceneSummary { id: scene.id.clone(), title: scene.title.clone() }
}

pub struct SessionDriver {
    ctx: ServerContext,
    session_id: String,
    session: Option<Session>,
}

impl SessionDriver {
    pub fn new(ctx: ServerContext, session_id: impl Into<String>) -> Self {
        SessionDriver { ctx, session_id: session_id.into(), session: None }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn session_mut(&mut self) -> Option<&mut Session> {
        self.session.as_mut()
    }

    pub fn now_ms(&self) -> u64 {
        self.ctx.clock.now_ms()
    }

    pub fn speaking_until(&self) -> Option<u64> {
        self.session.as_ref().and_then(Session::speaking_until)
    }

    fn frame(&self, turn_id: Option<u64>, message: ServerMessage) -> ServerEnvelope {
        ServerEnvelope { session_id: Some(self.session_id.clone()), turn_id, message }
    }

    fn error(&self, turn_id: Option<u64>, code: &str, message: impl Into<String>) -> ServerEnvelope {
        ServerEnvelope::error(Some(self.session_id.clone()), turn_id, code, message)
    }

    /// One inbound text frame. Bad frames get an error reply; the
    /// connection is never dropped for them.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerEnvelope> {
        match parse_client(text) {
            Ok(env) => self.handle(env),
            Err(e) => {
                tracing::debug!(session = %self.session_id, error = %e, "rejected frame");
                vec![self.error(None, e.code(), e.to_string())]
            }
        }
    }

    pub fn handle(&mut self, env: ClientEnvelope) -> Vec<ServerEnvelope> {
        if let Some(sid) = &env.session_id {
            if *sid != self.session_id && !matches!(env.message, ClientMessage::Hello { .. }) {
                return vec![self.error(env.turn_id, "wrong_session", format!("this connection is session {}", self.session_id))];
            }
        }
        if let ClientMessage::Ping {} = env.message {
            return vec![self.frame(None, ServerMessage::Pong {})];
        }
        if let ClientMessage::Hello { role, scene_id, display_name } = env.message {
            return self.hello(role, &scene_id, display_name);
        }
        let Some(session) = self.session.as_mut() else {
            return vec![self.error(env.turn_id, "no_session", "send hello first")];
        };
        let events = match env.message {
            ClientMessage::GateOpen {} => session.gate_open(),
            ClientMessage::AudioChunk { b64, .. } => session.input_chunk(env.turn_id, b64),
            ClientMessage::GateClose {} => session.gate_close(),
            ClientMessage::TextInput { text } => session.text_input(&text),
            ClientMessage::SwitchScene { scene_id } => session.switch_scene(&scene_id),
            ClientMessage::SetRole { role } => {
                let ev = session.tick();
                session.set_role(role);
                ev
            }
            ClientMessage::Ping {} | ClientMessage::Hello { .. } => unreachable!("handled above"),
        };
        self.translate(events)
    }

    fn hello(&mut self, role: Role, scene_id: &str, display_name: Option<String>) -> Vec<ServerEnvelope> {
        if self.session.is_some() {
            return vec![self.error(None, "already_started", "this connection already has a session")];
        }
        let Some(scene) = self.ctx.pack.scene(scene_id) else {
            return vec![self.error(None, "unknown_scene", format!("no scene {scene_id:?} in this scenario"))];
        };
        let responder = match self.ctx.build_responder() {
            Ok(r) => r,
            Err(e) => return vec![self.error(None, "responder_unavailable", e)],
        };
        let mut session = match Session::new(
            self.session_id.clone(),
            Arc::clone(&self.ctx.pack),
            scene_id,
            role,
            self.ctx.session.clone(),
            responder,
            Arc::clone(&self.ctx.clock),
        ) {
            Ok(s) => s,
            Err(e) => return vec![self.error(None, "unknown_scene", e.to_string())],
        };
        let mut out = Vec::new();
        if let Some(dir) = &self.ctx.data_dir {
            let path = dir.join(format!("{}.jsonl", self.session_id));
            let attached = FileSink::create(&path).and_then(|sink| session.attach_sink(Box::new(sink)));
            if let Err(e) = attached {
                tracing::error!(path = %path.display(), error = %e, "session record unavailable");
                out.push(self.error(None, "storage_failed", format!("session will not be recorded: {e}")));
            }
        }
        tracing::info!(session = %self.session_id, %role, scene = scene_id, user = ?display_name, "session started");
        let ack = ServerMessage::SessionAck {
            session_id: self.session_id.clone(),
            persona: self.ctx.pack.persona.name.clone(),
            role,
            scene: summary(scene),
            setting: scene.setting_description.clone(),
            scenes: self.ctx.pack.scenes.iter().map(summary).collect(),
        };
        out.insert(0, self.frame(None, ack));
        out.push(self.frame(Some(0), ServerMessage::State { turn_state: session.phase() }));
        self.session = Some(session);
        out
    }

    /// Ends playback when due; call when the speaking timer fires.
    pub fn tick(&mut self) -> Vec<ServerEnvelope> {
        let events = self.session.as_mut().map(Session::tick).unwrap_or_default();
        self.translate(events)
    }

    /// Connection closed.
    pub fn finish(&mut self) -> Vec<ServerEnvelope> {
        let events = self.session.as_mut().map(Session::finish).unwrap_or_default();
        self.translate(events)
    }

    fn translate(&self, events: Vec<SessionEvent>) -> Vec<ServerEnvelope> {
        events.into_iter().map(|e| self.translate_one(e)).collect()
    }

    fn translate_one(&self, event: SessionEvent) -> ServerEnvelope {
        match event {
            SessionEvent::State { turn_id, phase } => self.frame(Some(turn_id), ServerMessage::State { turn_state: phase }),
            SessionEvent::Transcript { turn_id, speaker, text } => {
                self.frame(Some(turn_id), ServerMessage::Transcript { speaker: speaker.label().to_string(), text })
            }
            SessionEvent::PatientResponse(r) => self.frame(
                Some(r.turn_id),
                ServerMessage::PatientResponse {
                    text: r.text,
                    clip_id: r.clip_id,
                    expression: r.expression,
                    start_offset_ms: r.plan.start_offset_ms,
                    play_duration_ms: r.plan.play_duration_ms,
                    audio_duration_ms: r.audio_duration_ms,
                    loop_count: r.plan.loop_count,
                },
            ),
            SessionEvent::InputDiscarded { turn_id, reason } => {
                self.frame(Some(turn_id), ServerMessage::InputDiscarded { reason: reason.as_str().to_string() })
            }
            SessionEvent::Rejected { turn_id, reason } => {
                let message = match reason {
                    vpatient_core::dialogue::RejectReason::PatientSpeaking => "wait until the patient has finished",
                    vpatient_core::dialogue::RejectReason::Busy => "a turn is in progress",
                };
                self.error(Some(turn_id), reason.as_str(), message)
            }
            SessionEvent::SceneChanged { scene_id } => {
                let scene = self
                    .ctx
                    .pack
                    .scene(&scene_id)
                    .map(summary)
                    .unwrap_or(SceneSummary { id: scene_id, title: String::new() });
                self.frame(None, ServerMessage::SceneChanged { scene })
            }
            SessionEvent::Error { turn_id, code, message } => self.error(Some(turn_id), &code, message),
        }
    }
}
