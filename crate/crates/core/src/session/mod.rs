//! One interview session: the turn machine, the reply pipeline, and the
//! append-only record. Everything the transport layer needs goes through
//! [`Session`]; it never blocks on anything but the responder.

mod metrics;
mod persist;
mod record;
mod replay;

use std::collections::BTreeMap;
use std::io;
use std::sync::Arc;

use serde::Serialize;

use crate::clock::Clock;
use crate::dialogue::{
    suppress_repetition, ChunkVerdict, DialogueManager, DiscardReason, GateCloseOutcome, GateOpenOutcome,
    InputChunk, InputSource, RejectReason, RepetitionConfig, TextChunkTranscriber, Transcriber, TurnPhase,
    DEFAULT_GATE_COOLDOWN_MS,
};
use crate::responder::{
    leaked_terms, record_ask, redact, HistoryTurn, Responder, ResponderContext, ResponseRequest, TurnSpeaker,
    FALLBACK_INTENT_KEY,
};
use crate::scenario::{Role, ScenarioPack};
use crate::timeline::{estimate_audio_duration, measure_desync, plan_playback, trim_lead_in, PlaybackPlan, SpeechRate};
use crate::trigger::{detect_input_triggers, detect_output_negation, select_animation};

pub use metrics::{
    annotations_path, collect_metrics, load_annotations, percentile, save_annotations, AnnotationError,
    MetricsReport, SeverityAnnotation, TurnMetrics, UsabilitySeverity,
};
pub use persist::{encode_line, encode_record, FileSink, MemorySink, RecordSink};
pub use record::{RecordLine, SessionHeader, SessionRecord, Speaker, TranscriptEntry, PROVIDER_LABEL};
pub use replay::{parse_record, read_record, render_timeline, reproduce, LoadedRecord, ReplayError, ReplayMismatch};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub seed: u64,
    pub speech_rate: SpeechRate,
    pub repetition: RepetitionConfig,
    pub gate_cooldown_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            seed: 0,
            speech_rate: SpeechRate::default(),
            repetition: RepetitionConfig::default(),
            gate_cooldown_ms: DEFAULT_GATE_COOLDOWN_MS,
        }
    }
}

/// Source of the reply's speech length. A speech synthesizer reports real
/// timing; without one the words-per-minute estimate is used.
pub trait AudioTiming: Send {
    fn duration_ms(&mut self, reply: &str) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EstimatedAudio(pub SpeechRate);

impl AudioTiming for EstimatedAudio {
    fn duration_ms(&mut self, reply: &str) -> u64 {
        estimate_audio_duration(reply, self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("scene {0:?} has no usable fallback clip")]
    BrokenScene(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatientResponse {
    pub turn_id: u64,
    pub text: String,
    pub clip_id: String,
    pub expression: String,
    pub rule_id: Option<String>,
    pub plan: PlaybackPlan,
    pub audio_duration_ms: u64,
    pub emitted_at_ms: u64,
    pub fallback: bool,
}

/// Everything a session tells its client.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    State { turn_id: u64, phase: TurnPhase },
    Transcript { turn_id: u64, speaker: Speaker, text: String },
    PatientResponse(PatientResponse),
    InputDiscarded { turn_id: u64, reason: DiscardReason },
    Rejected { turn_id: u64, reason: RejectReason },
    SceneChanged { scene_id: String },
    Error { turn_id: u64, code: String, message: String },
}

pub struct Session {
    pack: Arc<ScenarioPack>,
    config: SessionConfig,
    dialogue: DialogueManager,
    ctx: ResponderContext,
    responder: Box<dyn Responder>,
    transcriber: Box<dyn Transcriber>,
    audio: Box<dyn AudioTiming>,
    clock: Arc<dyn Clock>,
    record: SessionRecord,
    sink: Option<Box<dyn RecordSink>>,
    pending_discards: BTreeMap<DiscardReason, u64>,
    speaking_until: Option<u64>,
    finished: bool,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        pack: Arc<ScenarioPack>,
        scene_id: &str,
        role: Role,
        config: SessionConfig,
        responder: Box<dyn Responder>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, SessionError> {
        let scene = pack.scene(scene_id).ok_or_else(|| SessionError::UnknownScene(scene_id.to_string()))?;
        if pack.clip(&scene.fallback_clip_id).is_none() {
            return Err(SessionError::BrokenScene(scene_id.to_string()));
        }
        let header = SessionHeader {
            session_id: id.into(),
            scenario_version: pack.version.clone(),
            persona: pack.persona.name.clone(),
            scene_id: scene_id.to_string(),
            role,
            seed: config.seed,
            responder: responder.kind().to_string(),
            started_ms: clock.now_ms(),
        };
        Ok(Session {
            dialogue: DialogueManager::new(config.gate_cooldown_ms),
            ctx: ResponderContext::new(scene_id, role, config.seed),
            audio: Box::new(EstimatedAudio(config.speech_rate)),
            transcriber: Box::new(TextChunkTranscriber),
            record: SessionRecord::new(header),
            sink: None,
            pending_discards: BTreeMap::new(),
            speaking_until: None,
            finished: false,
            pack,
            config,
            responder,
            clock,
        })
    }

    pub fn with_transcriber(mut self, transcriber: Box<dyn Transcriber>) -> Self {
        self.transcriber = transcriber;
        self
    }

    pub fn with_audio_timing(mut self, audio: Box<dyn AudioTiming>) -> Self {
        self.audio = audio;
        self
    }

    /// Starts persisting. Whatever is already recorded is written first.
    pub fn attach_sink(&mut self, mut sink: Box<dyn RecordSink>) -> io::Result<()> {
        let mut chunk = encode_line(&RecordLine::Header(self.record.header.clone()));
        for e in &self.record.entries {
            chunk.push_str(&encode_line(&RecordLine::Entry(e.clone())));
        }
        sink.append(&chunk)?;
        self.sink = Some(sink);
        Ok(())
    }

    pub fn sink_location(&self) -> Option<String> {
        self.sink.as_ref().map(|s| s.location())
    }

    pub fn id(&self) -> &str {
        &self.record.header.session_id
    }

    pub fn pack(&self) -> &ScenarioPack {
        &self.pack
    }

    pub fn phase(&self) -> TurnPhase {
        self.dialogue.phase()
    }

    pub fn current_turn_id(&self) -> u64 {
        self.dialogue.state().current_turn_id()
    }

    pub fn scene_id(&self) -> &str {
        &self.ctx.scene_id
    }

    pub fn role(&self) -> Role {
        self.ctx.active_role
    }

    pub fn context(&self) -> &ResponderContext {
        &self.ctx
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// When the current reply's playback ends, if the patient is speaking.
    pub fn speaking_until(&self) -> Option<u64> {
        self.speaking_until
    }

    pub fn metrics(&self, annotations: &[SeverityAnnotation]) -> MetricsReport {
        let mut record = self.record.clone();
        record.trailing_discards = self.pending_discards.clone();
        collect_metrics(&record, annotations)
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn states(&mut self) -> Vec<SessionEvent> {
        self.dialogue
            .take_transitions()
            .into_iter()
            .map(|t| SessionEvent::State { turn_id: t.turn_id, phase: t.to })
            .collect()
    }

    /// Ends playback once its window has passed.
    pub fn tick(&mut self) -> Vec<SessionEvent> {
        match self.speaking_until {
            Some(until) if self.now() >= until => {
                self.speaking_until = None;
                self.dialogue.finish_speaking();
                self.states()
            }
            _ => Vec::new(),
        }
    }

    pub fn gate_open(&mut self) -> Vec<SessionEvent> {
        let mut events = self.tick();
        match self.dialogue.on_gate_open() {
            GateOpenOutcome::Opened { .. } => events.extend(self.states()),
            GateOpenOutcome::AlreadyOpen => {}
            GateOpenOutcome::Rejected(reason) => {
                events.push(SessionEvent::Rejected { turn_id: self.current_turn_id(), reason })
            }
        }
        events
    }

    pub fn input_chunk(&mut self, turn_id: Option<u64>, payload: String) -> Vec<SessionEvent> {
        let mut events = self.tick();
        let chunk = InputChunk { turn_id, at_ms: self.now(), payload };
        if let ChunkVerdict::Discarded(reason) = self.dialogue.on_input_chunk(chunk) {
            *self.pending_discards.entry(reason).or_insert(0) += 1;
            events.push(SessionEvent::InputDiscarded { turn_id: self.current_turn_id(), reason });
        }
        events
    }

    pub fn gate_close(&mut self) -> Vec<SessionEvent> {
        let mut events = self.tick();
        let closed_at = self.now();
        let outcome = self.dialogue.on_gate_close(closed_at, self.transcriber.as_mut());
        events.extend(self.states());
        events.extend(self.after_close(outcome, closed_at));
        events
    }

    pub fn text_input(&mut self, text: &str) -> Vec<SessionEvent> {
        let mut events = self.tick();
        let closed_at = self.now();
        match self.dialogue.on_text_input(text) {
            Ok(outcome) => {
                events.extend(self.states());
                events.extend(self.after_close(outcome, closed_at));
            }
            Err(reason) => events.push(SessionEvent::Rejected { turn_id: self.current_turn_id(), reason }),
        }
        events
    }

    fn after_close(&mut self, outcome: GateCloseOutcome, closed_at: u64) -> Vec<SessionEvent> {
        match outcome {
            GateCloseOutcome::Finalized { turn_id, text, source } => self.run_turn(turn_id, &text, source, closed_at),
            GateCloseOutcome::Empty { .. } => Vec::new(),
            GateCloseOutcome::TranscriberFailed { turn_id, message } => {
                vec![SessionEvent::Error { turn_id, code: "transcriber_failed".into(), message }]
            }
            GateCloseOutcome::NotListening => vec![SessionEvent::Error {
                turn_id: self.current_turn_id(),
                code: "not_listening".into(),
                message: "the input gate is not open".into(),
            }],
        }
    }

    /// The reply pipeline. Runs only from `Generating`, after the utterance
    /// is final.
    fn run_turn(&mut self, turn_id: u64, utterance: &str, source: InputSource, closed_at: u64) -> Vec<SessionEvent> {
        debug_assert_eq!(self.dialogue.phase(), TurnPhase::Generating);
        let scene_id = self.ctx.scene_id.clone();
        let role = self.ctx.active_role;
        let mut events = vec![SessionEvent::Transcript { turn_id, speaker: Speaker::Provider, text: utterance.to_string() }];

        // the responder sees asks counted before this utterance
        let counters_after = record_ask(&self.ctx.disclosure_counters, utterance, &self.pack.disclosure_rules);

        let req = ResponseRequest { ctx: &self.ctx, utterance, attempt: 0, directive: None };
        let reply = match self.responder.respond(&req) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(session = %self.id(), turn_id, error = %e, "responder failed");
                self.dialogue.responder_failed();
                events.extend(self.states());
                events.push(SessionEvent::Error { turn_id, code: e.code().into(), message: e.to_string() });
                return events;
            }
        };

        let pack = Arc::clone(&self.pack);
        let scene = pack.scene(&scene_id).expect("scene checked on entry");
        let history: Vec<String> = self.ctx.patient_replies().into_iter().map(str::to_string).collect();
        let ctx = &self.ctx;
        let responder = &mut self.responder;
        let outcome = suppress_repetition(&reply.text, &history, &self.config.repetition, &scene.fallback_lines, |d| {
            let req = ResponseRequest { ctx, utterance, attempt: 1, directive: Some(d) };
            responder.respond(&req).ok().map(|r| r.text)
        });

        // last line of defence for any responder
        let mut text = outcome.text.clone();
        if !leaked_terms(&text, &pack, &self.ctx.disclosure_counters).is_empty() {
            text = redact(&text, &pack, &self.ctx.disclosure_counters);
        }

        let matches = detect_input_triggers(utterance, scene);
        let negated = detect_output_negation(&text, &pack.negation_tokens);
        let selection = select_animation(&pack, scene, &matches, negated);
        let clip = pack
            .clip(&selection.clip_id)
            .or_else(|| pack.clip(&scene.fallback_clip_id))
            .expect("clip references are validated");
        let audio_ms = self.audio.duration_ms(&text);
        let plan = plan_playback(&trim_lead_in(clip), audio_ms).expect("trimmed clip has no lead-in");
        let desync = measure_desync(&plan, audio_ms);

        let now = self.now();
        let fallback = reply.fallback || outcome.used_fallback;
        let key = reply.intent_id.clone().unwrap_or_else(|| FALLBACK_INTENT_KEY.to_string());
        *self.ctx.intent_uses.entry(key).or_insert(0) += 1;
        self.ctx.disclosure_counters = counters_after;
        self.ctx.history.push(HistoryTurn { speaker: TurnSpeaker::Provider, text: utterance.to_string() });
        self.ctx.history.push(HistoryTurn { speaker: TurnSpeaker::Patient, text: text.clone() });

        let mut provider = TranscriptEntry::provider(closed_at, turn_id, &scene_id, role, source, utterance);
        provider.discards = std::mem::take(&mut self.pending_discards);
        let patient = TranscriptEntry {
            timestamp_ms: now,
            turn_id,
            speaker: Speaker::Patient(pack.persona.name.clone()),
            scene_id: scene_id.clone(),
            text: text.clone(),
            role: None,
            source: None,
            intent_id: reply.intent_id.clone(),
            trigger_rule_id: selection.rule_id.clone(),
            clip_id: Some(plan.clip_id.clone()),
            expression: Some(selection.expression_tag.clone()),
            latency_ms: Some(now.saturating_sub(closed_at)),
            desync_ms: Some(desync),
            audio_duration_ms: Some(audio_ms),
            play_duration_ms: Some(plan.play_duration_ms),
            repetition_score: Some(outcome.initial_score),
            repetition_incident: outcome.incident(),
            fallback,
            discards: BTreeMap::new(),
        };
        let lines = format!(
            "{}{}",
            encode_line(&RecordLine::Entry(provider.clone())),
            encode_line(&RecordLine::Entry(patient.clone()))
        );
        self.record.entries.push(provider);
        self.record.entries.push(patient);
        if let Some(err) = self.persist(&lines) {
            events.push(err(turn_id));
        }

        self.dialogue.begin_speaking();
        self.speaking_until = Some(now + plan.play_duration_ms);
        events.extend(self.states());
        events.push(SessionEvent::PatientResponse(PatientResponse {
            turn_id,
            text: text.clone(),
            clip_id: plan.clip_id.clone(),
            expression: selection.expression_tag,
            rule_id: selection.rule_id,
            audio_duration_ms: audio_ms,
            emitted_at_ms: now,
            fallback,
            plan,
        }));
        events.push(SessionEvent::Transcript { turn_id, speaker: Speaker::Patient(pack.persona.name.clone()), text });
        events
    }

    fn persist(&mut self, chunk: &str) -> Option<impl FnOnce(u64) -> SessionEvent> {
        let sink = self.sink.as_mut()?;
        let err = sink.append(chunk).err()?;
        tracing::error!(location = %sink.location(), error = %err, "record write failed");
        let message = format!("could not write session record: {err}");
        Some(move |turn_id| SessionEvent::Error { turn_id, code: "storage_failed".into(), message })
    }

    /// Switches scene between turns. Counters and history carry over.
    pub fn switch_scene(&mut self, scene_id: &str) -> Vec<SessionEvent> {
        let mut events = self.tick();
        let turn_id = self.current_turn_id();
        if self.dialogue.phase() != TurnPhase::Idle {
            events.push(SessionEvent::Rejected { turn_id, reason: RejectReason::Busy });
            return events;
        }
        let Some(scene) = self.pack.scene(scene_id) else {
            events.push(SessionEvent::Error {
                turn_id,
                code: "unknown_scene".into(),
                message: format!("no scene {scene_id:?} in this scenario"),
            });
            return events;
        };
        self.ctx.scene_id = scene.id.clone();
        self.record.scene_history.push(scene.id.clone());
        events.push(SessionEvent::SceneChanged { scene_id: scene.id.clone() });
        events
    }

    pub fn set_role(&mut self, role: Role) {
        self.ctx.active_role = role;
    }

    /// Writes discards that followed the last turn. Idempotent.
    pub fn finish(&mut self) -> Vec<SessionEvent> {
        if self.finished {
            return Vec::new();
        }
        self.finished = true;
        if self.pending_discards.is_empty() {
            return Vec::new();
        }
        self.record.trailing_discards = self.pending_discards.clone();
        let line = encode_line(&RecordLine::Trailer { discards: self.pending_discards.clone() });
        let turn_id = self.current_turn_id();
        self.persist(&line).map(|e| e(turn_id)).into_iter().collect()
    }
}
