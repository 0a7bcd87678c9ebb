//! Headless sessions: a script is expanded into the same wire frames a
//! browser would send and fed through the server's driver on a virtual
//! clock, so output is byte-identical for a given script and seed.

use std::path::Path;
use std::sync::Arc;

use vpatient_core::clock::ManualClock;
use vpatient_core::dialogue::encode_text_chunk;
use vpatient_core::scenario::{Role, ScenarioPack};
use vpatient_core::session::{FileSink, MetricsReport, SessionConfig, SessionRecord};
use vpatient_server::protocol::{ClientEnvelope, ClientMessage};
use vpatient_server::{ResponderChoice, ServerContext, ServerEnvelope, ServerMessage, SessionDriver};

use crate::script::{InputMode, SimScript, Step};

/// Virtual epoch of every simulated session.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;
/// Pause between the end of a reply and the next action.
pub const THINK_MS: u64 = 800;
pub const DEFAULT_HOLD_MS: u64 = 1500;
/// Words per audio chunk.
const CHUNK_WORDS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("session refused to start: {0}")]
    Refused(String),
    #[error("cannot write record {path}: {source}")]
    Record { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Every frame the client sent, as JSON, in order.
    pub sent: Vec<String>,
    /// Every frame the server answered with, in order.
    pub received: Vec<ServerEnvelope>,
    pub record: SessionRecord,
    pub metrics: MetricsReport,
}

impl Simulation {
    /// Transcript as shown to the learner.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for f in &self.received {
            match &f.message {
                ServerMessage::Transcript { speaker, text } => {
                    out.push_str(&format!("{speaker}: {text}\n"));
                }
                ServerMessage::SceneChanged { scene } => {
                    out.push_str(&format!("-- scene: {} --\n", scene.title));
                }
                _ => {}
            }
        }
        out
    }
}

pub fn session_id_for_seed(seed: u64) -> String {
    format!("sim-{seed}")
}

struct Runner {
    driver: SessionDriver,
    clock: ManualClock,
    sent: Vec<String>,
    received: Vec<ServerEnvelope>,
}

impl Runner {
    fn send(&mut self, turn_id: Option<u64>, message: ClientMessage) {
        let envelope = ClientEnvelope { session_id: Some(self.driver.session_id().to_string()), turn_id, message };
        let json = serde_json::to_string(&envelope).expect("client frames serialize");
        let replies = self.driver.handle_text(&json);
        self.sent.push(json);
        self.received.extend(replies);
    }

    /// Lets any reply finish playing, then waits a beat.
    fn settle(&mut self) {
        if let Some(until) = self.driver.speaking_until() {
            self.clock.set(until);
            let frames = self.driver.tick();
            self.received.extend(frames);
        }
        self.clock.advance(THINK_MS);
    }

    fn turn_id(&self) -> u64 {
        self.driver.session().map(|s| s.current_turn_id()).unwrap_or(0)
    }

    fn role(&self) -> Option<Role> {
        self.driver.session().map(|s| s.role())
    }
}

/// Runs `script` to completion. `seed` overrides the script's own seed.
pub fn simulate(
    pack: Arc<ScenarioPack>,
    script: &SimScript,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Simulation, SimError> {
    let seed = seed.unwrap_or(script.seed);
    let clock = ManualClock::new(SIM_EPOCH_MS);
    let ctx = ServerContext {
        pack,
        responder: ResponderChoice::Scripted,
        data_dir: None,
        clock: Arc::new(clock.clone()),
        session: SessionConfig { seed, ..SessionConfig::default() },
    };
    let mut r = Runner { driver: SessionDriver::new(ctx, session_id_for_seed(seed)), clock, sent: Vec::new(), received: Vec::new() };

    r.send(None, ClientMessage::Hello { role: script.role, scene_id: script.scene_id.clone(), display_name: None });
    if r.driver.session().is_none() {
        let why = r
            .received
            .iter()
            .find_map(|f| match &f.message {
                ServerMessage::Error { message, .. } => Some(message.clone()),
                _ => None,
            })
            .unwrap_or_default();
        return Err(SimError::Refused(why));
    }
    if let Some(path) = out {
        let record_err = |source| SimError::Record { path: path.display().to_string(), source };
        // an explicit output path is the caller's to replace
        if path.exists() {
            std::fs::remove_file(path).map_err(record_err)?;
        }
        let sink = FileSink::create(path).map_err(record_err)?;
        r.driver.session_mut().expect("session started").attach_sink(Box::new(sink)).map_err(record_err)?;
    }

    for step in &script.steps {
        match step {
            Step::Say { say, role, mode, hold_ms, noise_before, noise_after } => {
                r.settle();
                if let Some(role) = role.filter(|role| Some(*role) != r.role()) {
                    r.send(None, ClientMessage::SetRole { role });
                }
                if let Some(noise) = noise_before {
                    r.send(None, ClientMessage::AudioChunk { seq: 0, b64: encode_text_chunk(noise) });
                    r.clock.advance(300);
                }
                match mode {
                    InputMode::Text => r.send(None, ClientMessage::TextInput { text: say.clone() }),
                    InputMode::Voice => {
                        r.send(None, ClientMessage::GateOpen {});
                        let turn = r.turn_id();
                        let words: Vec<&str> = say.split_whitespace().collect();
                        let chunks: Vec<String> = words.chunks(CHUNK_WORDS).map(|c| c.join(" ")).collect();
                        let hold = hold_ms.unwrap_or(DEFAULT_HOLD_MS);
                        let step_ms = hold / (chunks.len() as u64 + 1);
                        for (seq, chunk) in chunks.iter().enumerate() {
                            r.clock.advance(step_ms);
                            r.send(Some(turn), ClientMessage::AudioChunk { seq: seq as u64, b64: encode_text_chunk(chunk) });
                        }
                        r.clock.advance(step_ms);
                        r.send(Some(turn), ClientMessage::GateClose {});
                    }
                }
                if let Some(noise) = noise_after {
                    r.clock.advance(200);
                    r.send(None, ClientMessage::AudioChunk { seq: 0, b64: encode_text_chunk(noise) });
                }
            }
            Step::SwitchScene { switch_scene } => {
                r.settle();
                r.send(None, ClientMessage::SwitchScene { scene_id: switch_scene.clone() });
            }
            Step::Pause { pause_ms } => {
                r.clock.advance(*pause_ms);
            }
        }
    }
    r.settle();
    let tail = r.driver.finish();
    r.received.extend(tail);

    let session = r.driver.session().expect("session started");
    Ok(Simulation {
        record: session.record().clone(),
        metrics: session.metrics(&[]),
        sent: r.sent,
        received: r.received,
    })
}
