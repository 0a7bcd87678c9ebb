use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::metrics::SeverityAnnotation;
use super::record::{RecordLine, SessionRecord, Speaker, TranscriptEntry};
use super::{Session, SessionConfig, SessionEvent};
use crate::clock::ManualClock;
use crate::responder::ScriptedResponder;
use crate::scenario::ScenarioPack;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("record has no complete header line")]
    MissingHeader,
    #[error("record cannot be re-run: {0}")]
    NotReproducible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRecord {
    pub record: SessionRecord,
    /// The final line was cut off mid-write and ignored.
    pub truncated_tail: bool,
    /// A provider line without its patient reply was dropped.
    pub dropped_partial_turn: bool,
}

fn corrupt(line: usize, message: impl Into<String>) -> ReplayError {
    ReplayError::Corrupt { line, message: message.into() }
}

/// Parses a JSON Lines record.
///
/// A last line without its newline that does not parse is treated as an
/// interrupted write and skipped. Any other bad line is an error naming it.
pub fn parse_record(text: &str) -> Result<LoadedRecord, ReplayError> {
    let mut record: Option<SessionRecord> = None;
    let mut truncated_tail = false;
    let mut trailer_seen = false;
    // line number of a provider entry still waiting for its reply
    let mut open_turn: Option<usize> = None;

    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let n = idx + 1;
        let complete = raw.ends_with('\n');
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(_) if !complete => {
                truncated_tail = true;
                break;
            }
            Err(e) => return Err(corrupt(n, e.to_string())),
        };
        if trailer_seen {
            return Err(corrupt(n, "data after trailer"));
        }
        match (parsed, record.as_mut()) {
            (RecordLine::Header(h), None) => record = Some(SessionRecord::new(h)),
            (RecordLine::Header(_), Some(_)) => return Err(corrupt(n, "second header")),
            (_, None) => return Err(corrupt(n, "expected header line")),
            (RecordLine::Entry(e), Some(rec)) => {
                match (&e.speaker, open_turn) {
                    (Speaker::Provider, None) => open_turn = Some(n),
                    (Speaker::Patient(_), Some(_)) => {
                        let asked = rec.entries.last().map(|p| p.turn_id);
                        if asked != Some(e.turn_id) {
                            return Err(corrupt(n, format!("reply for turn {} follows turn {:?}", e.turn_id, asked)));
                        }
                        open_turn = None;
                    }
                    (Speaker::Provider, Some(_)) => return Err(corrupt(n, "two provider lines in a row")),
                    (Speaker::Patient(_), None) => return Err(corrupt(n, "patient line without a question")),
                }
                if rec.scene_history.last() != Some(&e.scene_id) {
                    rec.scene_history.push(e.scene_id.clone());
                }
                rec.entries.push(e);
            }
            (RecordLine::Trailer { discards }, Some(rec)) => {
                if let Some(line) = open_turn {
                    return Err(corrupt(line, "turn without reply before trailer"));
                }
                rec.trailing_discards = discards;
                trailer_seen = true;
            }
        }
    }

    let mut record = record.ok_or(ReplayError::MissingHeader)?;
    let dropped_partial_turn = open_turn.is_some();
    if dropped_partial_turn {
        record.entries.pop();
    }
    Ok(LoadedRecord { record, truncated_tail, dropped_partial_turn })
}

pub fn read_record(path: &Path) -> Result<LoadedRecord, ReplayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ReplayError::Io { path: path.display().to_string(), source })?;
    parse_record(&text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayMismatch {
    pub turn_id: u64,
    pub field: &'static str,
    pub recorded: String,
    pub replayed: String,
}

/// Re-runs a scripted session from its inputs and lists every patient line
/// that comes out differently.
pub fn reproduce(record: &SessionRecord, pack: Arc<ScenarioPack>) -> Result<Vec<ReplayMismatch>, ReplayError> {
    let h = &record.header;
    if h.responder != "scripted" {
        return Err(ReplayError::NotReproducible(format!("responder {:?} is not deterministic", h.responder)));
    }
    let clock = ManualClock::new(h.started_ms);
    let cfg = SessionConfig { seed: h.seed, ..SessionConfig::default() };
    let mut session = Session::new(
        h.session_id.clone(),
        Arc::clone(&pack),
        &h.scene_id,
        h.role,
        cfg,
        Box::new(ScriptedResponder::new(pack)),
        Arc::new(clock.clone()),
    )
    .map_err(|e| ReplayError::NotReproducible(e.to_string()))?;

    let mut mismatches = Vec::new();
    for pair in record.entries.chunks(2) {
        let [asked, answered] = pair else { break };
        if asked.scene_id != session.scene_id() {
            session.switch_scene(&asked.scene_id);
            if asked.scene_id != session.scene_id() {
                return Err(ReplayError::NotReproducible(format!("scene {:?} not in scenario", asked.scene_id)));
            }
        }
        if let Some(role) = asked.role {
            session.set_role(role);
        }
        let events = session.text_input(&asked.text);
        let reply = events.iter().find_map(|e| match e {
            SessionEvent::PatientResponse(r) => Some(r),
            _ => None,
        });
        let Some(reply) = reply else {
            mismatches.push(ReplayMismatch {
                turn_id: asked.turn_id,
                field: "reply",
                recorded: answered.text.clone(),
                replayed: String::new(),
            });
            break;
        };
        compare(&mut mismatches, answered, "text", &answered.text, &reply.text);
        compare(&mut mismatches, answered, "clip_id", answered.clip_id.as_deref().unwrap_or(""), &reply.clip_id);
        compare(
            &mut mismatches,
            answered,
            "trigger_rule_id",
            answered.trigger_rule_id.as_deref().unwrap_or(""),
            reply.rule_id.as_deref().unwrap_or(""),
        );
        if let Some(until) = session.speaking_until() {
            clock.set(until);
        }
    }
    Ok(mismatches)
}

fn compare(out: &mut Vec<ReplayMismatch>, entry: &TranscriptEntry, field: &'static str, recorded: &str, replayed: &str) {
    if recorded != replayed {
        out.push(ReplayMismatch {
            turn_id: entry.turn_id,
            field,
            recorded: recorded.to_string(),
            replayed: replayed.to_string(),
        });
    }
}

/// Human-readable turn-by-turn view.
pub fn render_timeline(record: &SessionRecord, annotations: &[SeverityAnnotation]) -> String {
    let h = &record.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "session {}  scenario {}  persona {}  seed {}  responder {}",
        h.session_id, h.scenario_version, h.persona, h.seed, h.responder
    );
    for e in &record.entries {
        let t = e.timestamp_ms.saturating_sub(h.started_ms);
        let who = match (&e.speaker, e.role) {
            (Speaker::Provider, Some(role)) => format!("{} ({})", e.speaker, role.display_name()),
            _ => e.speaker.to_string(),
        };
        let _ = writeln!(out, "+{:>4}.{:03}s [{}] {}: {}", t / 1000, t % 1000, e.scene_id, who, e.text);
        if let Some(clip) = &e.clip_id {
            let _ = writeln!(
                out,
                "            clip {}  play {} ms  desync {} ms  latency {} ms{}{}",
                clip,
                e.play_duration_ms.unwrap_or(0),
                e.desync_ms.unwrap_or(0),
                e.latency_ms.unwrap_or(0),
                if e.repetition_incident { "  repetition suppressed" } else { "" },
                if e.fallback { "  fallback" } else { "" },
            );
            for a in annotations.iter().filter(|a| a.turn_id == e.turn_id) {
                let _ = writeln!(out, "            severity {}: {}", a.severity, a.note);
            }
        }
    }
    let discards = record.discarded_inputs();
    if !discards.is_empty() {
        let parts: Vec<String> = discards.iter().map(|(r, n)| format!("{} {}", n, r.as_str())).collect();
        let _ = writeln!(out, "discarded inputs: {}", parts.join(", "));
    }
    out
}
