//! Checks a finished record against the properties every session must keep.

use vpatient_core::responder::{leaked_terms, record_ask, DisclosureCounters};
use vpatient_core::scenario::ScenarioPack;
use vpatient_core::session::{SessionRecord, Speaker};
use vpatient_core::timeline::DESYNC_TOLERANCE_MS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub turn_id: u64,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "turn {}: {}", self.turn_id, self.message)
    }
}

pub fn check_record(record: &SessionRecord, pack: &ScenarioPack) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |turn_id: u64, message: String| out.push(Violation { turn_id, message });
    let mut counters = DisclosureCounters::default();
    let mut last_ts = record.header.started_ms;

    for pair in record.entries.chunks(2) {
        let [asked, answered] = pair else {
            v(pair[0].turn_id, "question without a reply".into());
            break;
        };
        if asked.speaker != Speaker::Provider || !answered.speaker.is_patient() {
            v(asked.turn_id, "entries out of order".into());
        }
        if asked.timestamp_ms < last_ts || answered.timestamp_ms < asked.timestamp_ms {
            v(asked.turn_id, "timestamps go backwards".into());
        }
        last_ts = answered.timestamp_ms;

        for (rule, term) in leaked_terms(&answered.text, pack, &counters) {
            v(answered.turn_id, format!("reply reveals {term:?} ({}) before it may", rule.id));
        }
        counters = record_ask(&counters, &asked.text, &pack.disclosure_rules);

        match (answered.play_duration_ms, answered.audio_duration_ms) {
            (Some(play), Some(audio)) if play.abs_diff(audio) > DESYNC_TOLERANCE_MS => {
                v(answered.turn_id, format!("animation runs {play} ms against {audio} ms of speech"))
            }
            (Some(_), Some(_)) => {}
            _ => v(answered.turn_id, "reply has no timing".into()),
        }
        match answered.clip_id.as_deref() {
            Some(clip) if pack.clip(clip).is_some() => {}
            other => v(answered.turn_id, format!("clip {other:?} is not in the scenario")),
        }
    }
    out
}
