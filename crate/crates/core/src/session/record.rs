use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dialogue::{DiscardReason, InputSource};
use crate::scenario::Role;

/// On-screen label of the interviewing student.
pub const PROVIDER_LABEL: &str = "Healthcare Provider";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Speaker {
    Provider,
    /// Carries the persona name shown in the transcript.
    Patient(String),
}

impl Speaker {
    pub fn label(&self) -> &str {
        match self {
            Speaker::Provider => PROVIDER_LABEL,
            Speaker::Patient(name) => name,
        }
    }

    pub fn is_patient(&self) -> bool {
        matches!(self, Speaker::Patient(_))
    }
}

impl From<Speaker> for String {
    fn from(s: Speaker) -> String {
        s.label().to_string()
    }
}

impl From<String> for Speaker {
    fn from(s: String) -> Speaker {
        if s == PROVIDER_LABEL {
            Speaker::Provider
        } else {
            Speaker::Patient(s)
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One transcript line. Provider entries carry `role` and `source`; patient
/// entries carry the animation and timing metrics of the turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp_ms: u64,
    pub turn_id: u64,
    pub speaker: Speaker,
    pub scene_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<InputSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desync_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_duration_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub play_duration_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_score: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub repetition_incident: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub fallback: bool,
    /// Inputs discarded since the previous entry.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub discards: BTreeMap<DiscardReason, u64>,
}

impl TranscriptEntry {
    pub fn provider(timestamp_ms: u64, turn_id: u64, scene_id: &str, role: Role, source: InputSource, text: &str) -> Self {
        TranscriptEntry {
            timestamp_ms,
            turn_id,
            speaker: Speaker::Provider,
            scene_id: scene_id.to_string(),
            text: text.to_string(),
            role: Some(role),
            source: Some(source),
            intent_id: None,
            trigger_rule_id: None,
            clip_id: None,
            expression: None,
            latency_ms: None,
            desync_ms: None,
            audio_duration_ms: None,
            play_duration_ms: None,
            repetition_score: None,
            repetition_incident: false,
            fallback: false,
            discards: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub scenario_version: String,
    pub persona: String,
    pub scene_id: String,
    pub role: Role,
    pub seed: u64,
    pub responder: String,
    pub started_ms: u64,
}

/// Append-only log of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub scene_history: Vec<String>,
    pub entries: Vec<TranscriptEntry>,
    /// Discards after the last entry; written as a trailer line.
    pub trailing_discards: BTreeMap<DiscardReason, u64>,
}

impl SessionRecord {
    pub fn new(header: SessionHeader) -> Self {
        let scene = header.scene_id.clone();
        SessionRecord { header, scene_history: vec![scene], entries: Vec::new(), trailing_discards: BTreeMap::new() }
    }

    pub fn patient_entries(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(|e| e.speaker.is_patient())
    }

    pub fn patient_turns(&self) -> usize {
        self.patient_entries().count()
    }

    pub fn discarded_inputs(&self) -> BTreeMap<DiscardReason, u64> {
        let mut out = self.trailing_discards.clone();
        for e in &self.entries {
            for (reason, n) in &e.discards {
                *out.entry(*reason).or_insert(0) += n;
            }
        }
        out
    }

    pub fn repetition_incidents(&self) -> u64 {
        self.patient_entries().filter(|e| e.repetition_incident).count() as u64
    }

    pub fn fallback_uses(&self) -> u64 {
        self.patient_entries().filter(|e| e.fallback).count() as u64
    }
}

/// One line of the persisted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Header(SessionHeader),
    Entry(TranscriptEntry),
    Trailer { discards: BTreeMap<DiscardReason, u64> },
}
