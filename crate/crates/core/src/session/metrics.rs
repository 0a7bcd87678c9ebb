use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::SessionRecord;
use crate::dialogue::DiscardReason;

/// Usability severity on the usual 1 (cosmetic) to 4 (catastrophe) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct UsabilitySeverity(u8);

impl UsabilitySeverity {
    pub fn new(level: u8) -> Option<Self> {
        (1..=4).contains(&level).then_some(UsabilitySeverity(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            1 => "cosmetic",
            2 => "minor",
            3 => "major",
            _ => "catastrophe",
        }
    }
}

impl TryFrom<u8> for UsabilitySeverity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        UsabilitySeverity::new(v).ok_or_else(|| format!("severity must be 1-4, got {v}"))
    }
}

impl From<UsabilitySeverity> for u8 {
    fn from(s: UsabilitySeverity) -> u8 {
        s.0
    }
}

impl fmt::Display for UsabilitySeverity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.label())
    }
}

/// Evaluator note on one turn. Kept beside the record, never inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityAnnotation {
    pub turn_id: u64,
    pub severity: UsabilitySeverity,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("annotation file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("annotation file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

pub fn annotations_path(record_path: &Path) -> PathBuf {
    let mut name = record_path.as_os_str().to_owned();
    name.push(".annotations.json");
    PathBuf::from(name)
}

/// Missing file means no annotations.
pub fn load_annotations(path: &Path) -> Result<Vec<SeverityAnnotation>, AnnotationError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(AnnotationError::Io { path: path.display().to_string(), source }),
    };
    serde_json::from_str(&text).map_err(|source| AnnotationError::Parse { path: path.display().to_string(), source })
}

pub fn save_annotations(path: &Path, annotations: &[SeverityAnnotation]) -> Result<(), AnnotationError> {
    let text = serde_json::to_string_pretty(annotations).expect("annotations serialize");
    std::fs::write(path, text).map_err(|source| AnnotationError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub turn_id: u64,
    pub scene_id: String,
    pub clip_id: String,
    pub latency_ms: u64,
    pub desync_ms: u64,
    pub audio_duration_ms: u64,
    pub play_duration_ms: u64,
    pub repetition_score: f64,
    pub repetition_incident: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub session_id: String,
    pub patient_turns: usize,
    pub turns: Vec<TurnMetrics>,
    pub max_desync_ms: u64,
    pub mean_desync_ms: f64,
    pub max_latency_ms: u64,
    pub p95_latency_ms: u64,
    pub discarded_inputs: BTreeMap<DiscardReason, u64>,
    pub repetition_incidents: u64,
    pub fallback_uses: u64,
    #[serde(default)]
    pub annotations: Vec<SeverityAnnotation>,
}

impl MetricsReport {
    /// Equality of everything derived from the record itself.
    pub fn same_measurements(&self, other: &MetricsReport) -> bool {
        MetricsReport { annotations: Vec::new(), ..self.clone() }
            == MetricsReport { annotations: Vec::new(), ..other.clone() }
    }
}

/// Nearest-rank percentile; 0 for no samples.
pub fn percentile(values: &[u64], p: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn collect_metrics(record: &SessionRecord, annotations: &[SeverityAnnotation]) -> MetricsReport {
    let turns: Vec<TurnMetrics> = record
        .patient_entries()
        .map(|e| TurnMetrics {
            turn_id: e.turn_id,
            scene_id: e.scene_id.clone(),
            clip_id: e.clip_id.clone().unwrap_or_default(),
            latency_ms: e.latency_ms.unwrap_or(0),
            desync_ms: e.desync_ms.unwrap_or(0),
            audio_duration_ms: e.audio_duration_ms.unwrap_or(0),
            play_duration_ms: e.play_duration_ms.unwrap_or(0),
            repetition_score: e.repetition_score.unwrap_or(0.0),
            repetition_incident: e.repetition_incident,
            fallback: e.fallback,
        })
        .collect();
    let latencies: Vec<u64> = turns.iter().map(|t| t.latency_ms).collect();
    let desync_total: u64 = turns.iter().map(|t| t.desync_ms).sum();
    let mut annotations = annotations.to_vec();
    annotations.sort_by_key(|a| a.turn_id);
    MetricsReport {
        session_id: record.header.session_id.clone(),
        patient_turns: turns.len(),
        max_desync_ms: turns.iter().map(|t| t.desync_ms).max().unwrap_or(0),
        mean_desync_ms: if turns.is_empty() { 0.0 } else { desync_total as f64 / turns.len() as f64 },
        max_latency_ms: latencies.iter().copied().max().unwrap_or(0),
        p95_latency_ms: percentile(&latencies, 95.0),
        discarded_inputs: record.discarded_inputs(),
        repetition_incidents: record.repetition_incidents(),
        fallback_uses: record.fallback_uses(),
        turns,
        annotations,
    }
}
