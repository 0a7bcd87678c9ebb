use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ScenarioPack, Side, SYNC_RISK_LEAD_IN_FRAMES};
use crate::responder::mentions_term;
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    DanglingReference,
    DuplicateId,
    DuplicatePriority,
    InvalidValue,
    DisclosureLeak,
    SyncRisk,
    MissingNegationClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warn => "warn",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warn)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    fn error(&mut self, kind: FindingKind, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            kind,
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, kind: FindingKind, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Warn,
            kind,
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Checks every pack invariant plus runtime sync risks.
///
/// Errors: broken invariants and dangling references. Warnings: clips with
/// more than [`SYNC_RISK_LEAD_IN_FRAMES`] lead-in frames, and scenes without
/// an output-side negation rule.
pub fn validate_scenario(pack: &ScenarioPack) -> ValidationReport {
    let mut report = ValidationReport::default();

    if pack.version.trim().is_empty() {
        report.error(FindingKind::InvalidValue, "version", "version is empty");
    }

    let rule_ids: HashSet<&str> = pack.disclosure_rules.iter().map(|r| r.id.as_str()).collect();
    let clip_ids: HashSet<&str> = pack.clips.iter().map(|c| c.id.as_str()).collect();

    // persona
    if pack.persona.name.trim().is_empty() {
        report.error(FindingKind::InvalidValue, "persona.name", "persona name is empty");
    }
    if pack.persona.age == 0 {
        report.error(FindingKind::InvalidValue, "persona.age", "persona age must be > 0");
    }
    for (i, fact) in pack.persona.hidden_facts.iter().enumerate() {
        if !rule_ids.contains(fact.as_str()) {
            report.error(
                FindingKind::DanglingReference,
                format!("persona.hidden_facts[{i}]"),
                format!("unknown disclosure rule {fact:?}"),
            );
        }
    }

    // disclosure rules
    let mut seen = HashSet::new();
    for (i, rule) in pack.disclosure_rules.iter().enumerate() {
        let path = format!("disclosure_rules[{i}]");
        if !seen.insert(rule.id.as_str()) {
            report.error(FindingKind::DuplicateId, format!("{path}.id"), format!("duplicate disclosure rule id {:?}", rule.id));
        }
        if rule.reveal_after_asks < 1 {
            report.error(FindingKind::InvalidValue, format!("{path}.reveal_after_asks"), "reveal_after_asks must be >= 1");
        }
        if rule.withheld_terms.iter().all(|t| normalize_text(t).is_empty()) {
            report.error(FindingKind::InvalidValue, format!("{path}.withheld_terms"), "withheld_terms is empty");
        }
        if rule.topic_patterns.iter().all(|t| normalize_text(t).is_empty()) {
            report.error(FindingKind::InvalidValue, format!("{path}.topic_patterns"), "topic_patterns is empty");
        }
        let redaction = normalize_text(&rule.redaction);
        if redaction.is_empty() || rule.withheld_terms.iter().any(|t| mentions_term(&rule.redaction, t)) {
            report.error(FindingKind::InvalidValue, format!("{path}.redaction"), "redaction must be non-empty and free of withheld terms");
        }
    }

    // clips
    let mut seen = HashSet::new();
    for (i, clip) in pack.clips.iter().enumerate() {
        let path = format!("clips[{i}]");
        if !seen.insert(clip.id.as_str()) {
            report.error(FindingKind::DuplicateId, format!("{path}.id"), format!("duplicate clip id {:?}", clip.id));
        }
        if !(clip.fps.is_finite() && clip.fps > 0.0) {
            report.error(FindingKind::InvalidValue, format!("{path}.fps"), "fps must be > 0");
        }
        if clip.lead_in_frames >= clip.total_frames {
            report.error(
                FindingKind::InvalidValue,
                format!("{path}.lead_in_frames"),
                format!("lead_in_frames {} must be < total_frames {}", clip.lead_in_frames, clip.total_frames),
            );
        } else if clip.lead_in_frames > SYNC_RISK_LEAD_IN_FRAMES {
            report.warn(
                FindingKind::SyncRisk,
                format!("{path}.lead_in_frames"),
                format!("sync risk: clip {:?} has {} lead-in frames", clip.id, clip.lead_in_frames),
            );
        }
    }

    // scenes
    if pack.scenes.is_empty() {
        report.error(FindingKind::InvalidValue, "scenes", "pack has no scenes");
    }
    let mut seen_scenes = HashSet::new();
    let mut seen_intents = HashSet::new();
    for (si, scene) in pack.scenes.iter().enumerate() {
        let spath = format!("scenes[{si}]");
        if !seen_scenes.insert(scene.id.as_str()) {
            report.error(FindingKind::DuplicateId, format!("{spath}.id"), format!("duplicate scene id {:?}", scene.id));
        }
        if !clip_ids.contains(scene.fallback_clip_id.as_str()) {
            report.error(
                FindingKind::DanglingReference,
                format!("{spath}.fallback_clip"),
                format!("unknown clip {:?}", scene.fallback_clip_id),
            );
        }
        if scene.fallback_lines.iter().all(|l| normalize_text(l).is_empty()) {
            report.error(FindingKind::InvalidValue, format!("{spath}.fallback_lines"), "scene needs at least one fallback line");
        }
        for (li, line) in scene.fallback_lines.iter().enumerate() {
            check_undeclared_leak(pack, &mut report, &format!("{spath}.fallback_lines[{li}]"), line);
        }

        let mut seen_rules = HashSet::new();
        let mut priorities: HashMap<(Side, i32), usize> = HashMap::new();
        for (ti, rule) in scene.trigger_rules.iter().enumerate() {
            let tpath = format!("{spath}.triggers[{ti}]");
            if !seen_rules.insert(rule.id.as_str()) {
                report.error(FindingKind::DuplicateId, format!("{tpath}.id"), format!("duplicate trigger id {:?}", rule.id));
            }
            if rule.phrases.iter().all(|p| normalize_text(p).is_empty()) {
                report.error(FindingKind::InvalidValue, format!("{tpath}.phrases"), "trigger rule has no phrases");
            }
            if !clip_ids.contains(rule.clip_id.as_str()) {
                report.error(
                    FindingKind::DanglingReference,
                    format!("{tpath}.clip"),
                    format!("unknown clip {:?}", rule.clip_id),
                );
            }
            if let Some(first) = priorities.insert((rule.side, rule.priority), ti) {
                report.error(
                    FindingKind::DuplicatePriority,
                    format!("{tpath}.priority"),
                    format!("duplicate priority {} (also used by {spath}.triggers[{first}])", rule.priority),
                );
            }
        }
        if scene.negation_rule().is_none() {
            report.warn(
                FindingKind::MissingNegationClip,
                format!("{spath}.triggers"),
                format!("scene {:?} has no output-side negation clip", scene.id),
            );
        }

        for (ii, intent) in scene.scripted_intents.iter().enumerate() {
            let ipath = format!("{spath}.intents[{ii}]");
            // intent ids are global so transcripts can name them unambiguously
            if !seen_intents.insert(intent.id.as_str()) {
                report.error(FindingKind::DuplicateId, format!("{ipath}.id"), format!("duplicate intent id {:?}", intent.id));
            }
            if intent.patterns.iter().all(|p| normalize_text(p).is_empty()) {
                report.error(FindingKind::InvalidValue, format!("{ipath}.patterns"), "intent has no patterns");
            }
            if intent.response_variants.is_empty() {
                report.error(FindingKind::InvalidValue, format!("{ipath}.variants"), "intent has no response variants");
            }
            match &intent.disclosure_rule_id {
                Some(rule_id) => match pack.disclosure_rule(rule_id) {
                    None => report.error(
                        FindingKind::DanglingReference,
                        format!("{ipath}.disclosure_rule"),
                        format!("unknown disclosure rule {rule_id:?}"),
                    ),
                    Some(rule) => {
                        let leaks = |v: &String| rule.withheld_terms.iter().any(|t| mentions_term(v, t));
                        let disclosing = intent.response_variants.iter().filter(|v| leaks(v)).count();
                        if disclosing == 0 || disclosing == intent.response_variants.len() {
                            report.error(
                                FindingKind::InvalidValue,
                                format!("{ipath}.variants"),
                                "gated intent needs at least one withholding and one disclosing variant",
                            );
                        }
                        // other rules still apply to this intent's variants
                        for (vi, v) in intent.response_variants.iter().enumerate() {
                            check_leak_except(pack, &mut report, &format!("{ipath}.variants[{vi}]"), v, Some(&rule.id));
                        }
                    }
                },
                None => {
                    for (vi, v) in intent.response_variants.iter().enumerate() {
                        check_undeclared_leak(pack, &mut report, &format!("{ipath}.variants[{vi}]"), v);
                    }
                }
            }
        }
    }

    report
}

fn check_undeclared_leak(pack: &ScenarioPack, report: &mut ValidationReport, path: &str, text: &str) {
    check_leak_except(pack, report, path, text, None);
}

/// Scripted text may only mention a withheld term if it is gated by that
/// term's rule.
fn check_leak_except(
    pack: &ScenarioPack,
    report: &mut ValidationReport,
    path: &str,
    text: &str,
    gated_by: Option<&str>,
) {
    let mut terms = BTreeSet::new();
    for rule in &pack.disclosure_rules {
        if Some(rule.id.as_str()) == gated_by {
            continue;
        }
        for term in &rule.withheld_terms {
            if mentions_term(text, term) {
                terms.insert(term.as_str());
            }
        }
    }
    if !terms.is_empty() {
        report.error(
            FindingKind::DisclosureLeak,
            path,
            format!("mentions withheld term(s) {terms:?} without the matching disclosure_rule"),
        );
    }
}
