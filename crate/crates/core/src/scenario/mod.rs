//! Scenario pack data model: persona, scenes, clip vocabulary, trigger
//! tables, scripted intents and disclosure rules.
//!
//! A pack is loaded once from a TOML document and shared read-only by every
//! session (`Arc<ScenarioPack>`).

mod load;
mod prompt;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use load::{load_scenario, load_scenario_file, parse_scenario, serialize_scenario, ScenarioError};
pub use prompt::{assemble_system_prompt, assemble_system_prompt_for_tag, PromptError};
pub use validate::{validate_scenario, Finding, FindingKind, Severity, ValidationReport};

/// Lead-in frame count above which a clip is flagged as a sync risk.
pub const SYNC_RISK_LEAD_IN_FRAMES: u32 = 5;

/// Reply-opening phrases that count as a rejection when a pack does not
/// override them.
pub const DEFAULT_NEGATIONS: &[&str] = &[
    "no",
    "nope",
    "not really",
    "i haven't",
    "i have not",
    "i don't",
    "i do not",
    "never",
];

/// Generic hedges used when a scene configures none. There are more lines
/// than the repetition window so one is always fresh.
pub const DEFAULT_FALLBACK_LINES: &[&str] = &[
    "I'm not sure what you mean.",
    "Sorry, could you ask that another way?",
    "I don't quite follow.",
    "Can you say that again?",
    "Hmm, I'm not sure.",
    "Sorry, I lost my train of thought.",
    "What do you mean?",
    "I'm sorry, I didn't catch that.",
    "Could you repeat the question?",
    "I'm not following, sorry.",
    "Um, can you explain?",
    "Sorry, say that once more?",
];

/// Profession of the student currently interviewing the patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Physician,
    Pharmacist,
    NursePractitioner,
    SocialWorker,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Physician,
        Role::Pharmacist,
        Role::NursePractitioner,
        Role::SocialWorker,
    ];

    pub fn as_tag(self) -> &'static str {
        match self {
            Role::Physician => "physician",
            Role::Pharmacist => "pharmacist",
            Role::NursePractitioner => "nurse_practitioner",
            Role::SocialWorker => "social_worker",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Role::Physician => "physician",
            Role::Pharmacist => "pharmacist",
            Role::NursePractitioner => "nurse practitioner",
            Role::SocialWorker => "social worker",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown role tag {0:?}")]
pub struct UnknownRole(pub String);

impl FromStr for Role {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        Role::ALL
            .into_iter()
            .find(|r| r.as_tag() == key)
            .ok_or_else(|| UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub age: u32,
    #[serde(default)]
    pub demographic_notes: String,
    #[serde(default)]
    pub presenting_complaint: String,
    /// Disclosure rule ids the patient keeps back.
    #[serde(default)]
    pub hidden_facts: Vec<String>,
    #[serde(default)]
    pub speaking_style_directives: Vec<String>,
}

/// A fact the patient withholds until asked about it enough times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisclosureRule {
    pub id: String,
    /// Human label used in prompt directives, e.g. "medication history".
    #[serde(default)]
    pub topic: String,
    pub topic_patterns: Vec<String>,
    pub withheld_terms: Vec<String>,
    #[serde(default = "default_reveal_after")]
    pub reveal_after_asks: u32,
    /// Replacement used when a generated reply leaks a withheld term.
    #[serde(default = "default_redaction")]
    pub redaction: String,
}

fn default_reveal_after() -> u32 {
    1
}

fn default_redaction() -> String {
    "some pain medication".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationClipMeta {
    pub id: String,
    #[serde(default)]
    pub display_label: String,
    pub total_frames: u32,
    pub fps: f64,
    #[serde(default)]
    pub lead_in_frames: u32,
    #[serde(default)]
    pub loopable: bool,
    #[serde(default = "default_expression")]
    pub expression_tag: String,
}

fn default_expression() -> String {
    "neutral".to_string()
}

impl AnimationClipMeta {
    /// Playable length in milliseconds, excluding lead-in frames.
    pub fn effective_duration_ms(&self) -> f64 {
        f64::from(self.total_frames.saturating_sub(self.lead_in_frames)) / self.fps * 1000.0
    }

    /// Length in milliseconds including lead-in frames.
    pub fn full_duration_ms(&self) -> f64 {
        f64::from(self.total_frames) / self.fps * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Matched against the user's utterance.
    #[default]
    Input,
    /// Fired by a rejection at the start of the patient's reply.
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRule {
    #[serde(default)]
    pub id: String,
    pub phrases: Vec<String>,
    #[serde(rename = "clip")]
    pub clip_id: String,
    pub priority: i32,
    #[serde(default)]
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedIntent {
    #[serde(default)]
    pub id: String,
    pub patterns: Vec<String>,
    #[serde(rename = "variants")]
    pub response_variants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_affinity: Option<Role>,
    #[serde(default, rename = "disclosure_rule", skip_serializing_if = "Option::is_none")]
    pub disclosure_rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub title: String,
    #[serde(default, rename = "setting")]
    pub setting_description: String,
    #[serde(default, rename = "pose")]
    pub patient_pose: String,
    #[serde(rename = "fallback_clip")]
    pub fallback_clip_id: String,
    #[serde(default = "default_fallback_lines")]
    pub fallback_lines: Vec<String>,
    #[serde(default, rename = "triggers")]
    pub trigger_rules: Vec<TriggerRule>,
    #[serde(default, rename = "intents")]
    pub scripted_intents: Vec<ScriptedIntent>,
}

fn default_fallback_lines() -> Vec<String> {
    DEFAULT_FALLBACK_LINES.iter().map(|s| s.to_string()).collect()
}

impl SceneSpec {
    pub fn rules(&self, side: Side) -> impl Iterator<Item = &TriggerRule> {
        self.trigger_rules.iter().filter(move |r| r.side == side)
    }

    /// Output-side rule with the lowest priority value, if any.
    pub fn negation_rule(&self) -> Option<&TriggerRule> {
        self.rules(Side::Output).min_by_key(|r| r.priority)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPack {
    pub version: String,
    #[serde(default)]
    pub guidelines: Vec<String>,
    /// Reply-opening phrases treated as rejections.
    #[serde(default = "default_negations")]
    pub negation_tokens: Vec<String>,
    /// When true a negated reply's clip beats input-side matches.
    #[serde(default = "default_true")]
    pub output_precedence: bool,
    pub persona: Persona,
    #[serde(default)]
    pub role_directives: BTreeMap<Role, Vec<String>>,
    #[serde(default)]
    pub disclosure_rules: Vec<DisclosureRule>,
    pub clips: Vec<AnimationClipMeta>,
    pub scenes: Vec<SceneSpec>,
}

fn default_negations() -> Vec<String> {
    DEFAULT_NEGATIONS.iter().map(|s| s.to_string()).collect()
}

fn default_true() -> bool {
    true
}

impl ScenarioPack {
    pub fn scene(&self, id: &str) -> Option<&SceneSpec> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn clip(&self, id: &str) -> Option<&AnimationClipMeta> {
        self.clips.iter().find(|c| c.id == id)
    }

    pub fn disclosure_rule(&self, id: &str) -> Option<&DisclosureRule> {
        self.disclosure_rules.iter().find(|r| r.id == id)
    }
}

/// The shipped Jane Ryan case (ED visit and primary-care follow-up).
pub const JANE_RYAN_PACK: &str = include_str!("../../fixtures/jane_ryan.pack");

pub fn jane_ryan() -> ScenarioPack {
    load_scenario(JANE_RYAN_PACK).expect("shipped pack is valid")
}
