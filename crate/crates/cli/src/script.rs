//! Simulation scripts: a JSON list of provider turns and scene changes.
//!
//! ```json
//! { "seed": 7, "scene_id": "ed", "role": "physician",
//!   "steps": [
//!     { "say": "Any fever?", "mode": "voice", "hold_ms": 1500 },
//!     { "say": "And medications?", "role": "pharmacist", "noise_after": "okay switch" },
//!     { "switch_scene": "primary_care" },
//!     { "pause_ms": 2000 }
//!   ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use vpatient_core::scenario::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    Voice,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Say {
        say: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
        #[serde(default)]
        mode: InputMode,
        /// How long the talk button is held.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hold_ms: Option<u64>,
        /// Room speech picked up before the button is pressed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_before: Option<String>,
        /// Room speech picked up after release, while the patient answers.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_after: Option<String>,
    },
    SwitchScene {
        switch_scene: String,
    },
    Pause {
        pause_ms: u64,
    },
}

impl Step {
    pub fn say(text: &str) -> Step {
        Step::Say { say: text.to_string(), role: None, mode: InputMode::Voice, hold_ms: None, noise_before: None, noise_after: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScript {
    #[serde(default)]
    pub seed: u64,
    pub scene_id: String,
    pub role: Role,
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad script {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

impl SimScript {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io { path: p.clone(), source })?;
        Self::parse(&text).map_err(|source| ScriptError::Parse { path: p, source })
    }
}

/// Four-role interview over both shipped scenes.
pub const SAMPLE_INTERVIEW: &str = include_str!("../fixtures/interview.json");
