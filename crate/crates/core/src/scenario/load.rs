use std::path::Path;

use super::validate::{validate_scenario, FindingKind, Severity};
use super::ScenarioPack;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario document: {0}")]
    Parse(String),
    #[error("dangling reference at {path}: {message}")]
    Reference { path: String, message: String },
    #[error("constraint violated at {path}: {message}")]
    Constraint { path: String, message: String },
}

impl ScenarioError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ScenarioError::Reference { path, .. } | ScenarioError::Constraint { path, .. } => {
                Some(path)
            }
            _ => None,
        }
    }
}

/// Parses a scenario document and resolves every cross reference.
///
/// Trigger rules and intents without an explicit `id` get `<scene>.t<n>` and
/// `<scene>.i<n>` respectively. Warnings from the validator do not fail the
/// load; the first error does.
pub fn load_scenario(source: &str) -> Result<ScenarioPack, ScenarioError> {
    let pack = parse_scenario(source)?;
    let report = validate_scenario(&pack);
    if let Some(err) = report
        .findings
        .iter()
        .find(|f| f.severity == Severity::Error)
    {
        let path = err.path.clone();
        let message = err.message.clone();
        return Err(match err.kind {
            FindingKind::DanglingReference => ScenarioError::Reference { path, message },
            _ => ScenarioError::Constraint { path, message },
        });
    }
    Ok(pack)
}

/// Parses and fills default ids without validating; pair with
/// [`validate_scenario`] to see every finding at once.
pub fn parse_scenario(source: &str) -> Result<ScenarioPack, ScenarioError> {
    let mut pack: ScenarioPack =
        toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    assign_default_ids(&mut pack);
    Ok(pack)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioPack, ScenarioError> {
    let source = std::fs::read_to_string(path)?;
    load_scenario(&source)
}

/// Canonical TOML rendering of a pack; reparses to an equal pack.
pub fn serialize_scenario(pack: &ScenarioPack) -> String {
    toml::to_string(pack).expect("scenario packs always serialize")
}

fn assign_default_ids(pack: &mut ScenarioPack) {
    for scene in &mut pack.scenes {
        for (i, rule) in scene.trigger_rules.iter_mut().enumerate() {
            if rule.id.is_empty() {
                rule.id = format!("{}.t{}", scene.id, i);
            }
        }
        for (i, intent) in scene.scripted_intents.iter_mut().enumerate() {
            if intent.id.is_empty() {
                intent.id = format!("{}.i{}", scene.id, i);
            }
        }
    }
}
