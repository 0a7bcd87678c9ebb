use std::fmt::Write as _;

use super::{Role, ScenarioPack};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown scene id {0:?}")]
    UnknownScene(String),
    #[error("unknown role tag {0:?}")]
    UnknownRole(String),
}

/// Builds the system prompt for one scene and interviewer role.
///
/// Blocks, in order: persona identity (with speaking style), scene context,
/// guidelines, role directives, disclosure directives. Only the role block
/// depends on `role`.
pub fn assemble_system_prompt(
    pack: &ScenarioPack,
    scene_id: &str,
    role: Role,
) -> Result<String, PromptError> {
    let scene = pack
        .scene(scene_id)
        .ok_or_else(|| PromptError::UnknownScene(scene_id.to_string()))?;
    let persona = &pack.persona;
    let mut out = String::new();

    out.push_str("## Persona\n");
    let _ = write!(out, "You are {}, a {}-year-old patient.", persona.name, persona.age);
    if !persona.demographic_notes.is_empty() {
        let _ = write!(out, " {}", persona.demographic_notes.trim());
    }
    out.push('\n');
    if !persona.presenting_complaint.is_empty() {
        let _ = writeln!(out, "Presenting complaint: {}", persona.presenting_complaint.trim());
    }
    for directive in &persona.speaking_style_directives {
        let _ = writeln!(out, "- {}", directive.trim());
    }

    out.push_str("\n## Scene\n");
    let _ = writeln!(out, "{}", scene.title.trim());
    if !scene.setting_description.is_empty() {
        let _ = writeln!(out, "Setting: {}", scene.setting_description.trim());
    }
    if !scene.patient_pose.is_empty() {
        let _ = writeln!(out, "Your position: {}", scene.patient_pose.trim());
    }

    out.push_str("\n## Guidelines\n");
    for guideline in &pack.guidelines {
        let _ = writeln!(out, "- {}", guideline.trim());
    }

    out.push_str("\n## Role\n");
    let _ = writeln!(out, "You are speaking with a {}.", role.display_name());
    for directive in pack.role_directives.get(&role).into_iter().flatten() {
        let _ = writeln!(out, "- {}", directive.trim());
    }
    let trigger_words: Vec<&str> = scene
        .scripted_intents
        .iter()
        .filter(|i| i.role_affinity == Some(role))
        .flat_map(|i| i.patterns.iter().map(String::as_str))
        .collect();
    if !trigger_words.is_empty() {
        let _ = writeln!(
            out,
            "- Questions from a {} often mention: {}.",
            role.display_name(),
            trigger_words.join(", ")
        );
    }

    out.push_str("\n## Disclosure\n");
    for rule in &pack.disclosure_rules {
        let topic = if rule.topic.is_empty() { rule.id.as_str() } else { rule.topic.as_str() };
        let when = match rule.reveal_after_asks {
            1 => "the first time".to_string(),
            n => format!("the first {n} times"),
        };
        let _ = writeln!(
            out,
            "- Do not reveal {} use when asked about {} {}.",
            rule.withheld_terms.join(" or "),
            topic,
            when
        );
    }

    Ok(out)
}

/// Convenience wrapper for callers holding a raw role tag.
pub fn assemble_system_prompt_for_tag(
    pack: &ScenarioPack,
    scene_id: &str,
    role_tag: &str,
) -> Result<String, PromptError> {
    let role = role_tag
        .parse::<Role>()
        .map_err(|_| PromptError::UnknownRole(role_tag.to_string()))?;
    assemble_system_prompt(pack, scene_id, role)
}
