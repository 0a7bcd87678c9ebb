use std::collections::HashSet;
use std::sync::Arc;

use super::disclosure::mentions_term;
use super::{Reply, Responder, ResponderContext, ResponderError, ResponseRequest};
use crate::scenario::{ScenarioPack, ScriptedIntent};
use crate::text::{contains_token_run, normalize_text, tokens};

/// Key under which fallback uses are counted in `intent_uses`.
pub const FALLBACK_INTENT_KEY: &str = "fallback";

/// Score added when a whole pattern occurs as a token run.
const PHRASE_BONUS: u32 = 100;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "you", "your", "are", "is", "am", "was", "were", "do", "does", "did", "to", "of", "in", "on",
    "for", "and", "or", "any", "i", "me", "my", "it", "what", "how", "be", "been", "can", "could", "tell", "about",
    "with", "that", "this", "so", "have", "has", "had", "ms", "mrs", "ryan", "jane", "there", "we", "us",
];

fn content_tokens(normalized: &str) -> HashSet<&str> {
    tokens(normalized).into_iter().filter(|t| !STOPWORDS.contains(t)).collect()
}

/// Overlap between an intent and a normalized utterance.
///
/// Per pattern: a full token-run match scores `100 + pattern length`,
/// otherwise the number of shared non-stopword tokens. The intent takes its
/// best pattern.
pub fn intent_overlap(intent: &ScriptedIntent, normalized_utterance: &str) -> u32 {
    let utt = content_tokens(normalized_utterance);
    intent
        .patterns
        .iter()
        .map(|p| {
            let np = normalize_text(p);
            if contains_token_run(normalized_utterance, &np) {
                PHRASE_BONUS + tokens(&np).len() as u32
            } else {
                content_tokens(&np).intersection(&utt).count() as u32
            }
        })
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedReply {
    pub text: String,
    pub intent_id: Option<String>,
    pub variant_index: Option<usize>,
    pub fallback: bool,
}

/// Deterministic reply from the scene's intent table.
///
/// Best overlap wins; ties go to an intent whose role affinity matches the
/// active role, then to the lowest intent id. For a gated intent the
/// withholding variants are used while the fact is withheld and the
/// disclosing variants afterwards. Variants rotate by
/// `seed + prior uses of the intent + attempt`.
pub fn scripted_respond(
    ctx: &ResponderContext,
    utterance: &str,
    pack: &ScenarioPack,
    attempt: u32,
) -> Result<ScriptedReply, ResponderError> {
    let scene = pack
        .scene(&ctx.scene_id)
        .ok_or_else(|| ResponderError::UnknownScene(ctx.scene_id.clone()))?;
    let normalized = normalize_text(utterance);

    let best = scene
        .scripted_intents
        .iter()
        .map(|i| (intent_overlap(i, &normalized), i))
        .filter(|(score, _)| *score >= 1)
        .max_by(|(sa, a), (sb, b)| {
            let role_a = a.role_affinity == Some(ctx.active_role);
            let role_b = b.role_affinity == Some(ctx.active_role);
            sa.cmp(sb).then(role_a.cmp(&role_b)).then_with(|| b.id.cmp(&a.id))
        })
        .map(|(_, i)| i);

    let rotation = |key: &str, len: usize| -> usize {
        let uses = u64::from(ctx.intent_uses.get(key).copied().unwrap_or(0));
        (ctx.seed.wrapping_add(uses).wrapping_add(u64::from(attempt)) % len as u64) as usize
    };

    let Some(intent) = best else {
        let lines = &scene.fallback_lines;
        let idx = rotation(FALLBACK_INTENT_KEY, lines.len().max(1));
        let text = lines.get(idx).cloned().unwrap_or_else(|| "I'm not sure what you mean.".to_string());
        return Ok(ScriptedReply { text, intent_id: None, variant_index: None, fallback: true });
    };

    let all: Vec<usize> = (0..intent.response_variants.len()).collect();
    let eligible: Vec<usize> = match intent
        .disclosure_rule_id
        .as_deref()
        .and_then(|id| pack.disclosure_rule(id))
    {
        Some(rule) => {
            let withheld = ctx.disclosure_counters.is_withheld(rule);
            let picked: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| {
                    let leaks = rule
                        .withheld_terms
                        .iter()
                        .any(|t| mentions_term(&intent.response_variants[i], t));
                    leaks != withheld
                })
                .collect();
            if picked.is_empty() && !withheld {
                all
            } else {
                picked
            }
        }
        None => all,
    };

    if eligible.is_empty() {
        // a gated intent without withholding variants; the validator rejects
        // such packs, so this only happens with hand-built ones
        let text = scene.fallback_lines.first().cloned().unwrap_or_default();
        return Ok(ScriptedReply { text, intent_id: Some(intent.id.clone()), variant_index: None, fallback: true });
    }
    let variant = eligible[rotation(&intent.id, eligible.len())];
    Ok(ScriptedReply {
        text: intent.response_variants[variant].clone(),
        intent_id: Some(intent.id.clone()),
        variant_index: Some(variant),
        fallback: false,
    })
}

/// [`scripted_respond`] behind the [`Responder`] interface.
#[derive(Debug, Clone)]
pub struct ScriptedResponder {
    pack: Arc<ScenarioPack>,
}

impl ScriptedResponder {
    pub fn new(pack: Arc<ScenarioPack>) -> Self {
        ScriptedResponder { pack }
    }
}

impl Responder for ScriptedResponder {
    fn respond(&mut self, req: &ResponseRequest<'_>) -> Result<Reply, ResponderError> {
        let r = scripted_respond(req.ctx, req.utterance, &self.pack, req.attempt)?;
        Ok(Reply { text: r.text, intent_id: r.intent_id, fallback: r.fallback })
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}
