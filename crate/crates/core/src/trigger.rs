//! Keyword triggers: input-side phrase detection, output-side negation
//! detection and the one-clip-per-turn selection rule.

use serde::{Deserialize, Serialize};

use crate::scenario::{ScenarioPack, SceneSpec, Side};
use crate::text::{find_token_run, first_sentence, normalize_text, starts_with_token_run, CharSpan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerMatch {
    pub rule_id: String,
    pub clip_id: String,
    pub matched_phrase: String,
    pub side: Side,
    pub priority: i32,
    pub char_span: CharSpan,
}

/// Every input-side rule with a phrase occurring as a contiguous token run
/// of the normalized utterance, ordered by priority then position.
///
/// A rule contributes one match: its earliest phrase occurrence.
pub fn detect_input_triggers(utterance: &str, scene: &SceneSpec) -> Vec<TriggerMatch> {
    let normalized = normalize_text(utterance);
    let mut matches: Vec<TriggerMatch> = scene
        .rules(Side::Input)
        .filter_map(|rule| {
            rule.phrases
                .iter()
                .filter_map(|p| find_token_run(&normalized, p).map(|span| (p, span)))
                .min_by_key(|(_, span)| span.start)
                .map(|(phrase, span)| TriggerMatch {
                    rule_id: rule.id.clone(),
                    clip_id: rule.clip_id.clone(),
                    matched_phrase: phrase.clone(),
                    side: Side::Input,
                    priority: rule.priority,
                    char_span: span,
                })
        })
        .collect();
    matches.sort_by(|a, b| {
        a.priority
            .cmp(&b.priority)
            .then(a.char_span.start.cmp(&b.char_span.start))
            .then_with(|| a.rule_id.cmp(&b.rule_id))
    });
    matches
}

/// True iff the reply's first sentence opens with one of `negations`.
pub fn detect_output_negation<S: AsRef<str>>(reply: &str, negations: &[S]) -> bool {
    let opening = normalize_text(first_sentence(reply));
    negations
        .iter()
        .any(|n| starts_with_token_run(&opening, n.as_ref()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Output,
    Input,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimationSelection {
    pub clip_id: String,
    pub expression_tag: String,
    pub rule_id: Option<String>,
    pub source: SelectionSource,
}

/// Picks exactly one clip for the turn.
///
/// With `pack.output_precedence` (the default) a negated reply in a scene that
/// has an output-side rule wins; then the first input match; then the
/// scene's fallback clip. With precedence flipped, input matches are
/// considered before the negation rule.
pub fn select_animation(
    pack: &ScenarioPack,
    scene: &SceneSpec,
    input_matches: &[TriggerMatch],
    output_negation: bool,
) -> AnimationSelection {
    let negation = output_negation
        .then(|| scene.negation_rule())
        .flatten()
        .map(|rule| (rule.clip_id.as_str(), Some(rule.id.as_str()), SelectionSource::Output));
    let input = input_matches
        .first()
        .map(|m| (m.clip_id.as_str(), Some(m.rule_id.as_str()), SelectionSource::Input));

    let (clip_id, rule_id, source) = if pack.output_precedence {
        negation.or(input)
    } else {
        input.or(negation)
    }
    .unwrap_or((scene.fallback_clip_id.as_str(), None, SelectionSource::Fallback));

    let expression_tag = pack
        .clip(clip_id)
        .map(|c| c.expression_tag.clone())
        .unwrap_or_else(|| "neutral".to_string());
    AnimationSelection {
        clip_id: clip_id.to_string(),
        expression_tag,
        rule_id: rule_id.map(str::to_string),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{jane_ryan, DEFAULT_NEGATIONS};
    use proptest::prelude::*;

    fn ids(m: &[TriggerMatch]) -> Vec<&str> {
        m.iter().map(|m| m.rule_id.as_str()).collect()
    }

    #[test]
    fn table_rows_detect() {
        let pack = jane_ryan();
        let ed = pack.scene("ed").unwrap();
        assert_eq!(ids(&detect_input_triggers("Any fever or chills lately?", ed)), ["ed.fever_chills"]);
        assert_eq!(
            ids(&detect_input_triggers("Tell me about your symptoms", ed)),
            ["ed.symptoms_discharge"]
        );
        assert!(detect_input_triggers("Hello Ms. Ryan", ed).is_empty());
    }

    #[test]
    fn ordered_by_priority_then_position() {
        let pack = jane_ryan();
        let ed = pack.scene("ed").unwrap();
        let m = detect_input_triggers("Do your kids have a fever? Any other symptoms?", ed);
        assert_eq!(ids(&m), ["ed.fever_chills", "ed.symptoms_discharge", "ed.family"]);
        let fever = &m[0];
        assert_eq!(fever.matched_phrase, "fever");
        let n = normalize_text("Do your kids have a fever? Any other symptoms?");
        let chars: Vec<char> = n.chars().collect();
        let s: String = chars[fever.char_span.start..fever.char_span.end].iter().collect();
        assert_eq!(s, "fever");
    }

    #[test]
    fn multi_phrase_rule_fires_on_any_phrase() {
        let pack = jane_ryan();
        let ed = pack.scene("ed").unwrap();
        for phrase in ["have sex", "husband", "kids"] {
            let m = detect_input_triggers(&format!("so, {phrase}?"), ed);
            assert_eq!(ids(&m), ["ed.family"], "{phrase}");
        }
        // earliest phrase occurrence is reported
        let m = detect_input_triggers("kids and husband", ed);
        assert_eq!(m[0].matched_phrase, "kids");
    }

    #[test]
    fn token_boundary() {
        let pack = jane_ryan();
        let ed = pack.scene("ed").unwrap();
        assert!(detect_input_triggers("I feel feverish", ed).is_empty());
        assert!(detect_input_triggers("were you discharged yesterday", ed).is_empty());
    }

    #[test]
    fn negation_flag() {
        assert!(detect_output_negation("No, no fever at all.", DEFAULT_NEGATIONS));
        assert!(!detect_output_negation("I have been feeling feverish.", DEFAULT_NEGATIONS));
        assert!(detect_output_negation("I haven't. Not once.", DEFAULT_NEGATIONS));
        assert!(detect_output_negation("Not really, why?", DEFAULT_NEGATIONS));
        // mid-reply negation is ignored
        assert!(!detect_output_negation("It burns, but no fever.", DEFAULT_NEGATIONS));
        assert!(!detect_output_negation("Yes. No fever though.", DEFAULT_NEGATIONS));
        assert!(!detect_output_negation("Nobody told me.", DEFAULT_NEGATIONS));
        assert!(!detect_output_negation("", DEFAULT_NEGATIONS));
    }

    #[test]
    fn selection_table() {
        let pack = jane_ryan();
        let ed = pack.scene("ed").unwrap();
        let lower = detect_input_triggers("any discharge?", ed);
        let smile = detect_input_triggers("how is your husband", ed);

        struct Case<'a> {
            matches: &'a [TriggerMatch],
            negation: bool,
            clip: &'a str,
            source: SelectionSource,
        }
        let cases = [
            Case { matches: &lower, negation: false, clip: "head_lower", source: SelectionSource::Input },
            Case { matches: &[], negation: false, clip: "idle_talk", source: SelectionSource::Fallback },
            Case { matches: &smile, negation: true, clip: "head_shake", source: SelectionSource::Output },
            Case { matches: &[], negation: true, clip: "head_shake", source: SelectionSource::Output },
        ];
        for c in cases {
            let sel = select_animation(&pack, ed, c.matches, c.negation);
            assert_eq!(sel.clip_id, c.clip);
            assert_eq!(sel.source, c.source);
        }
        let sel = select_animation(&pack, ed, &lower, false);
        assert_eq!(sel.expression_tag, "embarrassed");
    }

    #[test]
    fn negation_ignored_without_output_rule() {
        let pack = jane_ryan();
        let pc = pack.scene("primary_care").unwrap();
        let sel = select_animation(&pack, pc, &[], true);
        assert_eq!(sel.clip_id, "idle_seated");
        assert_eq!(sel.source, SelectionSource::Fallback);
    }

    #[test]
    fn precedence_can_be_flipped() {
        let mut pack = jane_ryan();
        pack.output_precedence = false;
        let ed = pack.scene("ed").unwrap();
        let smile = detect_input_triggers("how is your husband", ed);
        assert_eq!(select_animation(&pack, ed, &smile, true).clip_id, "slight_smile");
        assert_eq!(select_animation(&pack, ed, &[], true).clip_id, "head_shake");
    }

    proptest! {
        #[test]
        fn prefixing_no_sets_flag(reply in "[A-Za-z ,.'!?]{0,60}") {
            let prefixed = format!("No, {reply}");
            prop_assert!(detect_output_negation(&prefixed, DEFAULT_NEGATIONS));
        }

        #[test]
        fn selection_is_total_and_deterministic(utt in "[a-z ]{0,50}", neg in any::<bool>()) {
            let pack = jane_ryan();
            for scene in &pack.scenes {
                let m = detect_input_triggers(&utt, scene);
                let a = select_animation(&pack, scene, &m, neg);
                let b = select_animation(&pack, scene, &detect_input_triggers(&utt, scene), neg);
                prop_assert!(pack.clip(&a.clip_id).is_some());
                prop_assert_eq!(a, b);
            }
        }
    }
}
