use std::collections::{BTreeMap, HashMap};
use std::sync::{LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scenario::{DisclosureRule, ScenarioPack};
use crate::text::{contains_token_run, normalize_text};

/// Asks so far per disclosure rule. Never decreases within a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisclosureCounters(BTreeMap<String, u32>);

impl DisclosureCounters {
    pub fn get(&self, rule_id: &str) -> u32 {
        self.0.get(rule_id).copied().unwrap_or(0)
    }

    /// A rule's fact stays hidden while fewer than `reveal_after_asks` prior
    /// asks have been counted.
    pub fn is_withheld(&self, rule: &DisclosureRule) -> bool {
        self.get(&rule.id) < rule.reveal_after_asks
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn bump(&mut self, rule_id: &str) {
        *self.0.entry(rule_id.to_string()).or_insert(0) += 1;
    }
}

/// Rules whose topic the utterance touches.
pub fn asked_rules<'a>(utterance: &str, rules: &'a [DisclosureRule]) -> Vec<&'a DisclosureRule> {
    let normalized = normalize_text(utterance);
    rules
        .iter()
        .filter(|r| r.topic_patterns.iter().any(|p| contains_token_run(&normalized, p)))
        .collect()
}

/// Counts one ask per matching rule, however many of its patterns hit.
pub fn record_ask(counters: &DisclosureCounters, utterance: &str, rules: &[DisclosureRule]) -> DisclosureCounters {
    let mut next = counters.clone();
    for rule in asked_rules(utterance, rules) {
        next.bump(&rule.id);
    }
    next
}

/// Withheld terms (rule id, term) appearing in `text` for rules that are
/// still withheld under `counters`.
pub fn leaked_terms<'a>(
    text: &str,
    pack: &'a ScenarioPack,
    counters: &DisclosureCounters,
) -> Vec<(&'a DisclosureRule, &'a str)> {
    let mut out = Vec::new();
    for rule in pack.disclosure_rules.iter().filter(|r| counters.is_withheld(r)) {
        for term in &rule.withheld_terms {
            if mentions_term(text, term) {
                out.push((rule, term.as_str()));
            }
        }
    }
    out
}

// terms come from loaded packs, so the set stays small
static TERM_PATTERNS: LazyLock<Mutex<HashMap<String, Option<Regex>>>> = LazyLock::new(Default::default);

fn term_regex(term: &str) -> Option<Regex> {
    let mut cache = TERM_PATTERNS.lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry(term.to_string())
        .or_insert_with(|| {
            let normalized = normalize_text(term);
            if normalized.is_empty() {
                return None;
            }
            let words: Vec<String> = normalized.split(' ').map(regex::escape).collect();
            let pattern = format!(r"(?i)\b{}\b", words.join(r"\W+"));
            Some(Regex::new(&pattern).expect("escaped term is a valid pattern"))
        })
        .clone()
}

/// Case-insensitive, word-bounded search on the raw text. Stricter than a
/// token scan: "Vicodin's" counts as a mention.
pub fn mentions_term(text: &str, term: &str) -> bool {
    term_regex(term).is_some_and(|re| re.is_match(text))
}

/// Replaces every case-insensitive, word-bounded occurrence of a still
/// withheld term with its rule's redaction phrase.
pub fn redact(text: &str, pack: &ScenarioPack, counters: &DisclosureCounters) -> String {
    let mut out = text.to_string();
    for rule in pack.disclosure_rules.iter().filter(|r| counters.is_withheld(r)) {
        for term in &rule.withheld_terms {
            if let Some(re) = term_regex(term) {
                out = re.replace_all(&out, rule.redaction.as_str()).into_owned();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::jane_ryan;

    #[test]
    fn medication_ask_counts_once() {
        let pack = jane_ryan();
        let c0 = DisclosureCounters::default();
        let c1 = record_ask(&c0, "Are you taking any medications?", &pack.disclosure_rules);
        assert_eq!(c1.get("med_history"), 1);
        let c2 = record_ask(&c1, "How is work going?", &pack.disclosure_rules);
        assert_eq!(c2, c1);
    }

    #[test]
    fn overlapping_patterns_count_once() {
        let pack = jane_ryan();
        // hits "taking any", "medications", "pills" and "prescriptions"
        let c = record_ask(
            &DisclosureCounters::default(),
            "taking any medications, pills or prescriptions?",
            &pack.disclosure_rules,
        );
        assert_eq!(c.get("med_history"), 1);
    }

    #[test]
    fn redaction_removes_withheld_terms() {
        let pack = jane_ryan();
        let c = DisclosureCounters::default();
        let text = "I take VICODIN, vicodin's fine. Vicodinx stays.";
        assert_eq!(leaked_terms(text, &pack, &c).len(), 1);
        assert!(mentions_term("Vicodin's been helping", "vicodin"));
        assert!(!mentions_term("Vicodinx", "vicodin"));
        let red = redact(text, &pack, &c);
        assert_eq!(red, "I take some pain medication, some pain medication's fine. Vicodinx stays.");
        assert!(leaked_terms(&red, &pack, &c).is_empty());

        let revealed = record_ask(&c, "medications?", &pack.disclosure_rules);
        assert!(leaked_terms(text, &pack, &revealed).is_empty());
        assert_eq!(redact(text, &pack, &revealed), text);
    }
}
