use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::text::{normalize_text, split_sentences, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionConfig {
    /// Scores above this count as repetition.
    pub threshold: f64,
    /// How many prior patient replies are compared.
    pub window: usize,
    pub ngram: usize,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        RepetitionConfig { threshold: 0.6, window: 10, ngram: 4 }
    }
}

/// Directive appended to a regeneration request.
pub const DO_NOT_REPEAT_DIRECTIVE: &str =
    "Do not repeat anything you have already said; answer with new wording and new information.";

fn ngram_set(tokens: &[&str], n: usize) -> HashSet<Vec<String>> {
    tokens
        .windows(n)
        .map(|w| w.iter().map(|t| t.to_string()).collect())
        .collect()
}

/// Similarity of two replies: Jaccard over word n-grams, or exact match of
/// the normalized text when either has fewer than `n` words.
pub fn pair_similarity(a: &str, b: &str, n: usize) -> f64 {
    let na = normalize_text(a);
    let nb = normalize_text(b);
    let ta = tokens(&na);
    let tb = tokens(&nb);
    if ta.len() < n || tb.len() < n {
        return if na == nb { 1.0 } else { 0.0 };
    }
    let ga = ngram_set(&ta, n);
    let gb = ngram_set(&tb, n);
    let inter = ga.intersection(&gb).count();
    let union = ga.len() + gb.len() - inter;
    inter as f64 / union as f64
}

/// Highest similarity between `candidate` and any of the last `window`
/// entries of `history` (oldest first).
pub fn repetition_score<S: AsRef<str>>(candidate: &str, history: &[S], config: &RepetitionConfig) -> f64 {
    let start = history.len().saturating_sub(config.window);
    history[start..]
        .iter()
        .map(|h| pair_similarity(candidate, h.as_ref(), config.ngram))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionOutcome {
    pub text: String,
    pub initial_score: f64,
    pub final_score: f64,
    pub regenerated: bool,
    pub dropped_sentences: usize,
    pub used_fallback: bool,
}

impl SuppressionOutcome {
    pub fn incident(&self) -> bool {
        self.regenerated
    }
}

/// Keeps the patient from repeating itself.
///
/// 1. A candidate at or below the threshold passes unchanged.
/// 2. Otherwise `regenerate` is called once with [`DO_NOT_REPEAT_DIRECTIVE`].
/// 3. If that is still repetitive, sentences that repeat the history are
///    dropped.
/// 4. If nothing usable remains, the first fallback line that is not itself
///    a repeat is used (the least repetitive one if all are).
///
/// The result is never empty.
pub fn suppress_repetition<S, F>(
    candidate: &str,
    history: &[S],
    config: &RepetitionConfig,
    fallback_lines: &[String],
    mut regenerate: F,
) -> SuppressionOutcome
where
    S: AsRef<str>,
    F: FnMut(&str) -> Option<String>,
{
    let initial_score = repetition_score(candidate, history, config);
    if initial_score <= config.threshold && !normalize_text(candidate).is_empty() {
        return SuppressionOutcome {
            text: candidate.to_string(),
            initial_score,
            final_score: initial_score,
            regenerated: false,
            dropped_sentences: 0,
            used_fallback: false,
        };
    }

    let regenerated = regenerate(DO_NOT_REPEAT_DIRECTIVE).filter(|t| !normalize_text(t).is_empty());
    let working = regenerated.clone().unwrap_or_else(|| candidate.to_string());
    let score = repetition_score(&working, history, config);
    if regenerated.is_some() && score <= config.threshold {
        return SuppressionOutcome {
            text: working,
            initial_score,
            final_score: score,
            regenerated: true,
            dropped_sentences: 0,
            used_fallback: false,
        };
    }

    let sentences = split_sentences(&working);
    let kept: Vec<&str> = sentences
        .iter()
        .copied()
        .filter(|s| repetition_score(s, history, config) <= config.threshold)
        .collect();
    let dropped = sentences.len() - kept.len();
    let joined = kept.join(" ");
    if !normalize_text(&joined).is_empty() {
        let score = repetition_score(&joined, history, config);
        if score <= config.threshold {
            return SuppressionOutcome {
                text: joined,
                initial_score,
                final_score: score,
                regenerated: true,
                dropped_sentences: dropped,
                used_fallback: false,
            };
        }
    }

    let (text, final_score) = pick_fallback(fallback_lines, history, config);
    SuppressionOutcome {
        text,
        initial_score,
        final_score,
        regenerated: true,
        dropped_sentences: sentences.len(),
        used_fallback: true,
    }
}

fn pick_fallback<S: AsRef<str>>(lines: &[String], history: &[S], config: &RepetitionConfig) -> (String, f64) {
    let scored = lines
        .iter()
        .filter(|l| !normalize_text(l).is_empty())
        .map(|l| (l, repetition_score(l, history, config)));
    let mut best: Option<(&String, f64)> = None;
    for (line, score) in scored {
        if score <= config.threshold {
            return (line.clone(), score);
        }
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((line, score));
        }
    }
    match best {
        Some((line, score)) => (line.clone(), score),
        None => ("...".to_string(), repetition_score("...", history, config)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWENTY: &str = "my back started hurting two years ago after i lifted a heavy crate at work and it never really got better since";

    /// Test oracle: enumerate 4-grams as joined strings with nested loops and
    /// count shared ones pairwise. No sets, no shared code with the module.
    fn oracle_jaccard(a: &str, b: &str) -> f64 {
        fn grams(s: &str) -> Vec<String> {
            let words: Vec<String> = s
                .to_lowercase()
                .split(|c: char| !c.is_alphanumeric() && c != '\'')
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect();
            let mut out: Vec<String> = Vec::new();
            if words.len() >= 4 {
                for i in 0..words.len() - 3 {
                    let g = format!("{} {} {} {}", words[i], words[i + 1], words[i + 2], words[i + 3]);
                    if !out.contains(&g) {
                        out.push(g);
                    }
                }
            }
            out
        }
        let ga = grams(a);
        let gb = grams(b);
        let mut shared = 0;
        for x in &ga {
            for y in &gb {
                if x == y {
                    shared += 1;
                }
            }
        }
        shared as f64 / (ga.len() + gb.len() - shared) as f64
    }

    #[test]
    fn identical_scores_one_and_disjoint_zero() {
        let cfg = RepetitionConfig::default();
        assert_eq!(repetition_score(TWENTY, &[TWENTY], &cfg), 1.0);
        assert_eq!(repetition_score("I work at a daycare near home", &[TWENTY], &cfg), 0.0);
        assert_eq!(repetition_score(TWENTY, &[] as &[&str], &cfg), 0.0);
    }

    #[test]
    fn short_replies_compare_exactly() {
        let cfg = RepetitionConfig::default();
        assert_eq!(repetition_score("No.", &["no"], &cfg), 1.0);
        assert_eq!(repetition_score("No.", &["Nope."], &cfg), 0.0);
        assert_eq!(repetition_score("No.", &[TWENTY], &cfg), 0.0);
    }

    #[test]
    fn half_repeat_matches_oracle() {
        let words: Vec<&str> = TWENTY.split(' ').collect();
        assert_eq!(words.len(), 22);
        let prior = words[..20].join(" ");
        let candidate = format!(
            "{} {}",
            words[..10].join(" "),
            "so now i take something stronger most nights to sleep"
        );
        let expected = oracle_jaccard(&candidate, &prior);
        // 7 shared grams out of 17 + 17 - 7
        assert!((expected - 7.0 / 27.0).abs() < 1e-12);
        let cfg = RepetitionConfig::default();
        let got = repetition_score(&candidate, &[prior.as_str()], &cfg);
        assert!((got - expected).abs() < 1e-12);
        assert!(got <= cfg.threshold);
        let out = suppress_repetition(&candidate, &[prior], &cfg, &[], |_| panic!("no regeneration expected"));
        assert_eq!(out.text, candidate);
    }

    #[test]
    fn window_limits_history() {
        let cfg = RepetitionConfig { window: 2, ..Default::default() };
        let history = vec![TWENTY.to_string(), "a b c d e".into(), "f g h i j".into()];
        assert_eq!(repetition_score(TWENTY, &history, &cfg), 0.0);
    }

    #[test]
    fn fresh_candidate_unchanged() {
        let cfg = RepetitionConfig::default();
        let out = suppress_repetition("Something new entirely here.", &[TWENTY], &cfg, &[], |_| None);
        assert!(!out.regenerated);
        assert_eq!(out.text, "Something new entirely here.");
    }

    #[test]
    fn regeneration_replaces_repeat() {
        let cfg = RepetitionConfig::default();
        let mut calls = Vec::new();
        let out = suppress_repetition(TWENTY, &[TWENTY], &cfg, &[], |d| {
            calls.push(d.to_string());
            Some("I work at a daycare and the kids are a handful.".into())
        });
        assert_eq!(calls, [DO_NOT_REPEAT_DIRECTIVE]);
        assert!(out.regenerated && !out.used_fallback);
        assert_eq!(out.text, "I work at a daycare and the kids are a handful.");
    }

    #[test]
    fn repeated_sentences_are_dropped() {
        let cfg = RepetitionConfig::default();
        let prior = "It burns when I pee and I go all the time.";
        let regen = format!("{prior} Also my back hurts.");
        let out = suppress_repetition(prior, &[prior], &cfg, &[], |_| Some(regen.clone()));
        assert_eq!(out.dropped_sentences, 1);
        assert_eq!(out.text, "Also my back hurts.");
        assert!(out.final_score <= cfg.threshold);
    }

    #[test]
    fn all_repeats_fall_back() {
        let cfg = RepetitionConfig::default();
        let lines = vec!["Sorry?".to_string(), "Say again?".to_string()];
        let out = suppress_repetition(TWENTY, &[TWENTY, "Sorry?"], &cfg, &lines, |_| Some(TWENTY.into()));
        assert!(out.used_fallback);
        assert_eq!(out.text, "Say again?");
        assert_eq!(out.final_score, 0.0);
    }

    #[test]
    fn oracle_agrees_on_mixed_pairs() {
        let samples = [
            TWENTY,
            "it burns when i pee and i feel like i have to go all the time",
            "i feel like i have to go all the time and it burns at night",
            "two years ago after i lifted a heavy crate at work",
            "no fever that i know of and no chills either",
        ];
        for a in samples {
            for b in samples {
                let got = pair_similarity(a, b, 4);
                assert!((got - oracle_jaccard(a, b)).abs() < 1e-12, "{a} / {b}");
            }
        }
    }
}
