//! Text normalization and token-run matching shared by the trigger engine,
//! the responders and the disclosure guard.

/// Lowercase, map punctuation to spaces, collapse whitespace.
///
/// Apostrophes inside a word are kept (so "I haven't" stays matchable as a
/// phrase); apostrophes at a token edge are dropped. The function is
/// idempotent.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut mapped = String::with_capacity(lowered.len());
    for c in lowered.chars() {
        if c.is_alphanumeric() {
            mapped.push(c);
        } else if c == '\'' || c == '\u{2019}' {
            mapped.push('\'');
        } else {
            mapped.push(' ');
        }
    }
    let mut out = String::with_capacity(mapped.len());
    for token in mapped.split_whitespace() {
        let token = token.trim_matches('\'');
        if token.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Tokens of an already-normalized string.
pub fn tokens(normalized: &str) -> Vec<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Character span `[start, end)` into a normalized string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

/// Finds the first occurrence of `phrase` (normalized on the fly) as a
/// contiguous token run in `normalized`. Returns the char span of the run.
pub fn find_token_run(normalized: &str, phrase: &str) -> Option<CharSpan> {
    let phrase = normalize_text(phrase);
    let needle = tokens(&phrase);
    if needle.is_empty() {
        return None;
    }
    let hay = token_offsets(normalized);
    if needle.len() > hay.len() {
        return None;
    }
    for i in 0..=hay.len() - needle.len() {
        if hay[i..i + needle.len()]
            .iter()
            .zip(&needle)
            .all(|((tok, _, _), n)| tok == n)
        {
            let start = hay[i].1;
            let end = hay[i + needle.len() - 1].2;
            return Some(CharSpan { start, end });
        }
    }
    None
}

/// True if `phrase` occurs as a contiguous token run in `normalized`.
pub fn contains_token_run(normalized: &str, phrase: &str) -> bool {
    find_token_run(normalized, phrase).is_some()
}

/// True if the normalized text starts with the token run of `phrase`.
pub fn starts_with_token_run(normalized: &str, phrase: &str) -> bool {
    let phrase = normalize_text(phrase);
    let needle = tokens(&phrase);
    let hay = tokens(normalized);
    !needle.is_empty() && hay.len() >= needle.len() && hay[..needle.len()] == needle[..]
}

/// (token, char_start, char_end) triples.
fn token_offsets(normalized: &str) -> Vec<(&str, usize, usize)> {
    let mut out = Vec::new();
    let mut char_pos = 0usize;
    let mut byte_start = None;
    let mut char_start = 0usize;
    for (byte_idx, c) in normalized.char_indices() {
        if c == ' ' {
            if let Some(b) = byte_start.take() {
                out.push((&normalized[b..byte_idx], char_start, char_pos));
            }
        } else if byte_start.is_none() {
            byte_start = Some(byte_idx);
            char_start = char_pos;
        }
        char_pos += 1;
    }
    if let Some(b) = byte_start {
        out.push((&normalized[b..], char_start, char_pos));
    }
    out
}

/// First sentence of a raw reply: everything before the first `.`, `!`, `?`,
/// `;` or newline.
pub fn first_sentence(raw: &str) -> &str {
    match raw.find(['.', '!', '?', ';', '\n']) {
        Some(idx) => &raw[..idx],
        None => raw,
    }
}

/// Splits a raw reply into sentences, keeping terminal punctuation.
pub fn split_sentences(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?' | b'\n') {
            let mut end = i + 1;
            while end < bytes.len() && matches!(bytes[end], b'.' | b'!' | b'?') {
                end += 1;
            }
            let s = raw[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    let tail = raw[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}
