//! Word-level tokenizer used by the built-in scorers.
//!
//! Text is split on Unicode whitespace. Any character that is neither
//! alphanumeric nor whitespace becomes a token of its own, so
//! `"cyber-threat,"` yields `["cyber", "-", "threat", ","]`. Case is kept.

/// Splits `text` into surface tokens.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;

    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(&text[s..idx]);
            }
        } else if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(idx);
            }
        } else {
            if let Some(s) = start.take() {
                out.push(&text[s..idx]);
            }
            out.push(&text[idx..idx + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}
