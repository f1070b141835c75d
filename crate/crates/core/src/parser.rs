//! Structured-response validation and answer extraction.
//!
//! A response is well-formed when it matches the canonical pattern
//! (dot matches newlines):
//!
//! ```text
//! ^\s*<think>(.+?)</think>\s*<answer>(.+?)</answer>\s*$
//! ```
//!
//! with two side conditions: each of the four tag literals occurs exactly
//! once in the whole text, and both captured spans are non-empty after
//! trimming whitespace. Tags are matched byte-literally; span content is
//! opaque text.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::vocab::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

static PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)^\s*<think>(.+?)</think>\s*<answer>(.+?)</answer>\s*$").unwrap()
});

static AND_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bAND\b").unwrap());

/// A validated and normalized response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub is_well_formed: bool,
    /// Trimmed reasoning span; empty when malformed.
    pub think_span: String,
    /// Trimmed answer span; empty when malformed.
    pub answer_span: String,
    /// Extracted option letters; always empty when malformed.
    pub answer_set: BTreeSet<char>,
}

fn count_occurrences(text: &str, needle: &str) -> usize {
    text.match_indices(needle).count()
}

fn captures(text: &str) -> Option<(String, String)> {
    for tag in [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE] {
        if count_occurrences(text, tag) != 1 {
            return None;
        }
    }
    let caps = PATTERN.captures(text)?;
    let think = caps[1].trim();
    let answer = caps[2].trim();
    if think.is_empty() || answer.is_empty() {
        return None;
    }
    Some((think.to_string(), answer.to_string()))
}

/// True iff `text` matches the canonical `<think>/<answer>` pattern.
pub fn validate_format(text: &str) -> bool {
    captures(text).is_some()
}

/// Normalize an answer span into option letters.
///
/// The span is uppercased; commas, semicolons, and the standalone word
/// "and" become spaces; periods and parentheses are stripped; the rest is
/// split on whitespace. Every surviving token must be a single letter within
/// the first `option_count` letters, otherwise the whole span is treated as
/// unparseable and the empty set is returned.
fn normalize_answer_span(span: &str, option_count: usize) -> BTreeSet<char> {
    let option_count = option_count.min(26);
    let last = (b'A' + option_count as u8 - 1) as char;
    let upper = span.to_uppercase().replace([',', ';'], " ");
    let no_and = AND_WORD.replace_all(&upper, " ");
    let stripped: String = no_and.chars().filter(|c| !matches!(c, '.' | '(' | ')')).collect();
    let mut letters = BTreeSet::new();
    for token in stripped.split_whitespace() {
        let mut chars = token.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if ('A'..=last).contains(&c) => {
                letters.insert(c);
            }
            _ => return BTreeSet::new(),
        }
    }
    letters
}

/// Extract the answer letters from a response, or the empty set when the
/// response is malformed or the span is unparseable.
pub fn extract_answer(text: &str, option_count: usize) -> BTreeSet<char> {
    debug_assert!((2..=26).contains(&option_count));
    match captures(text) {
        Some((_, answer)) => normalize_answer_span(&answer, option_count),
        None => BTreeSet::new(),
    }
}

/// Validate and extract in one pass.
pub fn parse_response(text: &str, option_count: usize) -> ParsedResponse {
    match captures(text) {
        Some((think, answer)) => {
            let answer_set = normalize_answer_span(&answer, option_count);
            ParsedResponse { is_well_formed: true, think_span: think, answer_span: answer, answer_set }
        }
        None => ParsedResponse {
            is_well_formed: false,
            think_span: String::new(),
            answer_span: String::new(),
            answer_set: BTreeSet::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    #[test]
    fn canonical_response_is_well_formed() {
        assert!(validate_format("<think>the bell rings</think> <answer>D</answer>"));
        assert!(validate_format("  <think>a\nb</think>\n<answer>A</answer>  "));
    }

    #[test]
    fn tag_order_and_repeats_rejected() {
        assert!(!validate_format("<answer>D</answer><think>x</think>"));
        assert!(!validate_format("<think>a</think><answer>B</answer><answer>C</answer>"));
        assert!(!validate_format("<think>x<think>y</think></think><answer>A</answer>"));
        assert!(!validate_format("<think>x</think> extra <answer>A</answer>"));
    }

    #[test]
    fn empty_spans_rejected() {
        assert!(!validate_format("<think></think><answer>A</answer>"));
        assert!(!validate_format("<think>   </think><answer>A</answer>"));
        assert!(!validate_format("<think>x</think><answer> </answer>"));
    }

    #[test]
    fn extraction_normalizes_separators_and_case() {
        let t = |span: &str| extract_answer(&format!("<think>x</think><answer>{span}</answer>"), 4);
        assert_eq!(t("A, C"), set("AC"));
        assert_eq!(t("d."), set("D"));
        assert_eq!(t("a and c"), set("AC"));
        assert_eq!(t("B;D"), set("BD"));
        assert_eq!(t("(C)"), set("C"));
    }

    #[test]
    fn unknown_tokens_poison_the_set() {
        let t = |span: &str| extract_answer(&format!("<think>x</think><answer>{span}</answer>"), 4);
        assert_eq!(t("option A"), set(""));
        assert_eq!(t("AC"), set(""));
        assert_eq!(t("E"), set(""), "letter outside the option range");
        assert_eq!(t("A blue"), set(""));
    }

    #[test]
    fn malformed_extraction_is_empty() {
        assert_eq!(extract_answer("no tags", 4), set(""));
        assert_eq!(extract_answer("<answer>A</answer><think>x</think>", 4), set(""));
    }

    #[test]
    fn parse_response_agrees_with_parts() {
        let p = parse_response("<think> why </think> <answer> b </answer>", 4);
        assert!(p.is_well_formed);
        assert_eq!(p.think_span, "why");
        assert_eq!(p.answer_span, "b");
        assert_eq!(p.answer_set, set("B"));

        let q = parse_response("nope", 4);
        assert!(!q.is_well_formed);
        assert!(q.answer_set.is_empty());
    }

    #[test]
    fn extraction_is_idempotent_on_normalized_spans() {
        for span in ["A", "B", "A B", "A B C D"] {
            let first = extract_answer(&format!("<think>x</think><answer>{span}</answer>"), 4);
            let renorm: String =
                first.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
            let second = extract_answer(&format!("<think>x</think><answer>{renorm}</answer>"), 4);
            assert_eq!(first, second);
        }
    }
}
