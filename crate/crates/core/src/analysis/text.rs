//! Sentence splitting, clause-local negation and pattern search helpers.

use std::ops::Range;

use regex::{Match, Regex};

/// Curly apostrophes become straight ones so patterns only need one form.
/// The replacement is byte-length changing, so every offset used by the
/// classifier refers to the normalised text.
pub fn normalize(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sentence<'a> {
    pub text: &'a str,
    pub start: usize,
}

impl<'a> Sentence<'a> {
    pub fn is_question(&self) -> bool {
        self.text.ends_with('?')
    }

    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.text.len()
    }
}

/// Splits at newlines and at `.`, `!` or `?` followed by whitespace or the end
/// of the text. Sentences are trimmed and empty ones dropped.
pub fn sentences(text: &str) -> Vec<Sentence<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = match c {
            '\n' | '\r' => Some(i),
            '.' | '!' | '?' => match chars.peek() {
                None => Some(i + 1),
                Some(&(_, next)) if next.is_whitespace() => Some(i + 1),
                _ => None,
            },
            _ => None,
        };
        if let Some(end) = end {
            push_trimmed(text, start, end, &mut out);
            start = end;
        }
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

fn push_trimmed<'a>(text: &'a str, start: usize, end: usize, out: &mut Vec<Sentence<'a>>) {
    let raw = &text[start..end];
    let trimmed = raw.trim_start();
    let lead = raw.len() - trimmed.len();
    let trimmed = trimmed.trim_end();
    if !trimmed.is_empty() {
        out.push(Sentence { text: trimmed, start: start + lead });
    }
}

/// Lowercased word tokens with punctuation other than apostrophes removed.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// True when a negation token occurs among the `window` tokens before
/// `offset` inside the same clause of `sentence`.
pub fn is_negated(sentence: &str, offset: usize, negations: &[String], window: usize) -> bool {
    let before = &sentence[..offset];
    let clause = match before.rfind([',', ';', ':']) {
        Some(i) => &before[i + 1..],
        None => before,
    };
    let toks = tokens(clause);
    toks.iter().rev().take(window).any(|t| negations.iter().any(|n| n == t))
}

/// Whether any pattern matches `sentence`, discarding negated matches when
/// `negations` is given.
pub fn any_match(sentence: &str, patterns: &[Regex], negations: Option<(&[String], usize)>) -> bool {
    first_match(sentence, patterns, negations).is_some()
}

/// Earliest surviving match over all patterns.
pub fn first_match<'s>(
    sentence: &'s str,
    patterns: &[Regex],
    negations: Option<(&[String], usize)>,
) -> Option<Match<'s>> {
    patterns
        .iter()
        .flat_map(|p| p.find_iter(sentence))
        .filter(|m| match negations {
            Some((tokens, window)) => !is_negated(sentence, m.start(), tokens, window),
            None => true,
        })
        .min_by_key(|m| (m.start(), std::cmp::Reverse(m.end())))
}
