//! Rule-based sentence segmentation and text normalization.
//!
//! Every pipeline stage and every gold sentence index is defined against the
//! output of [`segment`], so the rules here are fixed. Extending
//! [`ABBREVIATIONS`] changes sentence indices of existing gold files and is a
//! breaking change.

use serde::{Deserialize, Serialize};

use crate::corpus::ReportTag;

/// Tokens that never end a sentence when followed by a period.
/// Matched case-insensitively against the word immediately before the period.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "jr", "sr", "st", "vs", "etc", "e.g", "i.e", "no", "approx",
];

/// Sentences shorter than this (in chars, after trimming) are merged into the
/// following sentence.
const MIN_SENTENCE_CHARS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub report_tag: ReportTag,
    pub index: usize,
    pub text: String,
    /// Offsets are in Unicode scalar values (chars), end exclusive.
    pub char_start: usize,
    pub char_end: usize,
}

impl SentenceSpan {
    pub fn sentence_ref(&self) -> crate::corpus::SentenceRef {
        crate::corpus::SentenceRef {
            report: self.report_tag,
            index: self.index,
        }
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// The word (letters, digits and inner periods) ending right before `dot`.
fn word_before(chars: &[char], dot: usize) -> String {
    let mut start = dot;
    while start > 0 {
        let c = chars[start - 1];
        if c.is_alphanumeric() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    chars[start..dot].iter().collect::<String>().to_lowercase()
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let word = word_before(chars, dot);
    let word = word.trim_start_matches('.');
    ABBREVIATIONS.contains(&word)
}

/// Raw (start, end) char ranges of sentence candidates, before trimming.
fn candidate_ranges(chars: &[char]) -> Vec<(usize, usize)> {
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if is_terminal(c) {
            let first = i;
            let mut end = i + 1;
            while end < n && is_terminal(chars[end]) {
                end += 1;
            }
            let run = end - first;
            while end < n && is_closing(chars[end]) {
                end += 1;
            }
            let boundary = if end == n {
                true
            } else if !chars[end].is_whitespace() {
                false
            } else {
                let mut j = end;
                while j < n && chars[j].is_whitespace() {
                    j += 1;
                }
                while j < n && is_opening(chars[j]) {
                    j += 1;
                }
                let upper_next = j == n || chars[j].is_uppercase();
                let abbrev = run == 1 && c == '.' && is_abbreviation(chars, first);
                upper_next && !abbrev
            };
            if boundary {
                out.push((start, end));
                start = end;
            }
            i = end;
            continue;
        }
        if c == '\n' {
            // A line that does not end in terminal punctuation closes a sentence.
            let mut k = i;
            while k > start && chars[k - 1].is_whitespace() {
                k -= 1;
            }
            let mut p = k;
            while p > start && is_closing(chars[p - 1]) {
                p -= 1;
            }
            let punctuated = p > start && is_terminal(chars[p - 1]);
            if k > start && !punctuated {
                out.push((start, i));
                start = i + 1;
            }
        }
        i += 1;
    }
    if start < n {
        out.push((start, n));
    }
    out
}

fn trim_range(chars: &[char], (mut s, mut e): (usize, usize)) -> Option<(usize, usize)> {
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    (s < e).then_some((s, e))
}

/// Splits `text` into sentences.
///
/// A sentence ends at `.`, `?` or `!` (runs of these and trailing closing
/// quotes are absorbed) when followed by whitespace and an uppercase letter or
/// the end of the text, unless the period follows an entry of
/// [`ABBREVIATIONS`]. Decimal numbers never split because the period is not
/// followed by whitespace. A newline closes the current sentence when its line
/// has no terminal punctuation.
pub fn segment(report_tag: ReportTag, text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let trimmed: Vec<(usize, usize)> = candidate_ranges(&chars)
        .into_iter()
        .filter_map(|r| trim_range(&chars, r))
        .collect();

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(trimmed.len());
    let mut pending: Option<usize> = None;
    for (s, e) in trimmed {
        let s = pending.take().unwrap_or(s);
        if e - s < MIN_SENTENCE_CHARS {
            pending = Some(s);
            continue;
        }
        merged.push((s, e));
    }
    if let Some(s) = pending {
        // Trailing short fragment with nothing after it: attach to the previous sentence.
        match merged.last_mut() {
            Some(last) => last.1 = trim_end(&chars, chars.len()),
            None => {
                if let Some(r) = trim_range(&chars, (s, chars.len())) {
                    merged.push(r);
                }
            }
        }
    }

    merged
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| SentenceSpan {
            report_tag,
            index,
            text: chars[s..e].iter().collect(),
            char_start: s,
            char_end: e,
        })
        .collect()
}

fn trim_end(chars: &[char], mut e: usize) -> usize {
    while e > 0 && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    e
}

fn map_quote(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201a}' | '\u{201b}' | '\u{2032}' => '\'',
        '\u{201c}' | '\u{201d}' | '\u{201e}' | '\u{201f}' | '\u{2033}' => '"',
        other => other,
    }
}

fn lower(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Canonical form used for sentence matching: lowercase, straight quotes,
/// single spaces, no surrounding whitespace, no trailing `.`/`?`/`!`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().map(map_quote).map(lower) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    loop {
        let before = out.len();
        while out.ends_with(is_terminal) {
            out.pop();
        }
        while out.ends_with(' ') {
            out.pop();
        }
        if out.len() == before {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<String> {
        segment(ReportTag::Cme, text).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(texts("He lost his job. He was sad."), vec!["He lost his job.", "He was sad."]);
    }

    #[test]
    fn abbreviation_and_decimal_do_not_split() {
        assert_eq!(texts("Dr. Smith saw him on 3.5 mg."), vec!["Dr. Smith saw him on 3.5 mg."]);
        assert_eq!(texts("He saw approx. Ten people, e.g. Friends. Then left."), vec![
            "He saw approx. Ten people, e.g. Friends.",
            "Then left."
        ]);
    }

    #[test]
    fn empty_input() {
        assert!(segment(ReportTag::Le, "").is_empty());
        assert!(segment(ReportTag::Le, "  \n\t ").is_empty());
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("It was 5 p.m. on a Monday."), vec!["It was 5 p.m. on a Monday."]);
        assert_eq!(texts("He said ok. then left."), vec!["He said ok. then left."]);
    }

    #[test]
    fn newline_without_punctuation_closes_sentence() {
        assert_eq!(texts("Scene summary\nThe victim was found. He was cold."), vec![
            "Scene summary",
            "The victim was found.",
            "He was cold."
        ]);
    }

    #[test]
    fn question_and_exclamation_runs() {
        assert_eq!(texts("Why?! He left. \"Stop!\" She cried."), vec!["Why?!", "He left.", "\"Stop!\"", "She cried."]);
    }

    #[test]
    fn short_fragments_merge_forward() {
        let spans = segment(ReportTag::Cme, "A\nThe victim died.");
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].text, "A\nThe victim died.");
        let spans = segment(ReportTag::Cme, "He died.\nX");
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].text, "He died.\nX");
    }

    #[test]
    fn offsets_are_char_based() {
        let text = "Café closed. He left.";
        let spans = segment(ReportTag::Le, text);
        let chars: Vec<char> = text.chars().collect();
        assert_eq!(spans[1].char_start, 13);
        let s: String = chars[spans[1].char_start..spans[1].char_end].iter().collect();
        assert_eq!(s, "He left.");
    }

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize("  He  DRANK daily. "), "he drank daily");
        assert_eq!(normalize("don\u{2019}t"), "don't");
        assert_eq!(normalize("Really?! ."), "really");
        assert_eq!(normalize(""), "");
    }

    fn sentenceish() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("He".to_string()),
                Just("drank".to_string()),
                Just("Dr.".to_string()),
                Just("3.5".to_string()),
                Just("e.g.".to_string()),
                Just("home.".to_string()),
                Just("Why?".to_string()),
                Just("No.".to_string()),
                Just("\n".to_string()),
                Just("x".to_string()),
                Just("!".to_string()),
                Just("The".to_string()),
                "[a-zA-Z]{1,6}",
            ],
            0..30,
        )
        .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn spans_are_ordered_and_slice_source(text in sentenceish()) {
            let chars: Vec<char> = text.chars().collect();
            let spans = segment(ReportTag::Cme, &text);
            let mut prev_end = 0;
            for (i, s) in spans.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert!(s.char_start >= prev_end);
                prop_assert!(s.char_start < s.char_end && s.char_end <= chars.len());
                let slice: String = chars[s.char_start..s.char_end].iter().collect();
                prop_assert_eq!(&slice, &s.text);
                prop_assert_eq!(slice.trim(), s.text.as_str());
                prev_end = s.char_end;
            }
            // Everything outside the spans is whitespace.
            let mut covered = vec![false; chars.len()];
            for s in &spans {
                for c in covered.iter_mut().take(s.char_end).skip(s.char_start) { *c = true; }
            }
            for (c, cov) in chars.iter().zip(covered) {
                prop_assert!(cov || c.is_whitespace());
            }
        }

        #[test]
        fn each_sentence_resegments_to_itself(text in sentenceish()) {
            for s in segment(ReportTag::Le, &text) {
                let again = segment(ReportTag::Le, &s.text);
                prop_assert_eq!(again.len(), 1, "{:?}", s.text);
                prop_assert_eq!(&again[0].text, &s.text);
            }
        }

        #[test]
        fn normalize_idempotent_and_nonincreasing(text in "\\PC{0,40}") {
            let once = normalize(&text);
            prop_assert_eq!(normalize(&once), once.clone());
            prop_assert!(once.chars().count() <= text.chars().count());
        }
    }
}
