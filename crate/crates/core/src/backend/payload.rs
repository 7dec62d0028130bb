//! Turns raw model text into typed answers.
//!
//! Models wrap JSON in code fences, chat preambles and sign-offs, change key
//! case and encode booleans as strings. The parser strips that wrapping, finds
//! the first balanced JSON object and matches keys loosely, but never guesses a
//! value: anything outside the accepted encodings is an error.

use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// One boolean under the given key.
    Bool(&'static str),
    /// A list of sentences under the given key.
    List(&'static str),
    /// The chain-of-thought pair of answers.
    TwoField,
    /// Free text ending in a final True/False token.
    FinalToken,
}

pub const MENTIONED_KEY: &str = "Mentioned or Not";
pub const WITHIN_KEY: &str = "Within Two Weeks or Not";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedPayload {
    BoolAnswer { key: String, value: bool },
    SentenceList { key: String, values: Vec<String> },
    TwoField {
        mentioned: bool,
        /// Absent only when `mentioned` is false.
        within_two_weeks: Option<bool>,
        /// Sentences the model quoted as evidence, if any.
        sentences: Vec<String>,
    },
    FinalToken(bool),
}

impl ParsedPayload {
    /// The boolean this payload decides, if it decides one.
    pub fn verdict(&self) -> Option<bool> {
        match self {
            ParsedPayload::BoolAnswer { value, .. } => Some(*value),
            ParsedPayload::TwoField {
                mentioned,
                within_two_weeks,
                ..
            } => Some(*mentioned && within_two_weeks.unwrap_or(false)),
            ParsedPayload::FinalToken(v) => Some(*v),
            ParsedPayload::SentenceList { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadErrorKind {
    Parse,
    MissingKey,
    Coercion,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct PayloadError {
    pub kind: PayloadErrorKind,
    pub message: String,
    pub raw_text: String,
}

impl PayloadError {
    fn new(kind: PayloadErrorKind, message: impl Into<String>, raw: &str) -> Self {
        Self {
            kind,
            message: message.into(),
            raw_text: raw.to_string(),
        }
    }
}

fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// End index (exclusive) of the balanced object starting at `start`, honoring strings.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_str: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if let Some(q) = in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                in_str = None;
            }
            continue;
        }
        match b {
            b'"' => in_str = Some(b),
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrites bare Python literals (`True`, `False`, `None`) outside strings.
fn pythonic_to_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    let mut escaped = false;
    let mut rest = s;
    while let Some(c) = rest.chars().next() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            out.push(c);
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        let prev_alnum = out.chars().last().is_some_and(|p| p.is_alphanumeric());
        let replaced = [("True", "true"), ("False", "false"), ("None", "null")]
            .into_iter()
            .find(|(from, _)| {
                rest.starts_with(from)
                    && !prev_alnum
                    && !rest[from.len()..].chars().next().is_some_and(|n| n.is_alphanumeric())
            });
        match replaced {
            Some((from, to)) => {
                out.push_str(to);
                rest = &rest[from.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

/// The first balanced JSON object in `raw`, after stripping fences and prose.
pub fn extract_object(raw: &str) -> Result<Map<String, Value>, PayloadError> {
    let text = strip_fences(raw);
    let mut saw_balanced = false;
    for (start, _) in text.match_indices('{') {
        let Some(end) = balanced_end(&text, start) else {
            continue;
        };
        saw_balanced = true;
        let slice = &text[start..end];
        let parsed = serde_json::from_str::<Value>(slice)
            .or_else(|_| serde_json::from_str::<Value>(&pythonic_to_json(slice)));
        if let Ok(Value::Object(map)) = parsed {
            return Ok(map);
        }
    }
    let msg = if saw_balanced {
        "no balanced object parses as JSON"
    } else {
        "no balanced JSON object found"
    };
    Err(PayloadError::new(PayloadErrorKind::Parse, msg, raw))
}

fn canonical_key(key: &str) -> String {
    let trimmed = key.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`' | '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}'));
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn lookup<'a>(map: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    let want = canonical_key(key);
    map.iter().find(|(k, _)| canonical_key(k) == want).map(|(_, v)| v)
}

fn coerce_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => {
            let s = s.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`')).to_lowercase();
            match s.as_str() {
                "true" | "yes" => Some(true),
                "false" | "no" => Some(false),
                _ => None,
            }
        }
        _ => None,
    }
}

fn coerce_list(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items.iter().map(|i| i.as_str().map(str::to_string)).collect(),
        _ => None,
    }
}

fn require<'a>(map: &'a Map<String, Value>, key: &str, raw: &str) -> Result<&'a Value, PayloadError> {
    lookup(map, key).ok_or_else(|| PayloadError::new(PayloadErrorKind::MissingKey, format!("missing key `{key}`"), raw))
}

fn coercion(key: &str, v: &Value, what: &str, raw: &str) -> PayloadError {
    PayloadError::new(PayloadErrorKind::Coercion, format!("`{key}` = {v} is not {what}"), raw)
}

/// Parses `raw` as the payload `expected`.
pub fn parse_payload(raw: &str, expected: PayloadKind) -> Result<ParsedPayload, PayloadError> {
    if expected == PayloadKind::FinalToken {
        return parse_final_verdict(raw).map(ParsedPayload::FinalToken);
    }
    let map = extract_object(raw)?;
    match expected {
        PayloadKind::Bool(key) => {
            let v = require(&map, key, raw)?;
            let value = coerce_bool(v).ok_or_else(|| coercion(key, v, "a boolean", raw))?;
            Ok(ParsedPayload::BoolAnswer {
                key: key.to_string(),
                value,
            })
        }
        PayloadKind::List(key) => {
            let v = require(&map, key, raw)?;
            let values = coerce_list(v).ok_or_else(|| coercion(key, v, "a list of strings", raw))?;
            Ok(ParsedPayload::SentenceList {
                key: key.to_string(),
                values,
            })
        }
        PayloadKind::TwoField => {
            let v = require(&map, MENTIONED_KEY, raw)?;
            let mut sentences = Vec::new();
            let mentioned = match v {
                Value::Array(_) => {
                    sentences = coerce_list(v).ok_or_else(|| coercion(MENTIONED_KEY, v, "a list of strings", raw))?;
                    !sentences.is_empty()
                }
                _ => coerce_bool(v).ok_or_else(|| coercion(MENTIONED_KEY, v, "a boolean", raw))?,
            };
            let within_two_weeks = match lookup(&map, WITHIN_KEY) {
                None | Some(Value::Null) if !mentioned => None,
                None => return Err(require(&map, WITHIN_KEY, raw).unwrap_err()),
                Some(w) => Some(coerce_bool(w).ok_or_else(|| coercion(WITHIN_KEY, w, "a boolean", raw))?),
            };
            let (want_m, want_w) = (canonical_key(MENTIONED_KEY), canonical_key(WITHIN_KEY));
            for (k, v) in &map {
                let ck = canonical_key(k);
                if ck != want_m && ck != want_w {
                    if let Some(list) = v.as_array().and_then(|_| coerce_list(v)) {
                        sentences.extend(list);
                    }
                }
            }
            Ok(ParsedPayload::TwoField {
                mentioned,
                within_two_weeks,
                sentences,
            })
        }
        PayloadKind::FinalToken => unreachable!("handled above"),
    }
}

const THINK_CLOSE: &[&str] = &["</think>", "</reasoning>"];

/// The last standalone `true`/`false` token after any reasoning block.
pub fn parse_final_verdict(raw: &str) -> Result<bool, PayloadError> {
    let tail = THINK_CLOSE
        .iter()
        .filter_map(|tag| raw.rfind(tag).map(|i| i + tag.len()))
        .max()
        .map_or(raw, |i| &raw[i..]);
    let lower = tail.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut last: Option<(usize, bool)> = None;
    for (token, value) in [("true", true), ("false", false)] {
        for (i, _) in lower.match_indices(token) {
            let before_ok = i == 0 || !is_word(bytes[i - 1]);
            let after = i + token.len();
            let after_ok = after >= bytes.len() || !is_word(bytes[after]);
            if before_ok && after_ok && last.is_none_or(|(j, _)| i > j) {
                last = Some((i, value));
            }
        }
    }
    last.map(|(_, v)| v).ok_or_else(|| {
        PayloadError::new(PayloadErrorKind::Parse, "no final True/False token", raw)
    })
}
