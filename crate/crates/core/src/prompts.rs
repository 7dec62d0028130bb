//! Prompt templates for every extraction mode.
//!
//! Templates live in `prompts/*.txt` and are used verbatim. The `[INST]`
//! block becomes the system instruction and the text after
//! `Here is your input: ` becomes the user payload.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{DecodeParams, PayloadKind, PromptRequest};
use crate::corpus::FactorDefinition;

/// Separator between the instruction block and the input block.
pub const INPUT_SEPARATOR: &str = "\n\nHere is your input: \n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Retrieval,
    Verification,
    Extraction,
    End2End,
    Cot,
    Reasoning,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Retrieval,
        PromptKind::Verification,
        PromptKind::Extraction,
        PromptKind::End2End,
        PromptKind::Cot,
        PromptKind::Reasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Retrieval => "retrieval",
            PromptKind::Verification => "verification",
            PromptKind::Extraction => "extraction",
            PromptKind::End2End => "end2end",
            PromptKind::Cot => "cot",
            PromptKind::Reasoning => "reasoning",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Retrieval => include_str!("../prompts/retrieval.txt"),
            PromptKind::Verification => include_str!("../prompts/verification.txt"),
            PromptKind::Extraction => include_str!("../prompts/extraction.txt"),
            PromptKind::End2End => include_str!("../prompts/end2end.txt"),
            PromptKind::Cot => include_str!("../prompts/cot.txt"),
            PromptKind::Reasoning => include_str!("../prompts/reasoning.txt"),
        }
    }

    pub fn placeholders(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            PromptKind::Verification => &[TargetSocialFactor, FactorDefinition, TargetSentence],
            PromptKind::Extraction => &[TargetSocialFactor, FactorDefinition, RelevantDescriptions],
            _ => &[TargetSocialFactor, FactorDefinition, InputReport],
        }
    }

    pub fn expected_payload(self) -> PayloadKind {
        match self {
            PromptKind::Retrieval => PayloadKind::List("Relevant"),
            PromptKind::Verification => PayloadKind::Bool("Answer"),
            PromptKind::Extraction | PromptKind::End2End => PayloadKind::Bool("Happened within two weeks"),
            PromptKind::Cot => PayloadKind::TwoField,
            PromptKind::Reasoning => PayloadKind::FinalToken,
        }
    }

    /// Identifies the kind of a rendered system instruction by its fixed prefix.
    pub fn detect(system_instruction: &str) -> Option<PromptKind> {
        PromptKind::ALL.into_iter().find(|k| {
            let instruction = k.template().split(INPUT_SEPARATOR).next().unwrap_or_default();
            let pieces: Vec<&str> = instruction.split("{TARGET_SOCIAL_FACTOR}").collect();
            let (first, last) = (pieces[0], pieces[pieces.len() - 1]);
            if !system_instruction.starts_with(first) || !system_instruction.ends_with(last) {
                return false;
            }
            let mut rest = &system_instruction[first.len()..];
            pieces[1..].iter().all(|piece| match rest.find(piece) {
                Some(at) => {
                    rest = &rest[at + piece.len()..];
                    true
                }
                None => false,
            })
        })
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PromptError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    TargetSocialFactor,
    FactorDefinition,
    InputReport,
    TargetSentence,
    RelevantDescriptions,
}

impl Placeholder {
    const ALL: [Placeholder; 5] = [
        Placeholder::TargetSocialFactor,
        Placeholder::FactorDefinition,
        Placeholder::InputReport,
        Placeholder::TargetSentence,
        Placeholder::RelevantDescriptions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::TargetSocialFactor => "TARGET_SOCIAL_FACTOR",
            Placeholder::FactorDefinition => "FACTOR_DEFINITION",
            Placeholder::InputReport => "INPUT_REPORT",
            Placeholder::TargetSentence => "TARGET_SENTENCE",
            Placeholder::RelevantDescriptions => "RELEVANT_DESCRIPTIONS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("{kind} prompt is missing a binding for {{{placeholder}}}")]
    MissingBinding { kind: PromptKind, placeholder: &'static str },
    #[error("{kind} prompt needs a non-empty factor definition")]
    EmptyDefinition { kind: PromptKind },
    #[error("unknown prompt kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<Placeholder, String>);

impl Bindings {
    /// Binds the factor name and definition.
    pub fn for_factor(factor: &FactorDefinition) -> Self {
        Self::default()
            .with(Placeholder::TargetSocialFactor, &factor.name)
            .with(Placeholder::FactorDefinition, &factor.definition)
    }

    pub fn with(mut self, placeholder: Placeholder, value: impl Into<String>) -> Self {
        self.0.insert(placeholder, value.into());
        self
    }

    pub fn get(&self, placeholder: Placeholder) -> Option<&str> {
        self.0.get(&placeholder).map(String::as_str)
    }
}

/// Stage-3 context: sentences in order, duplicates dropped, one per line.
pub fn join_descriptions<'a>(sentences: impl IntoIterator<Item = &'a str>) -> String {
    let mut seen = std::collections::HashSet::new();
    sentences
        .into_iter()
        .filter(|s| seen.insert(*s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes placeholders in one pass, so bound values are never re-expanded.
fn substitute(template: &str, bindings: &Bindings) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = Placeholder::ALL.into_iter().find_map(|p| {
            let name = p.name();
            (after.starts_with(name) && after[name.len()..].starts_with('}')).then_some((p, name.len()))
        });
        match hit.and_then(|(p, len)| bindings.get(p).map(|v| (v, len))) {
            Some((value, len)) => {
                out.push_str(value);
                rest = &after[len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders `kind` with `bindings` into a request with default decode parameters.
pub fn render(kind: PromptKind, bindings: &Bindings) -> Result<PromptRequest, PromptError> {
    for p in kind.placeholders() {
        if bindings.get(*p).is_none() {
            return Err(PromptError::MissingBinding {
                kind,
                placeholder: p.name(),
            });
        }
    }
    if bindings.get(Placeholder::FactorDefinition).is_some_and(|d| d.trim().is_empty()) {
        return Err(PromptError::EmptyDefinition { kind });
    }
    let (instruction, input) = kind
        .template()
        .split_once(INPUT_SEPARATOR)
        .expect("every template has an input block");
    let system_instruction = substitute(instruction, bindings);
    let user_payload = substitute(input, bindings);
    Ok(PromptRequest {
        system_instruction,
        user_payload,
        decode_params: DecodeParams::default(),
        request_tag: kind.as_str().to_string(),
        expected_payload: Some(kind.expected_payload()),
    })
}

/// Splits a rendered payload's trailing `[Name]definition[/Name]` block.
pub fn factor_block(user_payload: &str) -> Option<(&str, &str)> {
    let body = user_payload.strip_suffix(']')?;
    let close = body.rfind("[/")?;
    let name = &body[close + 2..];
    let open_tag = format!("[{name}]");
    let start = body[..close].rfind(&open_tag)?;
    Some((name, &body[start + open_tag.len()..close]))
}

/// Text between the first `[TAG]` and the last `[/TAG]` of a payload.
pub fn tagged_block<'a>(user_payload: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("[{tag}]");
    let close = format!("[/{tag}]");
    let start = user_payload.find(&open)? + open.len();
    let end = user_payload.rfind(&close)?;
    (end >= start).then(|| &user_payload[start..end])
}
