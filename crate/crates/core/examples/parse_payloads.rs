//! Parses typical model answers, including the messy ones.
//!
//! cargo run --example parse_payloads

use sdoh::backend::{parse_payload, PayloadKind};
use sdoh::prompts::PromptKind;

fn main() {
    let samples = [
        (PromptKind::Verification, "{\"Answer\": true}"),
        (PromptKind::Verification, "Sure, here you go:\n```json\n{\"answer\": \"False\"}\n```"),
        (PromptKind::Retrieval, "{'Relevant': ['He lost his job.']}"),
        (PromptKind::Retrieval, "{\"Relevant\": \"He lost his job.\"}"),
        (PromptKind::Extraction, "{\"HAPPENED WITHIN TWO WEEKS\": True}"),
        (PromptKind::Cot, "{\"Mentioned or Not\": [\"He lost his job.\"], \"Within Two Weeks or Not\": \"False\"}"),
        (PromptKind::Reasoning, "<think>The job loss was a year ago.</think> Final answer: False"),
        (PromptKind::Verification, "{\"Answer\": \"probably\"}"),
        (PromptKind::Verification, "I am not sure."),
    ];
    for (kind, raw) in samples {
        let expected: PayloadKind = kind.expected_payload();
        match parse_payload(raw, expected) {
            Ok(p) => println!("{kind:<12} ok    {:?} verdict={:?}", p, p.verdict()),
            Err(e) => println!("{kind:<12} error {:?}: {}", e.kind, e.message),
        }
    }
}
