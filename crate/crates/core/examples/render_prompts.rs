//! Renders every prompt kind for one factor.
//!
//! cargo run --example render_prompts

use sdoh::corpus::FactorRegistry;
use sdoh::prompts::{join_descriptions, render, Bindings, Placeholder, PromptKind};

fn main() {
    let registry = FactorRegistry::builtin();
    let factor = registry.get("financial_problem").expect("builtin factor");
    let report = "He was behind on rent. His car was repossessed last week.";
    let descriptions = join_descriptions(["His car was repossessed last week."]);
    for kind in PromptKind::ALL {
        let (slot, value) = match kind {
            PromptKind::Verification => (Placeholder::TargetSentence, "He was behind on rent."),
            PromptKind::Extraction => (Placeholder::RelevantDescriptions, descriptions.as_str()),
            _ => (Placeholder::InputReport, report),
        };
        let req = render(kind, &Bindings::for_factor(factor).with(slot, value)).expect("all slots bound");
        println!("=== {kind} (expects {:?}, key {})", kind.expected_payload(), &req.cache_key()[..12]);
        println!("{}\n", req.flattened());
    }
}
