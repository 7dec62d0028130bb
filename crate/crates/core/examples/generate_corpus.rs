//! Generates a small synthetic corpus and shows one incident with its planted mentions.
//!
//! cargo run --example generate_corpus

use sdoh::corpus::{corpus_to_string, generate_corpus, GeneratorSpec};

fn main() {
    let mut spec = GeneratorSpec::new(7, 20);
    spec.noise_rate = 0.3;
    let generated = generate_corpus(&spec).expect("valid spec");

    let first = &generated.records[0];
    println!("{}", first.incident_id);
    println!("  CME: {}", first.cme_report);
    println!("  LE:  {}", first.le_report);
    for m in generated.mentions.iter().filter(|m| m.incident_id == first.incident_id) {
        println!("  planted {} at {:?}#{} ({} days): {}", m.factor_id, m.sentence.report, m.sentence.index, m.days, m.text);
    }
    for f in spec.registry.iter() {
        let positives = generated.records.iter().filter(|r| r.gold_label(&f.factor_id) == Some(true)).count();
        println!("{:<24} {positives:>2}/{}", f.factor_id, generated.records.len());
    }
    let jsonl = corpus_to_string(&generated.records);
    println!("{} bytes of JSONL, {} relevance labels", jsonl.len(), generated.relevance.len());
}
