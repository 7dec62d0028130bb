//! Draws class-balanced samples; the size is capped by the rarer class.
//!
//! cargo run --example balanced_sample

use sdoh::corpus::{balanced_sample, generate_corpus, GeneratorSpec};

fn main() {
    let mut spec = GeneratorSpec::new(5, 400);
    spec.positive_rates.insert("alcohol_problem".into(), 0.05);
    let corpus = generate_corpus(&spec).expect("valid spec").records;
    for factor in ["alcohol_problem", "job_problem"] {
        let available = corpus.iter().filter(|r| r.gold_label(factor) == Some(true)).count();
        let sample = balanced_sample(&corpus, factor, 100, 42).expect("both classes present");
        let pos = sample.iter().filter(|r| r.gold_label(factor) == Some(true)).count();
        println!("{factor:<16} {available:>3} positives available -> {pos}/{} sampled", sample.len() - pos);
    }
}
