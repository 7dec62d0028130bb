//! Confusion counts, F1 variants and Cohen's kappa.
//!
//! cargo run --example metrics

use std::collections::BTreeMap;

use sdoh::corpus::TaskKey;
use sdoh::eval::{cohens_kappa, paired_labels, prf1, score_binary, two_class_macro_f1};

fn labels(bits: &str) -> BTreeMap<TaskKey, bool> {
    bits.chars().enumerate().map(|(i, c)| (TaskKey::new(format!("inc{i:02}"), "job_problem"), c == '1')).collect()
}

fn main() {
    let gold = labels("1101001000");
    let model = labels("1001101000");
    let score = score_binary(&model, &gold).expect("same tasks");
    let m = prf1(&score.counts);
    println!("{:?}", score.counts);
    println!("P {:.3} R {:.3} F1 {:.3} acc {:.3} macro-F1 {:.3}", m.precision, m.recall, m.f1, m.accuracy, two_class_macro_f1(&score.counts));

    let (a, b) = paired_labels(&gold, &model);
    println!("kappa(gold, model) = {:.3}", cohens_kappa(&a, &b).expect("paired"));
}
