//! Splits a narrative into sentences with character offsets.
//!
//! cargo run --example segment_report

use sdoh::corpus::ReportTag;
use sdoh::segmenter::{normalize, segment};

const REPORT: &str = "The V was found by his wife at approx. 7 a.m. on 3/14. \
He had been drinking heavily, per Dr. Lee. He lost his job at the mill two days before his death.\n\n\
No note was found.";

fn main() {
    for s in segment(ReportTag::Cme, REPORT) {
        println!("{:>2} [{:>3}..{:>3}] {}", s.index, s.char_start, s.char_end, s.text);
    }
    println!("normalized: {}", normalize("  He LOST his job…  "));
}
