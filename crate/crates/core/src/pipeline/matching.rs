use crate::segmenter::{normalize, SentenceSpan};

/// Grounds model-quoted sentences in the source segmentation.
///
/// A candidate matches every span whose normalized text equals its own;
/// failing that, the single span that contains it or is contained by it.
/// Ambiguous or absent candidates are returned as unmatched. Matched spans come
/// back once each, in span order.
pub fn match_sentences(candidates: &[String], spans: &[SentenceSpan]) -> (Vec<SentenceSpan>, Vec<String>) {
    let normalized: Vec<String> = spans.iter().map(|s| normalize(&s.text)).collect();
    let mut hit = vec![false; spans.len()];
    let mut unmatched: Vec<String> = Vec::new();
    for candidate in candidates {
        let c = normalize(candidate);
        let equal: Vec<usize> = if c.is_empty() {
            Vec::new()
        } else {
            (0..spans.len()).filter(|&i| normalized[i] == c).collect()
        };
        if !equal.is_empty() {
            equal.into_iter().for_each(|i| hit[i] = true);
            continue;
        }
        let containing: Vec<usize> = if c.is_empty() {
            Vec::new()
        } else {
            (0..spans.len())
                .filter(|&i| !normalized[i].is_empty() && (normalized[i].contains(&c) || c.contains(&normalized[i])))
                .collect()
        };
        match containing.as_slice() {
            [only] => hit[*only] = true,
            _ => {
                if !unmatched.contains(candidate) {
                    unmatched.push(candidate.clone());
                }
            }
        }
    }
    let matched = spans.iter().zip(hit).filter(|(_, h)| *h).map(|(s, _)| s.clone()).collect();
    (matched, unmatched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ReportTag;
    use crate::segmenter::segment;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn normalized_equality() {
        let spans = segment(ReportTag::Cme, "He drank daily. She left.");
        let (m, u) = match_sentences(&s(&["he drank daily"]), &spans);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "He drank daily.");
        assert!(u.is_empty());
    }

    #[test]
    fn hallucination_is_unmatched() {
        let spans = segment(ReportTag::Cme, "He drank daily. She left.");
        let (m, u) = match_sentences(&s(&["He owned a boat."]), &spans);
        assert!(m.is_empty());
        assert_eq!(u, s(&["He owned a boat."]));
    }

    #[test]
    fn ambiguous_containment_is_unmatched() {
        let spans = segment(ReportTag::Le, "He drank daily at home. He drank daily at work.");
        let (m, u) = match_sentences(&s(&["drank daily"]), &spans);
        assert!(m.is_empty());
        assert_eq!(u.len(), 1);
        let (m, _) = match_sentences(&s(&["drank daily at work"]), &spans);
        assert_eq!(m[0].index, 1);
    }

    #[test]
    fn duplicates_collapse_and_order_follows_spans() {
        let spans = segment(ReportTag::Cme, "A first thing. B second thing. C third thing.");
        let (m, _) = match_sentences(&s(&["C third thing.", "a first thing", "A first thing."]), &spans);
        assert_eq!(m.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn repeated_sentence_matches_every_copy() {
        let spans = segment(ReportTag::Cme, "He cried. She left. He cried.");
        let (m, _) = match_sentences(&s(&["He cried."]), &spans);
        assert_eq!(m.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn empty_candidate_is_unmatched() {
        let spans = segment(ReportTag::Cme, "He cried.");
        let (m, u) = match_sentences(&s(&["  ."]), &spans);
        assert!(m.is_empty());
        assert_eq!(u.len(), 1);
    }
}
