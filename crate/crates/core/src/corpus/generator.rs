//! Seeded synthetic corpus. Each planted factor mention is a sentence built
//! from a factor-specific clause (containing a lexicon phrase) and a temporal
//! phrase with a known day offset, so gold labels follow from the plan alone.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    CorpusError, FactorRegistry, GoldRelevanceSet, IncidentRecord, ReportTag, SentenceRef, TaskKey,
};
use crate::corpus::Relevance;

/// A factor counts when it occurred at most this many days before the incident (inclusive).
pub const TWO_WEEK_WINDOW_DAYS: u32 = 14;

pub const DEFAULT_FACTORS: &[&str] = &[
    "adverse_childhood_experience",
    "alcohol_problem",
    "exposure_to_disaster",
    "financial_problem",
    "job_problem",
    "mental_health_problem",
];

struct Pronouns {
    subject: &'static str,
    subject_cap: &'static str,
    possessive: &'static str,
    object: &'static str,
    sex: &'static str,
}

const PRONOUNS: [Pronouns; 2] = [
    Pronouns {
        subject: "he",
        subject_cap: "He",
        possessive: "his",
        object: "him",
        sex: "male",
    },
    Pronouns {
        subject: "she",
        subject_cap: "She",
        possessive: "her",
        object: "her",
        sex: "female",
    },
];

fn fill(template: &str, p: &Pronouns) -> String {
    template
        .replace("{S}", p.subject_cap)
        .replace("{s}", p.subject)
        .replace("{p}", p.possessive)
        .replace("{o}", p.object)
}

/// (clause template, lexicon phrase template) per factor.
const CLAUSES: &[(&str, &[(&str, &str)])] = &[
    ("adverse_childhood_experience", &[
        ("{S} talked with a counselor about {p} childhood abuse", "childhood abuse"),
        ("{S} described growing up in foster care as a child", "foster care as a child"),
        ("{S} told a relative about {p} traumatic childhood", "traumatic childhood"),
    ]),
    ("civil_legal_problem", &[
        ("{S} learned {s} was being sued by a former business partner", "being sued"),
        ("{S} lost a custody dispute in family court", "custody dispute"),
    ]),
    ("eviction_or_loss_of_home", &[
        ("{S} received an eviction notice from {p} landlord", "eviction notice"),
        ("{S} lost {p} house to foreclosure", "foreclosure"),
    ]),
    ("exposure_to_disaster", &[
        ("{S} lost most of {p} belongings in a hurricane", "hurricane"),
        ("{S} was displaced from {p} town by a wildfire", "wildfire"),
        ("{S} survived a major flood that destroyed the neighborhood", "major flood"),
    ]),
    ("financial_problem", &[
        ("{S} was overwhelmed by credit card debt", "credit card debt"),
        ("{S} filed for bankruptcy", "bankruptcy"),
        ("{S} fell behind on {p} mortgage payments", "mortgage payments"),
    ]),
    ("other_addiction", &[
        ("{S} admitted to a gambling addiction", "gambling addiction"),
        ("{S} lost {p} savings to online gambling", "online gambling"),
    ]),
    ("other_relationship_problem", &[
        ("{S} had a falling out with a close friend", "falling out with a close friend"),
        ("{S} had a heated argument with a neighbor", "argument with a neighbor"),
    ]),
    ("other_substance_abuse", &[
        ("{S} relapsed on heroin", "heroin"),
        ("{S} had been abusing prescription opioids", "prescription opioids"),
        ("{S} was seen using methamphetamine", "methamphetamine"),
    ]),
    ("recent_suicide_of_friend_or_family", &[
        ("{S} was grieving the suicide of {p} brother", "grieving the suicide"),
        ("{S} learned that a childhood friend had died by suicide", "friend had died by suicide"),
    ]),
    ("school_problem", &[
        ("{S} was expelled from school", "expelled from school"),
        ("{S} was failing {p} college classes", "college classes"),
    ]),
    ("alcohol_problem", &[
        ("{S} had been drinking heavily", "drinking heavily"),
        ("{S} was treated for alcohol dependence", "alcohol dependence"),
        ("{S} went on a drinking binge", "drinking binge"),
    ]),
    ("criminal_legal_problem", &[
        ("{S} was arrested for burglary", "arrested for"),
        ("{S} was facing felony charges", "felony charges"),
    ]),
    ("family_relationship_problem", &[
        ("{S} had a violent argument with {p} father", "argument with {p} father"),
        ("{S} became estranged from {p} mother", "estranged from"),
    ]),
    ("intimate_partner_problem", &[
        ("{S} separated from {p} spouse", "separated from"),
        ("{S} argued with {p} partner about ending the relationship", "ending the relationship"),
    ]),
    ("job_problem", &[
        ("{S} lost {p} job", "lost {p} job"),
        ("{S} was fired from {p} position at the plant", "fired from"),
        ("{S} was demoted at work", "demoted at work"),
    ]),
    ("mental_health_problem", &[
        ("{S} was diagnosed with major depression", "major depression"),
        ("{S} was hospitalized for bipolar disorder", "bipolar disorder"),
        ("{S} stopped taking {p} antidepressant medication", "antidepressant"),
    ]),
    ("physical_health_problem", &[
        ("{S} was diagnosed with terminal cancer", "terminal cancer"),
        ("{S} complained of worsening chronic back pain", "chronic back pain"),
    ]),
    ("suicide_disclosure", &[
        ("{S} told a friend that {s} wanted to kill {o}self", "wanted to kill"),
        ("{S} texted a sibling that {s} planned to end {p} life", "end {p} life"),
    ]),
];

/// (phrase template, days before the incident).
const TEMPORAL: &[(&str, u32)] = &[
    ("earlier that day", 0),
    ("the day before {p} death", 1),
    ("two days before {p} death", 2),
    ("three days prior to the incident", 3),
    ("five days before {p} death", 5),
    ("one week before {p} death", 7),
    ("ten days prior to the incident", 10),
    ("twelve days before {p} death", 12),
    ("two weeks before {p} death", 14),
    ("three weeks before {p} death", 21),
    ("one month before {p} death", 30),
    ("six weeks prior to the incident", 42),
    ("three months earlier", 90),
    ("six months prior to the incident", 180),
    ("one year before {p} death", 365),
];

/// Sentences that mention no factor and carry no temporal phrase.
const NOISE: &[&str] = &[
    "Emergency medical services responded to the scene.",
    "Dr. Smith pronounced death at the scene.",
    "The medical examiner ruled the manner of death as suicide.",
    "The cause of death was determined to be asphyxia due to hanging.",
    "Toxicology results were pending at the time of the report.",
    "Officers secured the scene and notified the next of kin.",
    "No note was found at the scene.",
    "A neighbor reported hearing a loud noise around midnight.",
    "{S} lived alone in a small apartment.",
    "The investigation found no signs of foul play.",
    "Approx. 3.5 mg of medication was recovered from the nightstand.",
    "The body was transported to the county morgue for examination.",
    "St. Mary's Hospital staff confirmed the time of death.",
    "Family members described {o} as quiet and private.",
    "The weather on the night of the incident was clear.",
    "{S} was last seen by a coworker at a gas station.",
    "A handgun was located next to the decedent.",
];

/// Lexicon phrases for one factor, expanded for both pronoun sets.
pub fn lexicon(factor_id: &str) -> Option<Vec<String>> {
    let (_, clauses) = CLAUSES.iter().find(|(id, _)| *id == factor_id)?;
    let mut out: Vec<String> = clauses
        .iter()
        .flat_map(|(_, key)| PRONOUNS.iter().map(move |p| fill(key, p)))
        .collect();
    out.sort();
    out.dedup();
    Some(out)
}

pub fn default_lexicons() -> BTreeMap<String, Vec<String>> {
    CLAUSES
        .iter()
        .map(|(id, _)| (id.to_string(), lexicon(id).unwrap_or_default()))
        .collect()
}

/// All temporal phrases with their day offsets, expanded for both pronoun sets.
pub fn temporal_phrases() -> Vec<(String, u32)> {
    let mut out: Vec<(String, u32)> = TEMPORAL
        .iter()
        .flat_map(|(t, d)| PRONOUNS.iter().map(move |p| (fill(t, p), *d)))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Smallest day offset of any temporal phrase found in `text` (case-insensitive).
pub fn temporal_offset(text: &str) -> Option<u32> {
    let lower = text.to_lowercase();
    temporal_phrases()
        .into_iter()
        .filter(|(p, _)| lower.contains(p.as_str()))
        .map(|(_, d)| d)
        .min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_incidents: usize,
    pub registry: FactorRegistry,
    /// Probability that an incident is gold-positive for each factor.
    pub positive_rates: BTreeMap<String, f64>,
    /// Probability that a gold-negative incident still carries an out-of-window mention.
    pub distractor_rate: f64,
    /// Relative weights over day offsets; only offsets from the temporal phrase table are allowed.
    pub offset_weights: BTreeMap<u32, f64>,
    /// Per-slot probability of each of six optional noise sentences in a report.
    pub noise_rate: f64,
}

impl GeneratorSpec {
    /// Six-factor default: 0.4 positive rate, 0.3 distractor rate, uniform offsets, 0.5 noise.
    pub fn new(seed: u64, n_incidents: usize) -> Self {
        let ids: Vec<String> = DEFAULT_FACTORS.iter().map(|s| s.to_string()).collect();
        let registry = FactorRegistry::builtin().subset(&ids).expect("default factors are builtin");
        Self::with_registry(seed, n_incidents, registry)
    }

    pub fn with_registry(seed: u64, n_incidents: usize, registry: FactorRegistry) -> Self {
        let positive_rates = registry.iter().map(|f| (f.factor_id.clone(), 0.4)).collect();
        Self {
            seed,
            n_incidents,
            registry,
            positive_rates,
            distractor_rate: 0.3,
            offset_weights: TEMPORAL.iter().map(|(_, d)| (*d, 1.0)).collect(),
            noise_rate: 0.5,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let cfg = |m: String| Err(CorpusError::Config(m));
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if self.n_incidents == 0 {
            return cfg("n_incidents must be positive".into());
        }
        if self.registry.is_empty() {
            return cfg("no factors".into());
        }
        for f in self.registry.iter() {
            if lexicon(&f.factor_id).is_none() {
                return cfg(format!("no synthetic lexicon for `{}`", f.factor_id));
            }
            match self.positive_rates.get(&f.factor_id) {
                Some(r) if in_unit(*r) => {}
                Some(r) => return cfg(format!("positive rate {r} for `{}` outside (0,1)", f.factor_id)),
                None => return cfg(format!("missing positive rate for `{}`", f.factor_id)),
            }
        }
        if !in_unit(self.distractor_rate) {
            return cfg(format!("distractor rate {} outside (0,1)", self.distractor_rate));
        }
        if !in_unit(self.noise_rate) {
            return cfg(format!("noise rate {} outside (0,1)", self.noise_rate));
        }
        for (d, w) in &self.offset_weights {
            if !TEMPORAL.iter().any(|(_, td)| td == d) {
                return cfg(format!("offset {d} has no temporal phrase"));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return cfg(format!("offset weight {w} for day {d} is invalid"));
            }
        }
        let total = |inside: bool| {
            self.offset_weights
                .iter()
                .filter(|(d, _)| (**d <= TWO_WEEK_WINDOW_DAYS) == inside)
                .map(|(_, w)| w)
                .sum::<f64>()
        };
        if total(true) <= 0.0 || total(false) <= 0.0 {
            return cfg("offset weights need mass both inside and outside the two-week window".into());
        }
        Ok(())
    }
}

/// Generator bookkeeping for one planted factor mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedMention {
    pub incident_id: String,
    pub factor_id: String,
    pub sentence: SentenceRef,
    pub days: u32,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<IncidentRecord>,
    pub relevance: GoldRelevanceSet,
    pub mentions: Vec<PlantedMention>,
}

fn pick_offset(rng: &mut ChaCha8Rng, weights: &BTreeMap<u32, f64>, inside: Option<bool>) -> u32 {
    let candidates: Vec<(u32, f64)> = weights
        .iter()
        .filter(|(d, w)| **w > 0.0 && inside.is_none_or(|i| (**d <= TWO_WEEK_WINDOW_DAYS) == i))
        .map(|(d, w)| (*d, *w))
        .collect();
    let total: f64 = candidates.iter().map(|c| c.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for (d, w) in &candidates {
        if x < *w {
            return *d;
        }
        x -= w;
    }
    candidates.last().expect("validated weights").0
}

struct Slot {
    text: String,
    mention: Option<(String, u32)>,
}

/// Builds the corpus described by `spec`. Output is a pure function of `spec`.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<GeneratedCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n_incidents);
    let mut relevance = GoldRelevanceSet::default();
    let mut mentions = Vec::new();

    for i in 0..spec.n_incidents {
        let incident_id = format!("syn-{:05}", i);
        let pronouns = &PRONOUNS[rng.gen_range(0..PRONOUNS.len())];
        let age: u32 = rng.gen_range(16..90);
        let le_empty = rng.gen_bool(0.05);

        let mut cme: Vec<Slot> = vec![Slot {
            text: fill(&format!("The victim was a {age} year old {} resident of the county.", pronouns.sex), pronouns),
            mention: None,
        }];
        let mut le: Vec<Slot> = if le_empty {
            Vec::new()
        } else {
            vec![Slot {
                text: "Officers responded to a call at the residence.".to_string(),
                mention: None,
            }]
        };
        for report in [&mut cme, &mut le] {
            if report.is_empty() {
                continue;
            }
            let extra = (0..6).filter(|_| rng.gen_bool(spec.noise_rate)).count().max(1);
            let mut pool: Vec<&str> = NOISE.to_vec();
            pool.shuffle(&mut rng);
            for t in pool.into_iter().take(extra) {
                report.push(Slot {
                    text: fill(t, pronouns),
                    mention: None,
                });
            }
        }

        let mut labels = BTreeMap::new();
        for factor in spec.registry.iter() {
            let id = &factor.factor_id;
            let positive = rng.gen_bool(spec.positive_rates[id]);
            let mut offsets = Vec::new();
            if positive {
                offsets.push(pick_offset(&mut rng, &spec.offset_weights, Some(true)));
                if rng.gen_bool(0.3) {
                    offsets.push(pick_offset(&mut rng, &spec.offset_weights, None));
                }
            } else if rng.gen_bool(spec.distractor_rate) {
                offsets.push(pick_offset(&mut rng, &spec.offset_weights, Some(false)));
            }
            labels.insert(id.clone(), positive);
            let clauses = CLAUSES.iter().find(|(f, _)| f == id).expect("validated").1;
            for days in offsets {
                let (clause, _) = clauses[rng.gen_range(0..clauses.len())];
                let phrases: Vec<&str> = TEMPORAL.iter().filter(|(_, d)| *d == days).map(|(t, _)| *t).collect();
                let phrase = phrases[rng.gen_range(0..phrases.len())];
                let text = format!("{} {}.", fill(clause, pronouns), fill(phrase, pronouns));
                let target = if le.is_empty() || rng.gen_bool(0.5) { &mut cme } else { &mut le };
                // Never in front of the opening sentence of a report.
                let at = rng.gen_range(1..=target.len());
                target.insert(
                    at,
                    Slot {
                        text,
                        mention: Some((id.clone(), days)),
                    },
                );
            }
        }

        let mut gold_sentences: BTreeMap<String, Vec<SentenceRef>> =
            spec.registry.iter().map(|f| (f.factor_id.clone(), Vec::new())).collect();
        for (tag, slots) in [(ReportTag::Cme, &cme), (ReportTag::Le, &le)] {
            for (index, slot) in slots.iter().enumerate() {
                let sentence = SentenceRef { report: tag, index };
                for factor in spec.registry.iter() {
                    let key = TaskKey::new(&incident_id, &factor.factor_id);
                    let is_mention = slot.mention.as_ref().is_some_and(|(f, _)| *f == factor.factor_id);
                    let label = if is_mention { Relevance::Relevant } else { Relevance::NotRelevant };
                    relevance.insert(key, sentence, label);
                }
                if let Some((factor_id, days)) = &slot.mention {
                    gold_sentences.get_mut(factor_id).expect("registered").push(sentence);
                    mentions.push(PlantedMention {
                        incident_id: incident_id.clone(),
                        factor_id: factor_id.clone(),
                        sentence,
                        days: *days,
                        text: slot.text.clone(),
                    });
                }
            }
        }

        let join = |slots: &[Slot]| slots.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        records.push(IncidentRecord {
            incident_id,
            cme_report: join(&cme),
            le_report: join(&le),
            gold_labels: Some(labels),
            gold_sentences: Some(gold_sentences),
            metadata: BTreeMap::from([
                ("source".to_string(), "synthetic".to_string()),
                ("seed".to_string(), spec.seed.to_string()),
            ]),
        });
    }

    Ok(GeneratedCorpus {
        records,
        relevance,
        mentions,
    })
}
