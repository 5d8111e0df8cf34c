//! Synthetic corpora with known answers.
//!
//! Every rationale span carries one marker token whose weight in a matching
//! [`ReferenceClassifier`] is known, so the effect of any occlusion can be
//! computed in closed form. Supporting spans push the approval logit toward
//! the case's judgment, opposing spans away from it, neutral and lower-court
//! spans not at all. A leading anchor token sets the baseline logit, always on
//! the judgment's side, so the baseline prediction is correct.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Case, Judgment, Language, SpanLabel};
use crate::gateway::ReferenceClassifier;

const FILLER_DE: &[&str] = &[
    "Die",
    "Beschwerdeführerin",
    "rügt",
    "eine",
    "Verletzung",
    "des",
    "rechtlichen",
    "Gehörs",
    "gemäss",
    "Vorinstanz",
    "hat",
    "den",
    "Sachverhalt",
    "festgestellt",
    "über",
    "Rückforderung",
    "Ansprüche",
    "Gericht",
    "Verfügung",
    "Kündigung",
];
const FILLER_FR: &[&str] = &[
    "Le",
    "recourant",
    "fait",
    "valoir",
    "une",
    "violation",
    "du",
    "droit",
    "d'être",
    "entendu",
    "selon",
    "l'arrêt",
    "attaqué",
    "autorité",
    "précédente",
    "décision",
    "été",
    "rendue",
    "créancière",
    "délai",
];
const FILLER_IT: &[&str] = &[
    "Il",
    "ricorrente",
    "lamenta",
    "la",
    "violazione",
    "del",
    "diritto",
    "di",
    "essere",
    "sentito",
    "secondo",
    "sentenza",
    "impugnata",
    "autorità",
    "inferiore",
    "è",
    "stata",
    "più",
    "però",
    "istanza",
];

const COURTS_DE: &[&str] = &[
    "Obergericht des Kantons Zürich",
    "Kantonsgericht St. Gallen",
    "Verwaltungsgericht des Kantons Bern",
    "Obergericht des Kantons Aargau",
    "Sozialversicherungsgericht des Kantons Zürich",
    "Appellationsgericht Basel-Stadt",
    "Kantonsgericht Luzern",
];
const COURTS_FR: &[&str] = &[
    "Tribunal cantonal du canton de Vaud",
    "Cour de justice du canton de Genève",
    "Tribunal cantonal du canton de Fribourg",
    "Cour d'appel civile du Tribunal cantonal",
    "Tribunal administratif du canton de Neuchâtel",
];
const COURTS_IT: &[&str] = &[
    "Tribunale d'appello del Cantone Ticino",
    "Tribunale cantonale delle assicurazioni",
    "Camera di esecuzione e fallimenti",
    "Tribunale amministrativo del Cantone Ticino",
];

const LEGAL_AREAS: &[&str] = &["civil law", "penal law", "public law", "social law"];

pub fn filler_words(language: Language) -> &'static [&'static str] {
    match language {
        Language::De => FILLER_DE,
        Language::Fr => FILLER_FR,
        Language::It => FILLER_IT,
    }
}

/// Built-in lower court names for synthetic cases.
pub fn court_names(language: Language) -> &'static [&'static str] {
    match language {
        Language::De => COURTS_DE,
        Language::Fr => COURTS_FR,
        Language::It => COURTS_IT,
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub cases: usize,
    pub seed: u64,
    pub languages: Vec<Language>,
    /// Spans per rationale label are drawn from `1..=max_spans_per_label`.
    pub max_spans_per_label: usize,
    /// Marker weights are drawn from this magnitude range.
    pub weight_range: (f64, f64),
    /// Baseline logits are drawn from this magnitude range.
    pub baseline_range: (f64, f64),
    /// Give court-name tokens small random weights so that lower-court
    /// insertion moves predictions. Off by default.
    pub weighted_courts: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            cases: 30,
            seed: 0,
            languages: Language::ALL.to_vec(),
            max_spans_per_label: 4,
            weight_range: (0.4, 0.8),
            baseline_range: (0.5, 1.5),
            weighted_courts: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub cases: Vec<Case>,
    pub classifier: ReferenceClassifier,
    /// Approval logit of each unperturbed case.
    pub baseline_logits: BTreeMap<String, f64>,
    /// Approval-logit contribution of each span, by case and span index.
    pub span_weights: BTreeMap<String, Vec<f64>>,
}

impl SyntheticCorpus {
    /// Approval logit after removing the given spans of a case.
    pub fn logit_without(&self, case_id: &str, spans: &[usize]) -> f64 {
        let w = &self.span_weights[case_id];
        self.baseline_logits[case_id] - spans.iter().map(|&i| w[i]).sum::<f64>()
    }
}

fn phrase(rng: &mut ChaCha8Rng, words: &[&str], n: usize) -> Vec<String> {
    (0..n)
        .map(|_| words.choose(rng).expect("non-empty").to_string())
        .collect()
}

pub fn synthesize(opts: &SynthOptions) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights: Vec<(String, f64)> = Vec::new();
    let mut cases = Vec::with_capacity(opts.cases);
    let mut baseline_logits = BTreeMap::new();
    let mut span_weights = BTreeMap::new();

    if opts.weighted_courts {
        for lang in &opts.languages {
            for court in court_names(*lang) {
                for tok in court.split_whitespace() {
                    if filler_words(*lang).contains(&tok) {
                        continue;
                    }
                    weights.push((tok.to_string(), rng.gen_range(-0.05..0.05)));
                }
            }
        }
    }

    for n in 0..opts.cases {
        let language = opts.languages[n % opts.languages.len()];
        let case_id = format!("s{:05}", n + 1);
        let judgment = if rng.gen_bool(0.5) {
            Judgment::Approval
        } else {
            Judgment::Dismissal
        };
        // +1 pushes toward approval
        let toward = if judgment == Judgment::Approval {
            1.0
        } else {
            -1.0
        };
        let target_logit = toward * rng.gen_range(opts.baseline_range.0..=opts.baseline_range.1);
        let anchor = format!("{case_id}a");
        let mut span_sum = 0.0;

        let mut parts: Vec<(Vec<String>, SpanLabel)> = Vec::new();
        let filler = filler_words(language);
        for label in [SpanLabel::Supports, SpanLabel::Opposes, SpanLabel::Neutral] {
            for j in 0..rng.gen_range(1..=opts.max_spans_per_label.max(1)) {
                let len = rng.gen_range(2..6);
                let mut words = phrase(&mut rng, filler, len);
                let w = match label {
                    SpanLabel::Supports => {
                        toward * rng.gen_range(opts.weight_range.0..=opts.weight_range.1)
                    }
                    SpanLabel::Opposes => {
                        -toward * rng.gen_range(opts.weight_range.0..=opts.weight_range.1)
                    }
                    _ => 0.0,
                };
                if w != 0.0 {
                    let marker = format!("{case_id}{}{j}", &label.as_str()[..1]);
                    // never last, so the trailing period stays off the marker
                    let at = rng.gen_range(0..words.len());
                    words.insert(at, marker.clone());
                    weights.push((marker, w));
                    span_sum += w;
                }
                words.last_mut().expect("non-empty").push('.');
                parts.push((words, label));
            }
        }
        // the anchor absorbs the span weights so the full text sits at the target
        weights.push((anchor.clone(), target_logit - span_sum));
        let courts = court_names(language);
        let court = courts.choose(&mut rng).expect("courts");
        parts.push((
            court.split_whitespace().map(String::from).collect(),
            SpanLabel::LowerCourt,
        ));
        parts.shuffle(&mut rng);

        let mut facts = format!("{anchor} ");
        let mut spans = Vec::new();
        for (i, (words, label)) in parts.iter().enumerate() {
            if i > 0 {
                facts.push(' ');
            }
            let start = facts.chars().count();
            facts.push_str(&words.join(" "));
            spans.push((start, facts.chars().count(), *label));
        }
        let year = rng.gen_range(2000..=2022);
        let area = LEGAL_AREAS.choose(&mut rng).expect("areas");
        let case = Case::new(&case_id, language, year, *area, judgment, facts, spans)
            .expect("synthetic case is well formed");
        cases.push(case);
    }

    let classifier = ReferenceClassifier::new(weights, 0.0);
    for case in &cases {
        baseline_logits.insert(case.case_id.clone(), classifier.approval_logit(&case.facts));
        let w: Vec<f64> = case
            .spans
            .iter()
            .map(|s| classifier.weight_sum(&s.text))
            .collect();
        span_weights.insert(case.case_id.clone(), w);
    }
    SyntheticCorpus {
        cases,
        classifier,
        baseline_logits,
        span_weights,
    }
}

/// A random case for counting tests: `n_spans` spans with random rationale
/// labels and no weights attached.
pub fn random_case<R: Rng>(rng: &mut R, case_id: &str, language: Language, n_spans: usize) -> Case {
    let filler = filler_words(language);
    let labels = [SpanLabel::Supports, SpanLabel::Opposes, SpanLabel::Neutral];
    let mut facts = String::new();
    let mut spans = Vec::new();
    for i in 0..n_spans {
        if i > 0 {
            facts.push(' ');
        }
        let start = facts.chars().count();
        let words: Vec<&str> = (0..rng.gen_range(1..5))
            .map(|_| *filler.choose(rng).expect("non-empty"))
            .collect();
        facts.push_str(&words.join(" "));
        spans.push((
            start,
            facts.chars().count(),
            *labels.choose(rng).expect("labels"),
        ));
    }
    let judgment = if rng.gen_bool(0.5) {
        Judgment::Approval
    } else {
        Judgment::Dismissal
    };
    Case::new(case_id, language, 2020, "civil law", judgment, facts, spans).expect("well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let opts = SynthOptions {
            cases: 12,
            seed: 3,
            ..Default::default()
        };
        let a = synthesize(&opts);
        let b = synthesize(&opts);
        assert_eq!(a.cases, b.cases);
        for case in &a.cases {
            assert_eq!(case.reconstruct_facts(), case.facts);
            assert_eq!(case.lower_courts().len(), 1);
            let l = a.baseline_logits[&case.case_id];
            // baseline prediction matches the judgment
            assert_eq!(l > 0.0, case.judgment == Judgment::Approval);
            assert!((0.5..=1.5).contains(&l.abs()));
        }
    }

    #[test]
    fn span_weights_follow_labels() {
        let c = synthesize(&SynthOptions {
            cases: 9,
            seed: 1,
            ..Default::default()
        });
        for case in &c.cases {
            let toward = if case.judgment == Judgment::Approval {
                1.0
            } else {
                -1.0
            };
            for (span, w) in case.spans.iter().zip(&c.span_weights[&case.case_id]) {
                match span.label {
                    SpanLabel::Supports => assert!(toward * w >= 0.4),
                    SpanLabel::Opposes => assert!(toward * w <= -0.4),
                    _ => assert_eq!(*w, 0.0),
                }
            }
            let all: Vec<usize> = (0..case.spans.len()).collect();
            let rest = c.logit_without(&case.case_id, &all);
            let anchor = c.classifier.weight(&format!("{}a", case.case_id));
            assert!((rest - anchor).abs() < 1e-12);
        }
    }
}
