//! Occlusion and lower-court-insertion test suites.
//!
//! Occlusion removes `k` spans that share one rationale label and leaves no
//! trace of the removal: the surrounding whitespace is repaired so the text
//! reads as if the sentences had never been there. Every suite carries one
//! baseline instance per case, the unmodified facts, which perturbed
//! instances are scored against.
//!
//! Lower-court insertion (LCI) swaps every lower-court mention of a case for
//! another court of the same language, one instance per alternative court.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Case, CourtRegistry, Language, RationaleLabel, Segment, SpanLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PerturbError {
    #[error("occluded spans carry different labels")]
    MixedLabels,
    #[error("lower court spans cannot be occluded")]
    LowerCourtOcclusionForbidden,
    #[error("span index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("case {0} has no lower court spans")]
    NoLowerCourts(String),
    #[error("court registry has no entry for language {0}")]
    UnknownLanguage(Language),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Occlusion,
    Lci,
    Baseline,
}

/// An occlusion or insertion variant of a case, or the case's baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbedInstance {
    pub instance_id: String,
    pub case_id: String,
    pub kind: InstanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_k: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_label: Option<RationaleLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded_span_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_court: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_court: Option<String>,
    /// Removed text, for imported instances whose span offsets are unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluded_text: Option<String>,
    pub text: String,
    pub baseline_id: String,
}

impl PerturbedInstance {
    pub fn baseline(case: &Case) -> PerturbedInstance {
        let id = baseline_id(&case.case_id);
        PerturbedInstance {
            instance_id: id.clone(),
            case_id: case.case_id.clone(),
            kind: InstanceKind::Baseline,
            set_k: None,
            perturbed_label: None,
            occluded_span_indices: None,
            inserted_court: None,
            original_court: None,
            occluded_text: None,
            text: case.reconstruct_facts(),
            baseline_id: id,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.kind == InstanceKind::Baseline
    }
}

pub fn baseline_id(case_id: &str) -> String {
    format!("{case_id}/base")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// Largest number of spans removed together.
    pub k_max: usize,
    /// Seeded cap on instances per (case, label, k). `None` enumerates all.
    pub max_per_cell: Option<usize>,
    pub seed: u64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            k_max: 4,
            max_per_cell: None,
            seed: 0,
        }
    }
}

/// Returns the facts with the given spans removed.
///
/// The spans must share a rationale label. Whitespace left on both sides of a
/// removed span is merged into one separator, the most frequent whitespace
/// character of the merged run (a space on ties). Runs that end up at the
/// start or end of the text are dropped.
pub fn apply_occlusion(case: &Case, indices: &[usize]) -> Result<String, PerturbError> {
    let removed: BTreeSet<usize> = indices.iter().copied().collect();
    let mut label = None;
    for &i in &removed {
        let span = case.spans.get(i).ok_or(PerturbError::IndexOutOfRange(i))?;
        if span.label == SpanLabel::LowerCourt {
            return Err(PerturbError::LowerCourtOcclusionForbidden);
        }
        match label {
            None => label = Some(span.label),
            Some(l) if l != span.label => return Err(PerturbError::MixedLabels),
            _ => {}
        }
    }
    if removed.is_empty() {
        return Ok(case.reconstruct_facts());
    }

    let mut out = String::with_capacity(case.facts.len());
    let mut cuts = Vec::new();
    for seg in case.segments() {
        match seg {
            Segment::Gap(g) => out.push_str(g),
            Segment::Span(i, _) if removed.contains(&i) => cuts.push(out.len()),
            Segment::Span(_, s) => out.push_str(&s.text),
        }
    }
    Ok(repair_whitespace(out, &cuts))
}

fn whitespace_run(text: &str, at: usize) -> (usize, usize) {
    let start = text[..at]
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_whitespace())
        .last()
        .map_or(at, |(i, _)| i);
    let end = text[at..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map_or(text.len(), |(i, _)| at + i);
    (start, end)
}

fn dominant_separator(run: &str) -> char {
    let mut counts: Vec<(char, usize)> = Vec::new();
    for c in run.chars() {
        match counts.iter_mut().find(|(k, _)| *k == c) {
            Some((_, n)) => *n += 1,
            None => counts.push((c, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    let tied: Vec<char> = counts
        .iter()
        .filter(|(_, n)| *n == best)
        .map(|(c, _)| *c)
        .collect();
    if tied.contains(&' ') || tied.is_empty() {
        ' '
    } else {
        tied[0]
    }
}

fn repair_whitespace(mut text: String, cuts: &[usize]) -> String {
    let runs: BTreeSet<(usize, usize)> = cuts
        .iter()
        .map(|&c| whitespace_run(&text, c))
        .filter(|(s, e)| s < e)
        .collect();
    // right to left so earlier offsets stay valid
    for &(start, end) in runs.iter().rev() {
        let run = &text[start..end];
        let replacement = if start == 0 || end == text.len() {
            String::new()
        } else {
            dominant_separator(run).to_string()
        };
        text.replace_range(start..end, &replacement);
    }
    text
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn cell_seed(seed: u64, case_id: &str, k: usize, label: RationaleLabel) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(case_id.as_bytes());
    h.update((k as u64).to_le_bytes());
    h.update(label.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Baseline plus every same-label combination of `1..=k_max` spans, ordered by
/// `k`, then label (opposes, neutral, supports), then lexicographically by
/// span index.
pub fn generate_occlusion_suite(case: &Case, config: &OcclusionConfig) -> Vec<PerturbedInstance> {
    let baseline = PerturbedInstance::baseline(case);
    let base_id = baseline.instance_id.clone();
    let mut out = vec![baseline];
    for k in 1..=config.k_max {
        for label in RationaleLabel::ALL {
            let pool = case.span_indices(label.span_label());
            if pool.len() < k {
                continue;
            }
            let mut combos: Vec<Vec<usize>> = pool.into_iter().combinations(k).collect();
            if let Some(cap) = config.max_per_cell {
                if combos.len() > cap {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(cell_seed(config.seed, &case.case_id, k, label));
                    let mut keep = sample(&mut rng, combos.len(), cap).into_vec();
                    keep.sort_unstable();
                    combos = keep
                        .into_iter()
                        .map(|i| std::mem::take(&mut combos[i]))
                        .collect();
                }
            }
            for combo in combos {
                let text = apply_occlusion(case, &combo)
                    .expect("combinations are drawn from one non-court label");
                out.push(PerturbedInstance {
                    instance_id: format!(
                        "{}/occ/k{}/{}/{}",
                        case.case_id,
                        k,
                        label,
                        combo.iter().join("-")
                    ),
                    case_id: case.case_id.clone(),
                    kind: InstanceKind::Occlusion,
                    set_k: Some(k as u8),
                    perturbed_label: Some(label),
                    occluded_span_indices: Some(combo),
                    inserted_court: None,
                    original_court: None,
                    occluded_text: None,
                    text,
                    baseline_id: base_id.clone(),
                });
            }
        }
    }
    out
}

/// Runs [`generate_occlusion_suite`] over a corpus, in parallel, keeping
/// corpus order.
pub fn generate_occlusion_corpus(
    cases: &[Case],
    config: &OcclusionConfig,
) -> Vec<PerturbedInstance> {
    cases
        .par_iter()
        .map(|c| generate_occlusion_suite(c, config))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Baseline plus one instance per registry court of the case's language that
/// the case does not already mention. Every lower-court span is replaced by
/// the same court.
pub fn generate_lci_suite(
    case: &Case,
    registry: &CourtRegistry,
) -> Result<Vec<PerturbedInstance>, PerturbError> {
    let originals = case.lower_courts();
    let original = originals
        .first()
        .cloned()
        .ok_or_else(|| PerturbError::NoLowerCourts(case.case_id.clone()))?;
    let courts = registry
        .courts_for(case.language)
        .ok_or(PerturbError::UnknownLanguage(case.language))?;

    let mut baseline = PerturbedInstance::baseline(case);
    baseline.original_court = Some(original.clone());
    let base_id = baseline.instance_id.clone();
    let segments = case.segments();
    let mut out = vec![baseline];
    for (idx, court) in courts.iter().enumerate() {
        if originals.contains(court) {
            continue;
        }
        let mut text = String::with_capacity(case.facts.len());
        for seg in &segments {
            match seg {
                Segment::Gap(g) => text.push_str(g),
                Segment::Span(_, s) if s.label == SpanLabel::LowerCourt => text.push_str(court),
                Segment::Span(_, s) => text.push_str(&s.text),
            }
        }
        out.push(PerturbedInstance {
            instance_id: format!("{}/lci/{:02}", case.case_id, idx),
            case_id: case.case_id.clone(),
            kind: InstanceKind::Lci,
            set_k: None,
            perturbed_label: None,
            occluded_span_indices: None,
            inserted_court: Some(court.clone()),
            original_court: Some(original.clone()),
            occluded_text: None,
            text,
            baseline_id: base_id.clone(),
        });
    }
    Ok(out)
}

/// LCI suites for every case that mentions a lower court. Returns the
/// instances and the ids of skipped cases.
pub fn generate_lci_corpus(
    cases: &[Case],
    registry: &CourtRegistry,
) -> Result<(Vec<PerturbedInstance>, Vec<String>), PerturbError> {
    let results: Vec<_> = cases
        .par_iter()
        .map(|c| match generate_lci_suite(c, registry) {
            Err(PerturbError::NoLowerCourts(id)) => Ok(Err(id)),
            other => other.map(Ok),
        })
        .collect::<Result<_, _>>()?;
    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(v) => instances.extend(v),
            Err(id) => skipped.push(id),
        }
    }
    Ok((instances, skipped))
}

pub fn write_instances<W: Write>(mut w: W, instances: &[PerturbedInstance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_instances<R: BufRead>(reader: R) -> Result<Vec<PerturbedInstance>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Judgment, Language};

    /// Facts made of `parts` joined by single spaces; every part is a span.
    fn case_of(parts: &[(&str, SpanLabel)]) -> Case {
        let mut facts = String::new();
        let mut spans = Vec::new();
        for (i, (t, l)) in parts.iter().enumerate() {
            if i > 0 {
                facts.push(' ');
            }
            let start = facts.chars().count();
            facts.push_str(t);
            spans.push((start, start + t.chars().count(), *l));
        }
        Case::new(
            "t",
            Language::De,
            2020,
            "civil law",
            Judgment::Approval,
            facts,
            spans,
        )
        .unwrap()
    }

    /// Independent oracle: delete char ranges, then squeeze the whitespace
    /// touching each deletion point and strip it at the text edges.
    fn occlusion_oracle(facts: &str, ranges: &[(usize, usize)]) -> String {
        let mut chars: Vec<char> = facts.chars().collect();
        let mut points = Vec::new();
        let mut sorted = ranges.to_vec();
        sorted.sort();
        for &(s, e) in sorted.iter().rev() {
            chars.drain(s..e);
            for p in points.iter_mut() {
                *p -= e - s;
            }
            points.push(s);
        }
        let mut runs = Vec::new();
        for &p in &points {
            let mut a = p;
            while a > 0 && chars[a - 1].is_whitespace() {
                a -= 1;
            }
            let mut b = p;
            while b < chars.len() && chars[b].is_whitespace() {
                b += 1;
            }
            if a < b {
                runs.push((a, b));
            }
        }
        runs.sort();
        runs.dedup();
        for &(a, b) in runs.iter().rev() {
            let run: Vec<char> = chars[a..b].to_vec();
            let edge = a == 0 || b == chars.len();
            chars.drain(a..b);
            if edge {
                continue;
            }
            let spaces = run.iter().filter(|c| **c == ' ').count();
            let mut best = (' ', spaces);
            for c in &run {
                let n = run.iter().filter(|x| *x == c).count();
                if n > best.1 {
                    best = (*c, n);
                }
            }
            chars.insert(a, best.0);
        }
        chars.into_iter().collect()
    }

    #[test]
    fn empty_occlusion_is_identity() {
        let c = case_of(&[("A.", SpanLabel::Supports), ("B.", SpanLabel::Neutral)]);
        assert_eq!(apply_occlusion(&c, &[]).unwrap(), c.facts);
    }

    #[test]
    fn middle_span_leaves_single_space() {
        let c = case_of(&[
            ("A.", SpanLabel::Neutral),
            ("B.", SpanLabel::Supports),
            ("C.", SpanLabel::Neutral),
        ]);
        let got = apply_occlusion(&c, &[1]).unwrap();
        assert_eq!(got, "A. C.");
        assert_eq!(got, occlusion_oracle(&c.facts, &[(3, 5)]));
    }

    #[test]
    fn edges_and_adjacent_spans() {
        let c = case_of(&[
            ("A.", SpanLabel::Neutral),
            ("B.", SpanLabel::Neutral),
            ("C.", SpanLabel::Supports),
            ("D.", SpanLabel::Neutral),
        ]);
        assert_eq!(apply_occlusion(&c, &[0]).unwrap(), "B. C. D.");
        assert_eq!(apply_occlusion(&c, &[3]).unwrap(), "A. B. C.");
        assert_eq!(apply_occlusion(&c, &[0, 1]).unwrap(), "C. D.");
        assert_eq!(apply_occlusion(&c, &[0, 1, 3]).unwrap(), "C.");
        assert_eq!(apply_occlusion(&c, &[1, 3]).unwrap(), "A. C.");
    }

    #[test]
    fn keeps_newline_separators() {
        let facts = "Erstens.\nZweitens.\nDrittens.";
        let c = Case::new(
            "n",
            Language::De,
            2020,
            "x",
            Judgment::Approval,
            facts,
            [
                (0, 8, SpanLabel::Neutral),
                (9, 18, SpanLabel::Neutral),
                (19, 28, SpanLabel::Neutral),
            ],
        )
        .unwrap();
        assert_eq!(apply_occlusion(&c, &[1]).unwrap(), "Erstens.\nDrittens.");
    }

    #[test]
    fn label_errors() {
        let c = case_of(&[
            ("A.", SpanLabel::Supports),
            ("Obergericht", SpanLabel::LowerCourt),
            ("C.", SpanLabel::Opposes),
        ]);
        assert_eq!(apply_occlusion(&c, &[0, 2]), Err(PerturbError::MixedLabels));
        assert_eq!(
            apply_occlusion(&c, &[1]),
            Err(PerturbError::LowerCourtOcclusionForbidden)
        );
        assert_eq!(
            apply_occlusion(&c, &[7]),
            Err(PerturbError::IndexOutOfRange(7))
        );
    }

    #[test]
    fn occluding_every_span_of_a_label_removes_its_tokens() {
        let c = case_of(&[
            ("alpha eins.", SpanLabel::Supports),
            ("beta zwei.", SpanLabel::Supports),
            ("gamma drei.", SpanLabel::Supports),
        ]);
        let all = c.span_indices(SpanLabel::Supports);
        let text = apply_occlusion(&c, &all).unwrap();
        for span in &c.spans {
            for tok in span.text.split_whitespace() {
                assert!(!text.contains(tok));
            }
        }
        assert_eq!(text, "");
    }

    #[test]
    fn suite_counts_follow_binomials() {
        let mut parts = Vec::new();
        for _ in 0..5 {
            parts.push(("s.", SpanLabel::Supports));
        }
        let c = case_of(&parts);
        let suite = generate_occlusion_suite(&c, &OcclusionConfig::default());
        let k2 = suite.iter().filter(|i| i.set_k == Some(2)).count();
        assert_eq!(k2, 10);
        assert!(suite
            .iter()
            .all(|i| i.perturbed_label != Some(RationaleLabel::Opposes)));
        assert_eq!(suite.iter().filter(|i| i.is_baseline()).count(), 1);
    }

    #[test]
    fn mixed_case_totals_by_enumeration() {
        let mut parts = Vec::new();
        for (n, l) in [
            (3, SpanLabel::Supports),
            (2, SpanLabel::Opposes),
            (4, SpanLabel::Neutral),
        ] {
            for _ in 0..n {
                parts.push(("x.", l));
            }
        }
        let c = case_of(&parts);
        // brute force: every subset of span indices of size 1..=4 with one label
        let n = c.spans.len();
        let mut expected = 0;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if idx.len() <= 4 && idx.iter().map(|&i| c.spans[i].label).all_equal() {
                expected += 1;
            }
        }
        assert_eq!(expected, 25);
        let suite = generate_occlusion_suite(&c, &OcclusionConfig::default());
        assert_eq!(suite.len() - 1, expected);
    }

    #[test]
    fn combination_order_is_lexicographic() {
        let c = case_of(&[
            ("a.", SpanLabel::Neutral),
            ("b.", SpanLabel::Neutral),
            ("c.", SpanLabel::Neutral),
        ]);
        let ids: Vec<_> = generate_occlusion_suite(&c, &OcclusionConfig::default())
            .into_iter()
            .filter(|i| i.set_k == Some(2))
            .map(|i| i.occluded_span_indices.unwrap())
            .collect();
        assert_eq!(ids, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn capped_cells_are_seeded_subsets() {
        let parts = vec![("n.", SpanLabel::Neutral); 8];
        let c = case_of(&parts);
        let cfg = OcclusionConfig {
            k_max: 4,
            max_per_cell: Some(5),
            seed: 7,
        };
        let a = generate_occlusion_suite(&c, &cfg);
        let b = generate_occlusion_suite(&c, &cfg);
        assert_eq!(a, b);
        for k in 1..=4u8 {
            let cell: Vec<_> = a.iter().filter(|i| i.set_k == Some(k)).collect();
            assert_eq!(cell.len(), 5);
            let idx: Vec<_> = cell
                .iter()
                .map(|i| i.occluded_span_indices.clone().unwrap())
                .collect();
            let mut sorted = idx.clone();
            sorted.sort();
            assert_eq!(idx, sorted);
        }
        let other = generate_occlusion_suite(&c, &OcclusionConfig { seed: 8, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(0, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(60, 4), 487_635);
    }

    fn court_case(id: &str, court: &str, mentions: usize) -> Case {
        let mut parts: Vec<(&str, SpanLabel)> = vec![("Es geht um Geld.", SpanLabel::Neutral)];
        for _ in 0..mentions {
            parts.push((court, SpanLabel::LowerCourt));
            parts.push(("entschied.", SpanLabel::Supports));
        }
        let mut c = case_of(&parts);
        c.case_id = id.to_string();
        c
    }

    fn registry(names: &[&str]) -> CourtRegistry {
        let mut r = CourtRegistry::default();
        r.courts
            .insert(Language::De, names.iter().map(|s| s.to_string()).collect());
        r
    }

    #[test]
    fn lci_replaces_every_mention() {
        let c = court_case("c", "Obergericht Bern", 2);
        let reg = registry(&[
            "Bezirksgericht Zürich",
            "Obergericht Bern",
            "Kantonsgericht",
        ]);
        let suite = generate_lci_suite(&c, &reg).unwrap();
        assert_eq!(suite.len(), 3);
        assert!(suite[0].is_baseline());
        assert_eq!(suite[0].text, c.facts);
        for inst in &suite[1..] {
            let court = inst.inserted_court.as_deref().unwrap();
            assert_ne!(court, "Obergericht Bern");
            assert_eq!(inst.text.matches(court).count(), 2);
            assert!(!inst.text.contains("Obergericht Bern"));
            // character diff: rebuild by hand from the segments
            let mut expected = String::new();
            for seg in c.segments() {
                match seg {
                    Segment::Gap(g) => expected.push_str(g),
                    Segment::Span(_, s) if s.label == SpanLabel::LowerCourt => {
                        expected.push_str(court)
                    }
                    Segment::Span(_, s) => expected.push_str(&s.text),
                }
            }
            assert_eq!(inst.text, expected);
            assert_eq!(inst.baseline_id, suite[0].instance_id);
        }
    }

    #[test]
    fn lci_registry_of_thirteen() {
        let names: Vec<String> = (0..13).map(|i| format!("Gericht {i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let c = court_case("c", "Gericht 04", 1);
        let suite = generate_lci_suite(&c, &registry(&refs)).unwrap();
        assert_eq!(
            suite.iter().filter(|i| i.kind == InstanceKind::Lci).count(),
            12
        );
        assert_eq!(suite.iter().filter(|i| i.is_baseline()).count(), 1);

        let only = generate_lci_suite(&c, &registry(&["Gericht 04"])).unwrap();
        assert_eq!(only.len(), 1);
    }

    #[test]
    fn lci_errors() {
        let c = case_of(&[("A.", SpanLabel::Supports)]);
        assert_eq!(
            generate_lci_suite(&c, &registry(&["X"])),
            Err(PerturbError::NoLowerCourts("t".into()))
        );
        let mut fr = court_case("c", "X", 1);
        fr.language = Language::Fr;
        assert_eq!(
            generate_lci_suite(&fr, &registry(&["X"])),
            Err(PerturbError::UnknownLanguage(Language::Fr))
        );
        let (inst, skipped) =
            generate_lci_corpus(&[c, court_case("d", "X", 1)], &registry(&["X", "Y"])).unwrap();
        assert_eq!(skipped, vec!["t".to_string()]);
        assert_eq!(inst.len(), 2);
    }

    #[test]
    fn instances_round_trip_through_jsonl() {
        let c = court_case("c", "X", 1);
        let mut all = generate_occlusion_suite(&c, &OcclusionConfig::default());
        all.extend(generate_lci_suite(&c, &registry(&["X", "Y"])).unwrap());
        let mut buf = Vec::new();
        write_instances(&mut buf, &all).unwrap();
        assert_eq!(read_instances(buf.as_slice()).unwrap(), all);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = Case> {
            let word = prop::sample::select(vec![
                "Die",
                "Klägerin",
                "rügt.",
                "décision",
                "è",
                "Über",
                "x",
            ]);
            let span = (prop::collection::vec(word, 1..4), 0..3usize);
            let sep = prop::sample::select(vec![" ", " ", "\n", " \n"]);
            prop::collection::vec((span, sep), 1..9).prop_map(|parts| {
                let mut facts = String::new();
                let mut spans = Vec::new();
                for (i, ((words, label), sep)) in parts.into_iter().enumerate() {
                    if i > 0 {
                        facts.push_str(sep);
                    }
                    let start = facts.chars().count();
                    facts.push_str(&words.join(" "));
                    let label =
                        [SpanLabel::Supports, SpanLabel::Opposes, SpanLabel::Neutral][label];
                    spans.push((start, facts.chars().count(), label));
                }
                Case::new(
                    "p",
                    Language::It,
                    2021,
                    "x",
                    Judgment::Dismissal,
                    facts,
                    spans,
                )
                .unwrap()
            })
        }

        proptest! {
            #[test]
            fn occlusion_matches_oracle_and_is_clean(case in arb_case(), pick in any::<u64>()) {
                let label = case.spans[(pick as usize) % case.spans.len()].label;
                let pool = case.span_indices(label);
                let chosen: Vec<usize> = pool.iter().copied().filter(|i| (pick >> (i % 60)) & 1 == 1 || *i == pool[0]).collect();
                let got = apply_occlusion(&case, &chosen).unwrap();
                let ranges: Vec<_> = chosen.iter().map(|&i| (case.spans[i].start, case.spans[i].end)).collect();
                prop_assert_eq!(&got, &occlusion_oracle(&case.facts, &ranges));
                prop_assert!(!got.contains("  "));
                prop_assert!(!got.starts_with(char::is_whitespace));
                prop_assert!(!got.ends_with(char::is_whitespace));
            }

            #[test]
            fn suite_counts_are_binomial(case in arb_case(), k_max in 1usize..=5) {
                let suite = generate_occlusion_suite(&case, &OcclusionConfig { k_max, ..Default::default() });
                for label in RationaleLabel::ALL {
                    let n = case.span_indices(label.span_label()).len();
                    for k in 1..=k_max {
                        let got = suite.iter().filter(|i| i.perturbed_label == Some(label) && i.set_k == Some(k as u8)).count();
                        prop_assert_eq!(got as u128, binomial(n, k));
                    }
                }
                let base = &suite[0];
                prop_assert_eq!(&base.text, &case.reconstruct_facts());
                prop_assert!(suite.iter().all(|i| i.baseline_id == base.instance_id));
            }
        }
    }
}
