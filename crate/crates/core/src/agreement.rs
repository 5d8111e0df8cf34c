//! Inter-annotator agreement over span annotations.
//!
//! Each annotator's spans of one label in one case are concatenated and
//! compared with the other annotator's using overlap and translation
//! metrics. Scores are macro-averaged over (case, label) cells, covering the
//! supports, opposes and lower-court labels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{Case, SpanLabel};

/// Labels whose spans are compared. Neutral spans only partition the text
/// and are left out.
pub const AGREEMENT_LABELS: [SpanLabel; 3] = [
    SpanLabel::Supports,
    SpanLabel::Opposes,
    SpanLabel::LowerCourt,
];

/// Lowercased words, split on Unicode word boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn from_text(text: &str) -> TokenSeq {
        TokenSeq(text.unicode_words().map(|w| w.to_lowercase()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn ngrams(&self, n: usize) -> HashMap<&[String], usize> {
        let mut m = HashMap::new();
        if n > 0 && self.0.len() >= n {
            for w in self.0.windows(n) {
                *m.entry(w).or_insert(0) += 1;
            }
        }
        m
    }

    fn set(&self) -> BTreeSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(v: Vec<String>) -> Self {
        TokenSeq(v)
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Clipped overlap and total count of n-grams in `a` and `b`.
fn ngram_overlap(a: &TokenSeq, b: &TokenSeq, n: usize) -> (usize, usize, usize) {
    let ga = a.ngrams(n);
    let gb = b.ngrams(n);
    let overlap = ga
        .iter()
        .map(|(g, c)| (*c).min(gb.get(g).copied().unwrap_or(0)))
        .sum();
    (overlap, ga.values().sum(), gb.values().sum())
}

/// ROUGE-N F1. Precision is measured against `b`, recall against `a`.
pub fn rouge_n(a: &TokenSeq, b: &TokenSeq, n: usize) -> f64 {
    let (overlap, na, nb) = ngram_overlap(a, b, n);
    if na == 0 || nb == 0 {
        return 0.0;
    }
    f1(overlap as f64 / nb as f64, overlap as f64 / na as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 with `P = LCS/|b|`, `R = LCS/|a|`.
pub fn rouge_l(a: &TokenSeq, b: &TokenSeq) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&a.0, &b.0) as f64;
    f1(l / b.len() as f64, l / a.len() as f64)
}

const BLEU_SMOOTHING: f64 = 1e-9;

/// BLEU over unigrams and bigrams: brevity penalty times the geometric mean
/// of clipped precisions. Zero match counts are replaced by 1e-9; an order
/// the candidate is too short to contain is left out of the mean.
pub fn bleu_12(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=2 {
        let (matched, total, _) = ngram_overlap(candidate, reference, n);
        if total == 0 {
            continue;
        }
        let m = if matched == 0 {
            BLEU_SMOOTHING
        } else {
            matched as f64
        };
        log_sum += (m / total as f64).ln();
        orders += 1;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Exact-match unigram alignment: the k-th occurrence of a word in the
/// candidate pairs with its k-th occurrence in the reference. Returned pairs
/// are sorted by candidate position.
fn meteor_alignment(candidate: &TokenSeq, reference: &TokenSeq) -> Vec<(usize, usize)> {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in reference.0.iter().enumerate() {
        positions.entry(t.as_str()).or_default().push(j);
    }
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (i, t) in candidate.0.iter().enumerate() {
        if let Some(pos) = positions.get(t.as_str()) {
            let k = used.entry(t.as_str()).or_insert(0);
            if *k < pos.len() {
                pairs.push((i, pos[*k]));
                *k += 1;
            }
        }
    }
    pairs
}

/// METEOR with exact matching only:
/// `F_mean = 10PR/(R+9P)`, `penalty = 0.5 (chunks/matches)^3`.
pub fn meteor(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let pairs = meteor_alignment(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

fn set_scores(a: &TokenSeq, b: &TokenSeq) -> Option<(usize, usize, usize, usize)> {
    let (sa, sb) = (a.set(), b.set());
    if sa.is_empty() && sb.is_empty() {
        return None;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    Some((inter, union, sa.len(), sb.len()))
}

/// `|A∩B| / |A∪B|` over unique tokens; 1 when both are empty.
pub fn jaccard(a: &TokenSeq, b: &TokenSeq) -> f64 {
    match set_scores(a, b) {
        None => 1.0,
        Some((i, u, _, _)) => i as f64 / u as f64,
    }
}

/// `|A∩B| / max(|A|, |B|)`; 1 when both are empty.
pub fn overlap_max(a: &TokenSeq, b: &TokenSeq) -> f64 {
    match set_scores(a, b) {
        None => 1.0,
        Some((i, _, la, lb)) => i as f64 / la.max(lb) as f64,
    }
}

/// `|A∩B| / min(|A|, |B|)`; 1 when both are empty, 0 when one is.
pub fn overlap_min(a: &TokenSeq, b: &TokenSeq) -> f64 {
    match set_scores(a, b) {
        None => 1.0,
        Some((_, _, la, lb)) if la.min(lb) == 0 => 0.0,
        Some((i, _, la, lb)) => i as f64 / la.min(lb) as f64,
    }
}

/// Per-token vectors of one text.
pub type TokenVectors = Vec<Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Source of contextual token embeddings.
pub trait TokenEmbedder: Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<TokenVectors>, EmbedError>;
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// Greedy max-cosine matching F1 between two sets of token vectors, clamped
/// to `[0, 1]`.
pub fn greedy_match_f1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let sims: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| cosine(x, y)).collect())
        .collect();
    let recall = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / a.len() as f64;
    let precision = (0..b.len())
        .map(|j| {
            sims.iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / b.len() as f64;
    f1(precision.max(0.0), recall.max(0.0)).clamp(0.0, 1.0)
}

pub fn embed_score(a: &str, b: &str, embedder: &dyn TokenEmbedder) -> Result<f64, EmbedError> {
    let vecs = embedder.embed(&[a, b])?;
    match &vecs[..] {
        [va, vb] => Ok(greedy_match_f1(va, vb)),
        _ => Err(EmbedError::BackendUnavailable(format!(
            "expected 2 embeddings, got {}",
            vecs.len()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rouge1,
    Rouge2,
    RougeL,
    Bleu,
    Meteor,
    Jaccard,
    OverlapMax,
    OverlapMin,
    EmbeddingScore,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Rouge1,
        Metric::Rouge2,
        Metric::RougeL,
        Metric::Bleu,
        Metric::Meteor,
        Metric::Jaccard,
        Metric::OverlapMax,
        Metric::OverlapMin,
        Metric::EmbeddingScore,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Metric::Rouge1 => "Rouge-1",
            Metric::Rouge2 => "Rouge-2",
            Metric::RougeL => "Rouge-L",
            Metric::Bleu => "BLEU",
            Metric::Meteor => "METEOR",
            Metric::Jaccard => "Jaccard Sim.",
            Metric::OverlapMax => "Overlap Max.",
            Metric::OverlapMin => "Overlap Min.",
            Metric::EmbeddingScore => "BERTScore",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Every token-level metric for one pair of texts. BLEU and METEOR are
/// averaged over both directions.
pub fn text_metrics(a: &TokenSeq, b: &TokenSeq) -> BTreeMap<Metric, f64> {
    BTreeMap::from([
        (Metric::Rouge1, rouge_n(a, b, 1)),
        (Metric::Rouge2, rouge_n(a, b, 2)),
        (Metric::RougeL, rouge_l(a, b)),
        (Metric::Bleu, (bleu_12(a, b) + bleu_12(b, a)) / 2.0),
        (Metric::Meteor, (meteor(a, b) + meteor(b, a)) / 2.0),
        (Metric::Jaccard, jaccard(a, b)),
        (Metric::OverlapMax, overlap_max(a, b)),
        (Metric::OverlapMin, overlap_min(a, b)),
    ])
}

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("annotator {0} not found")]
    MissingAnnotator(String),
    #[error("annotators {0} and {1} share no annotated cells")]
    NoCommonCases(String, String),
}

/// annotator -> case id -> that annotator's version of the case
pub type AnnotationSet = BTreeMap<String, BTreeMap<String, Case>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub first: String,
    pub second: String,
    /// (case, label) cells averaged over.
    pub cells: usize,
    /// Missing metrics (embedding backend down) are absent, not zero.
    pub scores: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub aggregation: String,
    pub pairs: Vec<PairAgreement>,
}

pub const AGGREGATION: &str = "unweighted mean over (case, label) cells";

fn label_text(case: Option<&Case>, label: SpanLabel) -> String {
    case.map(|c| {
        c.spans
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    })
    .unwrap_or_default()
}

/// Agreement of two annotators over the cases both annotated. Cells where
/// neither annotator marked any token are skipped.
pub fn pair_agreement(
    set: &AnnotationSet,
    first: &str,
    second: &str,
    embedder: Option<&dyn TokenEmbedder>,
) -> Result<PairAgreement, AgreementError> {
    let get = |name: &str| {
        set.get(name)
            .ok_or_else(|| AgreementError::MissingAnnotator(name.to_string()))
    };
    let (ca, cb) = (get(first)?, get(second)?);
    let mut sums: BTreeMap<Metric, f64> = BTreeMap::new();
    let mut embed_sum = Some(0.0);
    let mut cells = 0usize;
    for (case_id, case_a) in ca {
        let Some(case_b) = cb.get(case_id) else {
            continue;
        };
        for label in AGREEMENT_LABELS {
            let (ta, tb) = (
                label_text(Some(case_a), label),
                label_text(Some(case_b), label),
            );
            let (sa, sb) = (TokenSeq::from_text(&ta), TokenSeq::from_text(&tb));
            if sa.is_empty() && sb.is_empty() {
                continue;
            }
            cells += 1;
            for (m, v) in text_metrics(&sa, &sb) {
                *sums.entry(m).or_insert(0.0) += v;
            }
            if let (Some(e), Some(acc)) = (embedder, embed_sum.as_mut()) {
                match embed_score(&ta, &tb, e) {
                    Ok(v) => *acc += v,
                    Err(err) => {
                        log::warn!("embedding score unavailable for {first}-{second}: {err}");
                        embed_sum = None;
                    }
                }
            }
        }
    }
    if cells == 0 {
        return Err(AgreementError::NoCommonCases(
            first.to_string(),
            second.to_string(),
        ));
    }
    let mut scores: BTreeMap<Metric, f64> = sums
        .into_iter()
        .map(|(m, s)| (m, s / cells as f64))
        .collect();
    if let (Some(_), Some(s)) = (embedder, embed_sum) {
        scores.insert(Metric::EmbeddingScore, s / cells as f64);
    }
    Ok(PairAgreement {
        first: first.to_string(),
        second: second.to_string(),
        cells,
        scores,
    })
}

/// Agreement for every unordered annotator pair, in lexicographic order.
pub fn pairwise_agreement(
    set: &AnnotationSet,
    embedder: Option<&dyn TokenEmbedder>,
) -> Result<AgreementReport, AgreementError> {
    let names: Vec<&String> = set.keys().collect();
    if names.len() < 2 {
        return Err(AgreementError::MissingAnnotator(
            "at least two annotators are required".to_string(),
        ));
    }
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            pairs.push(pair_agreement(set, a, b, embedder)?);
        }
    }
    Ok(AgreementReport {
        aggregation: AGGREGATION.to_string(),
        pairs,
    })
}
