//! Explainability and bias metrics over scored perturbations.
//!
//! The explainability score of a perturbed instance is the calibrated
//! confidence of the baseline minus that of the perturbed text, both taken
//! for the same target class. Positive scores mean the removed (or replaced)
//! text was pushing the model toward the target class.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Case, Judgment, Language, RationaleLabel};
use crate::gateway::Prediction;
use crate::perturb::{InstanceKind, PerturbedInstance};

/// Half-width of the band around zero that maps to `Neutral`.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("baseline calibrated at T={baseline}, perturbed instance at T={perturbed}")]
    CalibrationMismatch { baseline: f64, perturbed: f64 },
    #[error("no prediction for instance {0}")]
    MissingPrediction(String),
    #[error("instance {0} references an unknown case")]
    MissingCase(String),
    #[error("instance {0} has no perturbed label")]
    MissingGold(String),
}

/// Which class's probability the score is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceTarget {
    /// The class the baseline predicts.
    #[default]
    Predicted,
    /// The case's gold judgment.
    Gold,
}

/// How annotated labels relate to the model's view of the case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldAlignment {
    /// Swap supports and opposes when the baseline prediction disagrees with
    /// the actual judgment.
    #[default]
    #[serde(rename = "prediction")]
    PredictionRelative,
    /// Use the annotation as is.
    #[serde(rename = "outcome")]
    OutcomeRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub epsilon: f64,
    pub target: ConfidenceTarget,
    pub alignment: GoldAlignment,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            epsilon: DEFAULT_EPSILON,
            target: ConfidenceTarget::Predicted,
            alignment: GoldAlignment::PredictionRelative,
        }
    }
}

pub fn explainability_score(
    baseline: &Prediction,
    perturbed: &Prediction,
    target: ConfidenceTarget,
    judgment: Judgment,
) -> Result<f64, MetricsError> {
    if baseline.temperature != perturbed.temperature {
        return Err(MetricsError::CalibrationMismatch {
            baseline: baseline.temperature,
            perturbed: perturbed.temperature,
        });
    }
    let class = match target {
        ConfidenceTarget::Predicted => baseline.predicted_label,
        ConfidenceTarget::Gold => judgment,
    };
    Ok(baseline.prob(class) - perturbed.prob(class))
}

pub fn assign_label(s_exp: f64, epsilon: f64) -> RationaleLabel {
    if s_exp > epsilon {
        RationaleLabel::Supports
    } else if s_exp < -epsilon {
        RationaleLabel::Opposes
    } else {
        RationaleLabel::Neutral
    }
}

pub fn align_gold(
    gold: RationaleLabel,
    baseline_pred: Judgment,
    judgment: Judgment,
    mode: GoldAlignment,
) -> RationaleLabel {
    match (mode, gold) {
        (GoldAlignment::PredictionRelative, RationaleLabel::Supports)
            if baseline_pred != judgment =>
        {
            RationaleLabel::Opposes
        }
        (GoldAlignment::PredictionRelative, RationaleLabel::Opposes)
            if baseline_pred != judgment =>
        {
            RationaleLabel::Supports
        }
        _ => gold,
    }
}

/// Score and labels of one perturbed instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainabilityRecord {
    pub instance_id: String,
    pub case_id: String,
    pub language: Language,
    pub kind: InstanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_k: Option<u8>,
    pub s_exp: f64,
    pub assigned_label: RationaleLabel,
    /// Annotated label of the occluded spans, relative to the actual outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<RationaleLabel>,
    /// `gold_label` after [`align_gold`] with the configured mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned_gold: Option<RationaleLabel>,
    pub judgment: Judgment,
    pub baseline_pred: Judgment,
    pub perturbed_pred: Judgment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_court: Option<String>,
}

/// Turns predictions for perturbed instances and their baselines into
/// records. Baseline instances themselves produce no record.
pub fn score_instances(
    cases: &[Case],
    instances: &[PerturbedInstance],
    predictions: &HashMap<String, Prediction>,
    config: &ScoringConfig,
) -> Result<Vec<ExplainabilityRecord>, MetricsError> {
    let by_id: HashMap<&str, &Case> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let pred = |id: &str| {
        predictions
            .get(id)
            .ok_or_else(|| MetricsError::MissingPrediction(id.to_string()))
    };
    let mut out = Vec::new();
    for inst in instances.iter().filter(|i| !i.is_baseline()) {
        let case = by_id
            .get(inst.case_id.as_str())
            .ok_or_else(|| MetricsError::MissingCase(inst.instance_id.clone()))?;
        let base = pred(&inst.baseline_id)?;
        let pert = pred(&inst.instance_id)?;
        let s_exp = explainability_score(base, pert, config.target, case.judgment)?;
        let gold_label = match inst.kind {
            InstanceKind::Occlusion => Some(
                inst.perturbed_label
                    .ok_or_else(|| MetricsError::MissingGold(inst.instance_id.clone()))?,
            ),
            _ => None,
        };
        out.push(ExplainabilityRecord {
            instance_id: inst.instance_id.clone(),
            case_id: inst.case_id.clone(),
            language: case.language,
            kind: inst.kind,
            set_k: inst.set_k,
            s_exp,
            assigned_label: assign_label(s_exp, config.epsilon),
            gold_label,
            aligned_gold: gold_label
                .map(|g| align_gold(g, base.predicted_label, case.judgment, config.alignment)),
            judgment: case.judgment,
            baseline_pred: base.predicted_label,
            perturbed_pred: pert.predicted_label,
            inserted_court: inst.inserted_court.clone(),
        });
    }
    Ok(out)
}

/// One-vs-rest confusion counts for a label. Merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Instances whose gold label is this label.
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub confusion: Confusion,
    /// `None` when no record in the group has this gold label.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub language: Language,
    /// `None` pools all sets.
    pub set_k: Option<u8>,
    pub records: usize,
    pub labels: BTreeMap<RationaleLabel, LabelScore>,
    pub macro_f1: Option<f64>,
}

impl GroupScores {
    pub fn f1(&self, label: RationaleLabel) -> Option<f64> {
        self.labels.get(&label).and_then(|s| s.f1)
    }
}

/// Per-label F1 by language and occlusion set, plus an all-sets view per
/// language.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub groups: Vec<GroupScores>,
}

impl OcclusionReport {
    pub fn group(&self, language: Language, set_k: Option<u8>) -> Option<&GroupScores> {
        self.groups
            .iter()
            .find(|g| g.language == language && g.set_k == set_k)
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut v: Vec<Language> = self.groups.iter().map(|g| g.language).collect();
        v.dedup();
        v
    }

    pub fn sets(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.groups.iter().filter_map(|g| g.set_k).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

type ConfusionTable = BTreeMap<RationaleLabel, Confusion>;

fn finish_group(
    language: Language,
    set_k: Option<u8>,
    records: usize,
    table: &ConfusionTable,
) -> GroupScores {
    let labels: BTreeMap<RationaleLabel, LabelScore> = RationaleLabel::ALL
        .iter()
        .map(|&l| {
            let confusion = table.get(&l).copied().unwrap_or_default();
            let f1 = (confusion.support() > 0).then(|| confusion.f1());
            (l, LabelScore { confusion, f1 })
        })
        .collect();
    let present: Vec<f64> = labels.values().filter_map(|s| s.f1).collect();
    let macro_f1 =
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    GroupScores {
        language,
        set_k,
        records,
        labels,
        macro_f1,
    }
}

/// One-vs-rest F1 of assigned against aligned gold labels. Records without a
/// gold label (LCI) are ignored.
pub fn per_label_f1(records: &[ExplainabilityRecord]) -> OcclusionReport {
    let mut cells: BTreeMap<(Language, u8), (usize, ConfusionTable)> = BTreeMap::new();
    for r in records {
        let (Some(gold), Some(k)) = (r.aligned_gold, r.set_k) else {
            continue;
        };
        let (n, table) = cells.entry((r.language, k)).or_default();
        *n += 1;
        if gold == r.assigned_label {
            table.entry(gold).or_default().tp += 1;
        } else {
            table.entry(gold).or_default().fn_ += 1;
            table.entry(r.assigned_label).or_default().fp += 1;
        }
    }
    let mut groups = Vec::new();
    let mut pooled: BTreeMap<Language, (usize, ConfusionTable)> = BTreeMap::new();
    for ((lang, k), (n, table)) in &cells {
        let (pn, pt) = pooled.entry(*lang).or_default();
        *pn += n;
        for (l, c) in table {
            pt.entry(*l).or_default().merge(c);
        }
        groups.push(finish_group(*lang, Some(*k), *n, table));
    }
    for (lang, (n, table)) in &pooled {
        groups.push(finish_group(*lang, None, *n, table));
    }
    groups.sort_by_key(|g| (g.language, g.set_k.map_or(0, |k| k)));
    OcclusionReport { groups }
}

/// Running count, mean and sum of squared deviations (Welford); mergeable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean explainability scores, in percent, of the positive and negative
/// scores separately. Zero scores fall in neither partition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MesSummary {
    pub plus: Option<MeanStd>,
    pub minus: Option<MeanStd>,
}

fn summarize(m: &Moments) -> Option<MeanStd> {
    (m.count > 0).then(|| MeanStd {
        mean: m.mean,
        std: m.std(),
        count: m.count,
    })
}

pub fn mes_of_scores(scores: impl IntoIterator<Item = f64>) -> MesSummary {
    let (mut plus, mut minus) = (Moments::default(), Moments::default());
    for s in scores {
        if s > 0.0 {
            plus.push(100.0 * s);
        } else if s < 0.0 {
            minus.push(100.0 * s);
        }
    }
    MesSummary {
        plus: summarize(&plus),
        minus: summarize(&minus),
    }
}

pub fn mes(records: &[ExplainabilityRecord]) -> MesSummary {
    mes_of_scores(records.iter().map(|r| r.s_exp))
}

/// Percentages of records whose predicted label flips between baseline and
/// perturbed text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRates {
    pub one_to_zero: f64,
    pub zero_to_one: f64,
    pub flips_one_to_zero: usize,
    pub flips_zero_to_one: usize,
    pub total: usize,
}

/// `None` for an empty record set.
pub fn flip_rates(records: &[ExplainabilityRecord]) -> Option<FlipRates> {
    if records.is_empty() {
        return None;
    }
    let count = |from: Judgment, to: Judgment| {
        records
            .iter()
            .filter(|r| r.baseline_pred == from && r.perturbed_pred == to)
            .count()
    };
    let down = count(Judgment::Approval, Judgment::Dismissal);
    let up = count(Judgment::Dismissal, Judgment::Approval);
    let n = records.len() as f64;
    Some(FlipRates {
        one_to_zero: 100.0 * down as f64 / n,
        zero_to_one: 100.0 * up as f64 / n,
        flips_one_to_zero: down,
        flips_zero_to_one: up,
        total: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageBias {
    pub language: Language,
    pub mes: MesSummary,
    pub flips: Option<FlipRates>,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub languages: Vec<LanguageBias>,
}

impl BiasReport {
    pub fn language(&self, language: Language) -> Option<&LanguageBias> {
        self.languages.iter().find(|l| l.language == language)
    }
}

/// MES and flip rates per language over LCI records.
pub fn bias_report(records: &[ExplainabilityRecord]) -> BiasReport {
    let mut by_lang: BTreeMap<Language, Vec<ExplainabilityRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == InstanceKind::Lci) {
        by_lang.entry(r.language).or_default().push(r.clone());
    }
    BiasReport {
        languages: by_lang
            .into_iter()
            .map(|(language, rs)| LanguageBias {
                language,
                mes: mes(&rs),
                flips: flip_rates(&rs),
                records: rs.len(),
            })
            .collect(),
    }
}

impl fmt::Display for ConfidenceTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceTarget::Predicted => "predicted",
            ConfidenceTarget::Gold => "gold",
        })
    }
}

impl fmt::Display for GoldAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoldAlignment::PredictionRelative => "prediction",
            GoldAlignment::OutcomeRelative => "outcome",
        })
    }
}
