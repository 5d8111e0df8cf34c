//! Adapter for the published occlusion and lower-court-insertion datasets.
//!
//! Rows are flat records (a JSON object per line, or a CSV row with a header).
//! Columns may come in any order and extra columns are ignored, but the
//! required names must match exactly:
//!
//! | column                 | occlusion | LCI | content                                    |
//! |------------------------|-----------|-----|--------------------------------------------|
//! | `id`                   | yes       | yes | case identifier                            |
//! | `year`                 | yes       | yes | decision year                              |
//! | `label`                | yes       | yes | judgment, `0` dismissal / `1` approval     |
//! | `language`             | yes       | yes | `de`, `fr` or `it`                         |
//! | `legal area`           | yes       | yes | legal area string                          |
//! | `explainability_label` | yes       | yes | `Supports judgment`, `Opposes judgment`, `Neutral`, `Baseline`, `Lower court` |
//! | `occluded_text`        | yes       | no  | the removed sentences (empty for baselines) |
//! | `lower_court`          | no        | yes | court name present in `text`               |
//! | `text`                 | yes       | yes | the (perturbed) facts                      |
//!
//! The occlusion set a row belongs to is not a column: the published data
//! ships one split per set, so callers pass rows grouped by set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Case, CorpusError, Judgment, Language, RationaleLabel};
use crate::perturb::{baseline_id, InstanceKind, PerturbedInstance};

/// LCI totals per language from the published statistics table.
pub const PUBLISHED_LCI_TOTALS: [(Language, usize); 3] = [
    (Language::De, 351),
    (Language::Fr, 391),
    (Language::It, 312),
];

/// LCI total stated in the dataset description, which disagrees with the sum
/// of [`PUBLISHED_LCI_TOTALS`] (1054).
pub const STATED_LCI_TOTAL: usize = 1127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublishedLabel {
    Rationale(RationaleLabel),
    Baseline,
    LowerCourt,
}

impl PublishedLabel {
    pub fn parse(raw: &str) -> Result<PublishedLabel, CorpusError> {
        let norm = raw.trim().to_lowercase().replace(['_', '-'], " ");
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        Ok(match norm.as_str() {
            "supports judgment" | "supports judgement" | "supports" => {
                PublishedLabel::Rationale(RationaleLabel::Supports)
            }
            "opposes judgment" | "opposes judgement" | "opposes" => {
                PublishedLabel::Rationale(RationaleLabel::Opposes)
            }
            "neutral" => PublishedLabel::Rationale(RationaleLabel::Neutral),
            "baseline" | "none" => PublishedLabel::Baseline,
            "lower court" => PublishedLabel::LowerCourt,
            _ => return Err(CorpusError::UnknownLabel(raw.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CommonColumns {
    id: String,
    year: i32,
    judgment: Judgment,
    language: Language,
    legal_area: String,
    label: PublishedLabel,
    text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionRow {
    common: CommonColumns,
    pub occluded_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LciRow {
    common: CommonColumns,
    pub lower_court: String,
}

/// Rows of one published occlusion split (set 1 through 4).
#[derive(Debug, Clone)]
pub struct OcclusionSplit {
    pub set_k: u8,
    pub rows: Vec<OcclusionRow>,
}

type Record = BTreeMap<String, Value>;

fn column<'a>(rec: &'a Record, name: &str) -> Result<&'a Value, CorpusError> {
    rec.get(name)
        .ok_or_else(|| CorpusError::SchemaMismatch(name.to_string()))
}

fn string_col(rec: &Record, name: &str) -> Result<String, CorpusError> {
    match column(rec, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Ok(String::new()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CorpusError::SchemaMismatch(name.to_string())),
    }
}

fn int_col(rec: &Record, name: &str) -> Result<i64, CorpusError> {
    let bad = || CorpusError::SchemaMismatch(name.to_string());
    match column(rec, name)? {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .ok_or_else(bad),
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|f| f.fract() == 0.0)
            .map(|f| f as i64)
            .ok_or_else(bad),
        _ => Err(bad()),
    }
}

fn common(rec: &Record) -> Result<CommonColumns, CorpusError> {
    let judgment = Judgment::from_index(int_col(rec, "label")? as usize)
        .ok_or_else(|| CorpusError::SchemaMismatch("label".into()))?;
    let language = Language::from_code(&string_col(rec, "language")?)
        .ok_or_else(|| CorpusError::SchemaMismatch("language".into()))?;
    Ok(CommonColumns {
        id: string_col(rec, "id")?,
        year: int_col(rec, "year")? as i32,
        judgment,
        language,
        legal_area: string_col(rec, "legal area")?,
        label: PublishedLabel::parse(&string_col(rec, "explainability_label")?)?,
        text: string_col(rec, "text")?,
    })
}

impl OcclusionRow {
    pub fn from_json(value: Value) -> Result<OcclusionRow, CorpusError> {
        let rec: Record = serde_json::from_value(value)
            .map_err(|_| CorpusError::SchemaMismatch("<row is not an object>".into()))?;
        Self::from_record(&rec)
    }

    fn from_record(rec: &Record) -> Result<OcclusionRow, CorpusError> {
        let common = common(rec)?;
        if common.label == PublishedLabel::LowerCourt {
            return Err(CorpusError::UnknownLabel(
                "lower court (in occlusion data)".into(),
            ));
        }
        Ok(OcclusionRow {
            occluded_text: string_col(rec, "occluded_text")?,
            common,
        })
    }

    pub fn language(&self) -> Language {
        self.common.language
    }

    pub fn label(&self) -> PublishedLabel {
        self.common.label
    }
}

impl LciRow {
    pub fn from_json(value: Value) -> Result<LciRow, CorpusError> {
        let rec: Record = serde_json::from_value(value)
            .map_err(|_| CorpusError::SchemaMismatch("<row is not an object>".into()))?;
        Self::from_record(&rec)
    }

    fn from_record(rec: &Record) -> Result<LciRow, CorpusError> {
        Ok(LciRow {
            common: common(rec)?,
            lower_court: string_col(rec, "lower_court")?,
        })
    }

    pub fn language(&self) -> Language {
        self.common.language
    }
}

fn records_from_jsonl(data: &str) -> Result<Vec<Value>, CorpusError> {
    // a single JSON array is accepted too
    if data.trim_start().starts_with('[') {
        return serde_json::from_str(data).map_err(|e| CorpusError::MalformedLine {
            line: e.line(),
            detail: e.to_string(),
        });
    }
    data.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::MalformedLine {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn records_from_csv(data: &str) -> Result<Vec<Value>, CorpusError> {
    let mut reader = csv::Reader::from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedLine {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CorpusError::MalformedLine {
            line: i + 2,
            detail: e.to_string(),
        })?;
        let obj: serde_json::Map<String, Value> = headers
            .iter()
            .zip(row.iter())
            .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
            .collect();
        out.push(Value::Object(obj));
    }
    Ok(out)
}

/// Reads rows from a JSONL or CSV export; CSV is assumed when `csv` is true.
pub fn read_published_rows(data: &str, csv: bool) -> Result<Vec<Value>, CorpusError> {
    if csv {
        records_from_csv(data)
    } else {
        records_from_jsonl(data)
    }
}

pub fn parse_occlusion_rows(values: Vec<Value>) -> Result<Vec<OcclusionRow>, CorpusError> {
    values.into_iter().map(OcclusionRow::from_json).collect()
}

pub fn parse_lci_rows(values: Vec<Value>) -> Result<Vec<LciRow>, CorpusError> {
    values.into_iter().map(LciRow::from_json).collect()
}

/// Instance counts per language, set and label, laid out for comparison with
/// the published dataset statistics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCounts {
    /// language -> set -> label -> occluded instances (baselines excluded)
    pub occlusion: BTreeMap<Language, BTreeMap<u8, BTreeMap<RationaleLabel, usize>>>,
    pub occlusion_baselines: BTreeMap<Language, usize>,
    /// All LCI rows, baselines included.
    pub lci: BTreeMap<Language, usize>,
    pub lci_baselines: BTreeMap<Language, usize>,
    /// Distinct case ids in the occlusion data.
    pub documents: BTreeMap<Language, usize>,
}

impl InstanceCounts {
    pub fn cell(&self, language: Language, set_k: u8, label: RationaleLabel) -> usize {
        self.occlusion
            .get(&language)
            .and_then(|s| s.get(&set_k))
            .and_then(|l| l.get(&label))
            .copied()
            .unwrap_or(0)
    }

    pub fn label_total(&self, language: Language, label: RationaleLabel) -> usize {
        (1..=4).map(|k| self.cell(language, k, label)).sum()
    }

    pub fn occlusion_total(&self, language: Language) -> usize {
        RationaleLabel::ALL
            .iter()
            .map(|&l| self.label_total(language, l))
            .sum()
    }

    pub fn lci_total(&self, language: Language) -> usize {
        self.lci.get(&language).copied().unwrap_or(0)
    }

    pub fn document_count(&self, language: Language) -> usize {
        self.documents.get(&language).copied().unwrap_or(0)
    }

    /// Observed LCI total next to both published figures, which disagree
    /// with each other.
    pub fn lci_discrepancy(&self) -> LciDiscrepancy {
        LciDiscrepancy {
            observed: self.lci.values().sum(),
            table_total: PUBLISHED_LCI_TOTALS.iter().map(|(_, n)| n).sum(),
            stated_total: STATED_LCI_TOTAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LciDiscrepancy {
    pub observed: usize,
    pub table_total: usize,
    pub stated_total: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ImportedDataset {
    /// One span-less case per id, with the baseline text as facts.
    pub cases: Vec<Case>,
    pub occlusion: Vec<PerturbedInstance>,
    pub lci: Vec<PerturbedInstance>,
    pub counts: InstanceCounts,
    /// Case ids that never received a baseline row.
    pub missing_baselines: Vec<String>,
}

/// Maps published rows onto cases and perturbed instances and tallies them.
pub fn import_published(
    occlusion: &[OcclusionSplit],
    lci: &[LciRow],
) -> Result<ImportedDataset, CorpusError> {
    let mut counts = InstanceCounts::default();
    let mut cases: BTreeMap<String, Case> = BTreeMap::new();
    let mut has_baseline: BTreeSet<String> = BTreeSet::new();
    let mut docs: BTreeMap<Language, BTreeSet<String>> = BTreeMap::new();
    let mut occ_instances = Vec::new();
    let mut lci_instances = Vec::new();
    let mut serial: BTreeMap<(String, u8, RationaleLabel), usize> = BTreeMap::new();

    let mut note_case = |c: &CommonColumns, baseline: bool| {
        let entry = cases.entry(c.id.clone()).or_insert_with(|| Case {
            case_id: c.id.clone(),
            language: c.language,
            year: c.year,
            legal_area: c.legal_area.clone(),
            judgment: c.judgment,
            facts: String::new(),
            spans: Vec::new(),
            annotator: None,
        });
        if baseline && has_baseline.insert(c.id.clone()) {
            entry.facts = c.text.clone();
        }
    };

    for split in occlusion {
        if !(1..=4).contains(&split.set_k) {
            return Err(CorpusError::SchemaMismatch(format!("set {}", split.set_k)));
        }
        for row in &split.rows {
            let c = &row.common;
            docs.entry(c.language).or_default().insert(c.id.clone());
            match c.label {
                PublishedLabel::Baseline => {
                    note_case(c, true);
                    *counts.occlusion_baselines.entry(c.language).or_default() += 1;
                }
                PublishedLabel::Rationale(label) => {
                    note_case(c, false);
                    *counts
                        .occlusion
                        .entry(c.language)
                        .or_default()
                        .entry(split.set_k)
                        .or_default()
                        .entry(label)
                        .or_default() += 1;
                    let n = serial
                        .entry((c.id.clone(), split.set_k, label))
                        .or_default();
                    occ_instances.push(PerturbedInstance {
                        instance_id: format!("{}/occ/k{}/{}/r{}", c.id, split.set_k, label, n),
                        case_id: c.id.clone(),
                        kind: InstanceKind::Occlusion,
                        set_k: Some(split.set_k),
                        perturbed_label: Some(label),
                        occluded_span_indices: None,
                        inserted_court: None,
                        original_court: None,
                        occluded_text: Some(row.occluded_text.clone()),
                        text: c.text.clone(),
                        baseline_id: baseline_id(&c.id),
                    });
                    *n += 1;
                }
                PublishedLabel::LowerCourt => unreachable!("rejected while parsing"),
            }
        }
    }

    let mut originals: BTreeMap<String, String> = BTreeMap::new();
    let mut lci_serial: BTreeMap<String, usize> = BTreeMap::new();
    for row in lci {
        let c = &row.common;
        *counts.lci.entry(c.language).or_default() += 1;
        match c.label {
            PublishedLabel::Baseline => {
                note_case(c, true);
                *counts.lci_baselines.entry(c.language).or_default() += 1;
                originals
                    .entry(c.id.clone())
                    .or_insert_with(|| row.lower_court.clone());
            }
            PublishedLabel::LowerCourt => {
                note_case(c, false);
                let n = lci_serial.entry(c.id.clone()).or_default();
                lci_instances.push(PerturbedInstance {
                    instance_id: format!("{}/lci/r{}", c.id, n),
                    case_id: c.id.clone(),
                    kind: InstanceKind::Lci,
                    set_k: None,
                    perturbed_label: None,
                    occluded_span_indices: None,
                    inserted_court: Some(row.lower_court.clone()),
                    original_court: None,
                    occluded_text: None,
                    text: c.text.clone(),
                    baseline_id: baseline_id(&c.id),
                });
                *n += 1;
            }
            PublishedLabel::Rationale(_) => {
                return Err(CorpusError::UnknownLabel(format!(
                    "{:?} (in LCI data)",
                    c.label
                )))
            }
        }
    }
    for inst in &mut lci_instances {
        inst.original_court = originals.get(&inst.case_id).cloned();
    }

    counts.documents = docs.into_iter().map(|(l, ids)| (l, ids.len())).collect();
    let missing_baselines = cases
        .keys()
        .filter(|id| !has_baseline.contains(*id))
        .cloned()
        .collect();
    Ok(ImportedDataset {
        cases: cases.into_values().collect(),
        occlusion: occ_instances,
        lci: lci_instances,
        counts,
        missing_baselines,
    })
}
