//! Annotated court decisions and their canonical JSONL representation.
//!
//! A [`Case`] holds the facts section of one decision together with the
//! rationale spans annotated on it. Span offsets count Unicode scalar values,
//! not bytes, so a file written on one platform re-parses identically on any
//! other regardless of how many diacritics the text carries.
//!
//! The canonical file format is one JSON object per line:
//!
//! ```text
//! {"case_id":"de-001","language":"de","year":2017,"legal_area":"civil law",
//!  "judgment":1,"facts":"...","spans":[{"start":0,"end":12,"label":"supports"}]}
//! ```
//!
//! Spans may additionally carry a `"text"` field; when present it must match
//! the facts substring exactly.

mod published;

pub use published::{
    import_published, parse_lci_rows, parse_occlusion_rows, read_published_rows, ImportedDataset,
    InstanceCounts, LciDiscrepancy, LciRow, OcclusionRow, OcclusionSplit, PublishedLabel,
    PUBLISHED_LCI_TOTALS, STATED_LCI_TOTAL,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed case record: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("case {0}: spans overlap")]
    OverlappingSpans(String),
    #[error("case {0}: span offsets do not match the facts text")]
    OffsetMismatch(String),
    #[error("duplicate case id {0}")]
    DuplicateId(String),
    #[error("no lower court spans for language {0}")]
    NoLowerCourts(Language),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("published data: column {0} missing or mistyped")]
    SchemaMismatch(String),
    #[error("published data: unknown label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    De,
    Fr,
    It,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::De, Language::Fr, Language::It];

    pub fn code(self) -> &'static str {
        match self {
            Language::De => "de",
            Language::Fr => "fr",
            Language::It => "it",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Language::De => "German",
            Language::Fr => "French",
            Language::It => "Italian",
        }
    }

    pub fn from_code(code: &str) -> Option<Language> {
        match code.trim().to_ascii_lowercase().as_str() {
            "de" => Some(Language::De),
            "fr" => Some(Language::Fr),
            "it" => Some(Language::It),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Annotation label of a span of the facts section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanLabel {
    Supports,
    Opposes,
    Neutral,
    LowerCourt,
}

impl SpanLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SpanLabel::Supports => "supports",
            SpanLabel::Opposes => "opposes",
            SpanLabel::Neutral => "neutral",
            SpanLabel::LowerCourt => "lower_court",
        }
    }

    /// The rationale label this span contributes to occlusion, if any.
    pub fn rationale(self) -> Option<RationaleLabel> {
        match self {
            SpanLabel::Supports => Some(RationaleLabel::Supports),
            SpanLabel::Opposes => Some(RationaleLabel::Opposes),
            SpanLabel::Neutral => Some(RationaleLabel::Neutral),
            SpanLabel::LowerCourt => None,
        }
    }
}

impl fmt::Display for SpanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three labels an occluded span can carry (and that explainability
/// scores are mapped back to).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleLabel {
    Opposes,
    Neutral,
    Supports,
}

impl RationaleLabel {
    /// Column order used by every report table.
    pub const ALL: [RationaleLabel; 3] = [
        RationaleLabel::Opposes,
        RationaleLabel::Neutral,
        RationaleLabel::Supports,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RationaleLabel::Opposes => "opposes",
            RationaleLabel::Neutral => "neutral",
            RationaleLabel::Supports => "supports",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            RationaleLabel::Opposes => "Opposes",
            RationaleLabel::Neutral => "Neutral",
            RationaleLabel::Supports => "Supports",
        }
    }

    pub fn span_label(self) -> SpanLabel {
        match self {
            RationaleLabel::Opposes => SpanLabel::Opposes,
            RationaleLabel::Neutral => SpanLabel::Neutral,
            RationaleLabel::Supports => SpanLabel::Supports,
        }
    }
}

impl fmt::Display for RationaleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of a case. Encoded as `0` (dismissal) and `1` (approval), which is
/// also the index order of a binary classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Judgment {
    Dismissal = 0,
    Approval = 1,
}

impl Judgment {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Judgment> {
        match index {
            0 => Some(Judgment::Dismissal),
            1 => Some(Judgment::Approval),
            _ => None,
        }
    }

    pub fn other(self) -> Judgment {
        match self {
            Judgment::Dismissal => Judgment::Approval,
            Judgment::Approval => Judgment::Dismissal,
        }
    }
}

impl From<Judgment> for u8 {
    fn from(j: Judgment) -> u8 {
        j as u8
    }
}

impl TryFrom<u8> for Judgment {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Judgment::from_index(v as usize).ok_or_else(|| format!("judgment must be 0 or 1, got {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
    pub text: String,
}

/// One court decision: its facts and the spans annotated on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Case {
    pub case_id: String,
    pub language: Language,
    pub year: i32,
    pub legal_area: String,
    pub judgment: Judgment,
    pub facts: String,
    pub spans: Vec<Span>,
    /// Set only in annotation files, where several annotators label the same case.
    pub annotator: Option<String>,
}

/// A piece of the facts text: either verbatim text between spans, or a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment<'a> {
    Gap(&'a str),
    Span(usize, &'a Span),
}

impl Case {
    /// Builds a case from span offsets, filling in span texts and checking
    /// every invariant.
    pub fn new(
        case_id: impl Into<String>,
        language: Language,
        year: i32,
        legal_area: impl Into<String>,
        judgment: Judgment,
        facts: impl Into<String>,
        spans: impl IntoIterator<Item = (usize, usize, SpanLabel)>,
    ) -> Result<Case, CorpusError> {
        let case_id = case_id.into();
        let facts = facts.into();
        let raw = spans
            .into_iter()
            .map(|(start, end, label)| RawSpan {
                start,
                end,
                label,
                text: None,
            })
            .collect();
        let spans = resolve_spans(&case_id, &facts, raw)?;
        Ok(Case {
            case_id,
            language,
            year,
            legal_area: legal_area.into(),
            judgment,
            facts,
            spans,
            annotator: None,
        })
    }

    /// Facts split into alternating gaps and spans, in text order. The first
    /// and last items are always gaps (possibly empty).
    pub fn segments(&self) -> Vec<Segment<'_>> {
        let offsets = char_byte_offsets(&self.facts);
        let mut out = Vec::with_capacity(self.spans.len() * 2 + 1);
        let mut cursor = 0usize;
        for (i, span) in self.spans.iter().enumerate() {
            let start = offsets[span.start];
            let end = offsets[span.end];
            out.push(Segment::Gap(&self.facts[cursor..start]));
            out.push(Segment::Span(i, span));
            cursor = end;
        }
        out.push(Segment::Gap(&self.facts[cursor..]));
        out
    }

    /// Rebuilds the facts text from gaps and span texts.
    pub fn reconstruct_facts(&self) -> String {
        let mut out = String::with_capacity(self.facts.len());
        for seg in self.segments() {
            match seg {
                Segment::Gap(g) => out.push_str(g),
                Segment::Span(_, s) => out.push_str(&s.text),
            }
        }
        out
    }

    pub fn span_indices(&self, label: SpanLabel) -> Vec<usize> {
        self.spans
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Canonical names of the lower courts mentioned in the case, in text order.
    pub fn lower_courts(&self) -> Vec<String> {
        self.spans
            .iter()
            .filter(|s| s.label == SpanLabel::LowerCourt)
            .map(|s| canonical_court_name(&s.text))
            .collect()
    }
}

/// Collapses internal whitespace runs to single spaces and trims the ends.
pub fn canonical_court_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte offset of every char boundary, including the end of the string.
pub(crate) fn char_byte_offsets(s: &str) -> Vec<usize> {
    let mut v: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
    v.push(s.len());
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpan {
    start: usize,
    end: usize,
    label: SpanLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    case_id: String,
    language: Language,
    year: i32,
    legal_area: String,
    judgment: Judgment,
    facts: String,
    spans: Vec<RawSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotator: Option<String>,
}

fn resolve_spans(
    case_id: &str,
    facts: &str,
    mut raw: Vec<RawSpan>,
) -> Result<Vec<Span>, CorpusError> {
    let offsets = char_byte_offsets(facts);
    let n_chars = offsets.len() - 1;
    raw.sort_by_key(|s| (s.start, s.end));
    let mut spans = Vec::with_capacity(raw.len());
    let mut prev_end = 0usize;
    for (i, r) in raw.into_iter().enumerate() {
        if r.start >= r.end || r.end > n_chars {
            return Err(CorpusError::OffsetMismatch(case_id.to_string()));
        }
        if i > 0 && r.start < prev_end {
            return Err(CorpusError::OverlappingSpans(case_id.to_string()));
        }
        let text = &facts[offsets[r.start]..offsets[r.end]];
        if let Some(given) = &r.text {
            if given != text {
                return Err(CorpusError::OffsetMismatch(case_id.to_string()));
            }
        }
        prev_end = r.end;
        spans.push(Span {
            start: r.start,
            end: r.end,
            label: r.label,
            text: text.to_string(),
        });
    }
    Ok(spans)
}

fn parse_line(line_no: usize, line: &str) -> Result<Case, CorpusError> {
    let raw: RawCase = serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
        line: line_no,
        detail: e.to_string(),
    })?;
    let spans = resolve_spans(&raw.case_id, &raw.facts, raw.spans)?;
    Ok(Case {
        case_id: raw.case_id,
        language: raw.language,
        year: raw.year,
        legal_area: raw.legal_area,
        judgment: raw.judgment,
        facts: raw.facts,
        spans,
        annotator: raw.annotator,
    })
}

fn read_cases<R: BufRead>(reader: R) -> Result<Vec<Case>, CorpusError> {
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        cases.push(parse_line(i + 1, &line)?);
    }
    Ok(cases)
}

/// Parses a canonical corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Case>, CorpusError> {
    let cases = read_cases(reader)?;
    let mut seen = HashSet::new();
    for c in &cases {
        if !seen.insert(c.case_id.as_str()) {
            return Err(CorpusError::DuplicateId(c.case_id.clone()));
        }
    }
    Ok(cases)
}

/// Parses an annotation file: the canonical format where each line also names
/// its annotator. A case id may repeat across annotators but not within one.
pub fn parse_annotations<R: BufRead>(
    reader: R,
) -> Result<BTreeMap<String, BTreeMap<String, Case>>, CorpusError> {
    let mut out: BTreeMap<String, BTreeMap<String, Case>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case = parse_line(i + 1, &line)?;
        let annotator = case
            .annotator
            .clone()
            .ok_or_else(|| CorpusError::MalformedLine {
                line: i + 1,
                detail: "missing field `annotator`".to_string(),
            })?;
        let per = out.entry(annotator).or_default();
        if per.contains_key(&case.case_id) {
            return Err(CorpusError::DuplicateId(case.case_id));
        }
        per.insert(case.case_id.clone(), case);
    }
    Ok(out)
}

pub fn case_to_json_line(case: &Case) -> String {
    let raw = RawCase {
        case_id: case.case_id.clone(),
        language: case.language,
        year: case.year,
        legal_area: case.legal_area.clone(),
        judgment: case.judgment,
        facts: case.facts.clone(),
        spans: case
            .spans
            .iter()
            .map(|s| RawSpan {
                start: s.start,
                end: s.end,
                label: s.label,
                text: None,
            })
            .collect(),
        annotator: case.annotator.clone(),
    };
    serde_json::to_string(&raw).expect("case serialization is infallible")
}

pub fn write_corpus<W: Write>(mut w: W, cases: &[Case]) -> std::io::Result<()> {
    for c in cases {
        writeln!(w, "{}", case_to_json_line(c))?;
    }
    Ok(())
}

/// Canonical lower-court names per language, each set sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourtRegistry {
    pub courts: BTreeMap<Language, BTreeSet<String>>,
}

impl CourtRegistry {
    pub fn courts_for(&self, language: Language) -> Option<&BTreeSet<String>> {
        self.courts.get(&language)
    }

    pub fn len(&self, language: Language) -> usize {
        self.courts.get(&language).map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.courts.values().all(|c| c.is_empty())
    }
}

/// Collects every lower-court name in the corpus. Each language present in
/// the corpus must mention at least one court.
pub fn build_court_registry(corpus: &[Case]) -> Result<CourtRegistry, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut courts: BTreeMap<Language, BTreeSet<String>> = BTreeMap::new();
    for case in corpus {
        let entry = courts.entry(case.language).or_default();
        for name in case.lower_courts() {
            if !name.is_empty() {
                entry.insert(name);
            }
        }
    }
    if let Some((lang, _)) = courts.iter().find(|(_, set)| set.is_empty()) {
        return Err(CorpusError::NoLowerCourts(*lang));
    }
    Ok(CourtRegistry { courts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(spans: &str) -> String {
        format!(
            r#"{{"case_id":"c1","language":"de","year":2017,"legal_area":"civil law","judgment":1,"facts":"Die Klägerin rügt. Das Obergericht wies ab. Sie zahlt.","spans":{spans}}}"#
        )
    }

    #[test]
    fn parses_three_span_case() {
        let l = line(
            r#"[{"start":19,"end":43,"label":"lower_court"},{"start":0,"end":18,"label":"supports"},{"start":44,"end":54,"label":"neutral"}]"#,
        );
        let cases = parse_corpus(l.as_bytes()).unwrap();
        assert_eq!(cases.len(), 1);
        let c = &cases[0];
        assert_eq!(c.spans.len(), 3);
        // re-sorted by offset
        assert_eq!(c.spans[0].text, "Die Klägerin rügt.");
        assert_eq!(c.spans[1].text, "Das Obergericht wies ab.");
        assert_eq!(c.spans[2].text, "Sie zahlt.");
        assert_eq!(c.reconstruct_facts(), c.facts);
        assert_eq!(c.judgment, Judgment::Approval);
    }

    #[test]
    fn span_text_must_match_offsets() {
        let l = line(r#"[{"start":0,"end":18,"label":"supports","text":"Die Klagerin rugt."}]"#);
        assert!(matches!(
            parse_corpus(l.as_bytes()),
            Err(CorpusError::OffsetMismatch(id)) if id == "c1"
        ));
        let l = line(r#"[{"start":40,"end":400,"label":"supports"}]"#);
        assert!(matches!(
            parse_corpus(l.as_bytes()),
            Err(CorpusError::OffsetMismatch(_))
        ));
        let l = line(r#"[{"start":5,"end":5,"label":"supports"}]"#);
        assert!(matches!(
            parse_corpus(l.as_bytes()),
            Err(CorpusError::OffsetMismatch(_))
        ));
    }

    #[test]
    fn overlapping_spans_rejected() {
        let l = line(
            r#"[{"start":0,"end":18,"label":"supports"},{"start":10,"end":25,"label":"neutral"}]"#,
        );
        assert!(matches!(
            parse_corpus(l.as_bytes()),
            Err(CorpusError::OverlappingSpans(_))
        ));
    }

    #[test]
    fn duplicate_ids_and_malformed_lines() {
        let l = line("[]");
        let two = format!("{l}\n{l}\n");
        assert!(matches!(
            parse_corpus(two.as_bytes()),
            Err(CorpusError::DuplicateId(id)) if id == "c1"
        ));
        let bad = format!("{l}\n\n{{\"case_id\": 3}}\n");
        match parse_corpus(bad.as_bytes()) {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_judgment = l.replace("\"judgment\":1", "\"judgment\":2");
        assert!(matches!(
            parse_corpus(bad_judgment.as_bytes()),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn offsets_count_scalar_values() {
        let case = Case::new(
            "x",
            Language::Fr,
            2020,
            "penal law",
            Judgment::Dismissal,
            "Décision é. Über.",
            [(0, 11, SpanLabel::Opposes), (12, 17, SpanLabel::Neutral)],
        )
        .unwrap();
        assert_eq!(case.spans[0].text, "Décision é.");
        assert_eq!(case.spans[1].text, "Über.");
        let json = case_to_json_line(&case);
        let back = parse_corpus(json.as_bytes()).unwrap();
        assert_eq!(back[0], case);
    }

    #[test]
    fn registry_dedups_and_sorts() {
        let mk = |id: &str, court: &str| {
            let facts = format!("Vorinstanz {court}. Ende.");
            let n = court.chars().count();
            Case::new(
                id,
                Language::De,
                2018,
                "civil law",
                Judgment::Approval,
                facts,
                [(11, 11 + n, SpanLabel::LowerCourt)],
            )
            .unwrap()
        };
        let corpus = vec![mk("1", "A"), mk("2", "B"), mk("3", "A")];
        let reg = build_court_registry(&corpus).unwrap();
        let de: Vec<_> = reg
            .courts_for(Language::De)
            .unwrap()
            .iter()
            .cloned()
            .collect();
        assert_eq!(de, vec!["A", "B"]);

        let ws = vec![mk("1", "Ober  gericht"), mk("2", "Ober gericht")];
        assert_eq!(build_court_registry(&ws).unwrap().len(Language::De), 1);
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(
            build_court_registry(&[]),
            Err(CorpusError::EmptyCorpus)
        ));
        let c = Case::new("1", Language::It, 2019, "x", Judgment::Approval, "a b", []).unwrap();
        assert!(matches!(
            build_court_registry(&[c]),
            Err(CorpusError::NoLowerCourts(Language::It))
        ));
    }

    #[test]
    fn canonical_names() {
        assert_eq!(
            canonical_court_name("  Tribunal \t cantonal\n "),
            "Tribunal cantonal"
        );
    }

    #[test]
    fn annotations_allow_repeat_ids_across_annotators() {
        let base = line("[]");
        let a1 = base.replacen('{', r#"{"annotator":"A1","#, 1);
        let a2 = base.replacen('{', r#"{"annotator":"A2","#, 1);
        let set = parse_annotations(format!("{a1}\n{a2}\n").as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(matches!(
            parse_annotations(format!("{a1}\n{a1}\n").as_bytes()),
            Err(CorpusError::DuplicateId(_))
        ));
        assert!(matches!(
            parse_annotations(base.as_bytes()),
            Err(CorpusError::MalformedLine { .. })
        ));
    }
}
