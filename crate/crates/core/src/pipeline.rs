//! Stage runner behind the command-line tool.
//!
//! Every stage reads its inputs, computes all outputs in memory, and only then
//! writes them into the run directory together with an updated
//! `manifest.json`. A failing stage leaves the directory as it was. Outputs
//! contain no timestamps, so a rerun with the same inputs reproduces them
//! byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agreement::{pairwise_agreement, AgreementReport, TokenEmbedder};
use crate::corpus::{
    build_court_registry, import_published, parse_annotations, parse_corpus, parse_lci_rows,
    parse_occlusion_rows, read_published_rows, write_corpus, Case, CorpusError, Language,
    OcclusionSplit,
};
use crate::gateway::{
    fit_temperature, predict_batch, Backend, CalibrationModel, Classifier, GatewayError,
    Prediction, ReferenceClassifier, RemoteClient, RemoteConfig, TemperatureFit,
};
use crate::metrics::{
    bias_report, per_label_f1, score_instances, BiasReport, ConfidenceTarget, ExplainabilityRecord,
    GoldAlignment, OcclusionReport, ScoringConfig, DEFAULT_EPSILON,
};
use crate::perturb::{
    generate_lci_corpus, generate_occlusion_corpus, read_instances, write_instances, InstanceKind,
    OcclusionConfig, PerturbedInstance,
};
use crate::report;
use crate::synth::{synthesize, SynthOptions};

pub const MANIFEST: &str = "manifest.json";
pub const OCCLUSION_INSTANCES: &str = "occlusion.jsonl";
pub const LCI_INSTANCES: &str = "lci.jsonl";
pub const COURT_REGISTRY: &str = "court_registry.json";
pub const CALIBRATION: &str = "calibration.json";
pub const OCCLUSION_PREDICTIONS: &str = "predictions_occlusion.jsonl";
pub const OCCLUSION_RECORDS: &str = "records_occlusion.jsonl";
pub const OCCLUSION_REPORT: &str = "occlusion_report.json";
pub const LCI_PREDICTIONS: &str = "predictions_lci.jsonl";
pub const LCI_RECORDS: &str = "records_lci.jsonl";
pub const BIAS_REPORT: &str = "bias_report.json";
pub const AGREEMENT_REPORT: &str = "agreement.json";
pub const PUBLISHED_COUNTS: &str = "published_counts.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const WEIGHTS: &str = "weights.json";

pub const TOOL: &str = "perturbaudit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(GatewayError),
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// 2 configuration, 3 backend, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Backend(_) => 3,
            PipelineError::Data(_) => 4,
        }
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Weights(msg) => {
                PipelineError::Config(format!("reference weights: {msg}"))
            }
            other => PipelineError::Backend(other),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Remote(String),
    ReferenceWeights(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub backend: Option<BackendSpec>,
    pub epsilon: f64,
    pub target: ConfidenceTarget,
    pub alignment: GoldAlignment,
    pub k_max: usize,
    pub max_per_cell: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub concurrency: usize,
    pub timeout: Duration,
    pub auth_header: Option<(String, String)>,
    /// Row label in rendered tables.
    pub model_name: Option<String>,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            corpus: None,
            backend: None,
            epsilon: DEFAULT_EPSILON,
            target: ConfidenceTarget::Predicted,
            alignment: GoldAlignment::PredictionRelative,
            k_max: 4,
            max_per_cell: None,
            seed: 0,
            out: out.into(),
            concurrency: 8,
            timeout: Duration::from_secs(60),
            auth_header: None,
            model_name: None,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(PipelineError::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(1..=8).contains(&self.k_max) {
            return Err(PipelineError::Config(format!(
                "k-max must be in 1..=8, got {}",
                self.k_max
            )));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config(
                "concurrency must be at least 1".into(),
            ));
        }
        if self.max_per_cell == Some(0) {
            return Err(PipelineError::Config(
                "max-per-cell must be at least 1".into(),
            ));
        }
        if let Some(p) = &self.corpus {
            if !p.is_file() {
                return Err(PipelineError::Config(format!(
                    "corpus not found: {}",
                    p.display()
                )));
            }
        }
        if let Some(BackendSpec::ReferenceWeights(p)) = &self.backend {
            if !p.is_file() {
                return Err(PipelineError::Config(format!(
                    "weights file not found: {}",
                    p.display()
                )));
            }
        }
        if self.out.exists() && !self.out.is_dir() {
            return Err(PipelineError::Config(format!(
                "{} is not a directory",
                self.out.display()
            )));
        }
        Ok(())
    }

    fn corpus_path(&self) -> Result<&Path, PipelineError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| PipelineError::Config("--corpus is required".into()))
    }
}

/// Files of the published datasets, one per occlusion set plus the LCI file.
/// `.csv` files are read as CSV, anything else as JSON lines.
#[derive(Debug, Clone, Default)]
pub struct PublishedSources {
    pub occlusion: Vec<(u8, PathBuf)>,
    pub lci: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum Command {
    GenerateOcclusion,
    GenerateLci,
    Calibrate,
    EvaluateOcclusion,
    EvaluateLci,
    Iaa,
    Report,
    ImportPublished(PublishedSources),
    Synth { cases: usize, weighted_courts: bool },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateOcclusion => "generate-occlusion",
            Command::GenerateLci => "generate-lci",
            Command::Calibrate => "calibrate",
            Command::EvaluateOcclusion => "evaluate-occlusion",
            Command::EvaluateLci => "evaluate-lci",
            Command::Iaa => "iaa",
            Command::Report => "report",
            Command::ImportPublished(_) => "import-published",
            Command::Synth { .. } => "synth",
        }
    }
}

/// What a stage wrote, plus human-readable notes.
#[derive(Debug, Clone, Default)]
pub struct StageSummary {
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

/// Outputs of a stage before they hit the disk.
struct Staged {
    files: BTreeMap<String, Vec<u8>>,
    params: Value,
    inputs: BTreeMap<String, String>,
    notes: Vec<String>,
}

impl Staged {
    fn new(params: Value) -> Staged {
        Staged {
            files: BTreeMap::new(),
            params,
            inputs: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    fn add_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) {
        let mut bytes = Vec::new();
        for it in items {
            serde_json::to_writer(&mut bytes, it).expect("serializable");
            bytes.push(b'\n');
        }
        self.add(name, bytes);
    }

    fn input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.insert(label.to_string(), sha256_hex(bytes));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(data(&path.display().to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_corpus(config: &RunConfig, staged: &mut Staged) -> Result<Vec<Case>, PipelineError> {
    let bytes = read_file(config.corpus_path()?)?;
    staged.input("corpus", &bytes);
    Ok(parse_corpus(BufReader::new(&bytes[..]))?)
}

fn require(config: &RunConfig, name: &str, producer: &str) -> Result<PathBuf, PipelineError> {
    let p = config.out.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(PipelineError::Config(format!(
            "{} is missing; run {producer} first",
            p.display()
        )))
    }
}

fn build_backend(config: &RunConfig, staged: &mut Staged) -> Result<Backend, PipelineError> {
    match &config.backend {
        None => Err(PipelineError::Config(
            "a backend is required: --backend-url, PERTURBAUDIT_MODEL_URL or --weights".into(),
        )),
        Some(BackendSpec::ReferenceWeights(path)) => {
            let bytes = read_file(path)?;
            staged.input("weights", &bytes);
            let text = String::from_utf8(bytes)
                .map_err(|e| PipelineError::Config(format!("weights file: {e}")))?;
            Ok(Backend::Reference(ReferenceClassifier::from_json(&text)?))
        }
        Some(BackendSpec::Remote(url)) => {
            let client = remote_client(config, url)?;
            let health = client.health()?;
            staged
                .inputs
                .insert("backend".into(), format!("{url} ({})", health.model));
            Ok(Backend::Remote(client))
        }
    }
}

fn remote_client(config: &RunConfig, url: &str) -> Result<RemoteClient, PipelineError> {
    let mut rc = RemoteConfig::new(url);
    rc.timeout = config.timeout;
    rc.concurrency = config.concurrency;
    rc.auth_header = config.auth_header.clone();
    Ok(RemoteClient::new(rc)?)
}

fn backend_params(config: &RunConfig) -> Value {
    match &config.backend {
        None => Value::Null,
        Some(BackendSpec::Remote(url)) => json!({ "remote": url }),
        // the file digest is recorded among the inputs
        Some(BackendSpec::ReferenceWeights(p)) => {
            json!({ "reference": p.file_name().map(|n| n.to_string_lossy().into_owned()) })
        }
    }
}

/// Runs one stage and commits its artifacts.
pub fn run_pipeline(config: &RunConfig, command: &Command) -> Result<StageSummary, PipelineError> {
    config.validate()?;
    let staged = match command {
        Command::GenerateOcclusion => generate_occlusion(config)?,
        Command::GenerateLci => generate_lci(config)?,
        Command::Calibrate => calibrate(config)?,
        Command::EvaluateOcclusion => evaluate(config, InstanceKind::Occlusion)?,
        Command::EvaluateLci => evaluate(config, InstanceKind::Lci)?,
        Command::Iaa => iaa(config)?,
        Command::Report => render_report(config)?,
        Command::ImportPublished(src) => import(src)?,
        Command::Synth {
            cases,
            weighted_courts,
        } => synth(config, *cases, *weighted_courts)?,
    };
    commit(config, command.name(), staged)
}

fn generate_occlusion(config: &RunConfig) -> Result<Staged, PipelineError> {
    let mut staged = Staged::new(json!({
        "k_max": config.k_max,
        "max_per_cell": config.max_per_cell,
        "seed": config.seed,
    }));
    let cases = load_corpus(config, &mut staged)?;
    let occ = OcclusionConfig {
        k_max: config.k_max,
        max_per_cell: config.max_per_cell,
        seed: config.seed,
    };
    let instances = generate_occlusion_corpus(&cases, &occ);
    let mut bytes = Vec::new();
    write_instances(&mut bytes, &instances).map_err(data("occlusion instances"))?;
    staged.add(OCCLUSION_INSTANCES, bytes);
    let baselines = instances.iter().filter(|i| i.is_baseline()).count();
    staged.notes.push(format!(
        "{} occlusion instances and {baselines} baselines from {} cases",
        instances.len() - baselines,
        cases.len()
    ));
    Ok(staged)
}

fn generate_lci(config: &RunConfig) -> Result<Staged, PipelineError> {
    let mut staged = Staged::new(json!({}));
    let cases = load_corpus(config, &mut staged)?;
    let registry = build_court_registry(&cases)?;
    let (instances, skipped) =
        generate_lci_corpus(&cases, &registry).map_err(data("lower court insertion"))?;
    let mut bytes = Vec::new();
    write_instances(&mut bytes, &instances).map_err(data("lci instances"))?;
    staged.add(LCI_INSTANCES, bytes);
    staged.add_json(COURT_REGISTRY, &registry);
    let baselines = instances.iter().filter(|i| i.is_baseline()).count();
    staged.notes.push(format!(
        "{} insertion instances and {baselines} baselines",
        instances.len() - baselines
    ));
    for lang in Language::ALL {
        if registry.len(lang) > 0 {
            staged.notes.push(format!(
                "{} courts for {}",
                registry.len(lang),
                lang.display_name()
            ));
        }
    }
    if !skipped.is_empty() {
        staged.notes.push(format!(
            "skipped {} cases without a lower court: {}",
            skipped.len(),
            skipped.join(", ")
        ));
    }
    Ok(staged)
}

fn calibrate(config: &RunConfig) -> Result<Staged, PipelineError> {
    let mut staged = Staged::new(json!({ "backend": backend_params(config) }));
    let cases = load_corpus(config, &mut staged)?;
    if cases.is_empty() {
        return Err(PipelineError::Data("validation corpus is empty".into()));
    }
    let backend = build_backend(config, &mut staged)?;
    let texts: Vec<&str> = cases.iter().map(|c| c.facts.as_str()).collect();
    let logits = backend.logits(&texts)?;
    let labels: Vec<_> = cases.iter().map(|c| c.judgment).collect();
    let fit = fit_temperature(&logits, &labels)?;
    staged.notes.push(format!(
        "temperature {:.4} (NLL {:.6}, {:.6} at T=1) on {} cases",
        fit.model.temperature(),
        fit.nll,
        fit.nll_at_one,
        fit.examples
    ));
    if let Some(w) = fit.warning {
        staged.notes.push(format!("warning: {w:?}"));
    }
    staged.add_json(CALIBRATION, &fit);
    Ok(staged)
}

fn load_calibration(
    config: &RunConfig,
    staged: &mut Staged,
) -> Result<CalibrationModel, PipelineError> {
    let path = config.out.join(CALIBRATION);
    if !path.is_file() {
        staged.notes.push("no calibration.json, using T = 1".into());
        return Ok(CalibrationModel::identity());
    }
    let bytes = read_file(&path)?;
    staged.input("calibration", &bytes);
    let fit: TemperatureFit = serde_json::from_slice(&bytes).map_err(data(CALIBRATION))?;
    Ok(fit.model)
}

fn evaluate(config: &RunConfig, kind: InstanceKind) -> Result<Staged, PipelineError> {
    let (instances_file, producer, predictions_file, records_file) = match kind {
        InstanceKind::Lci => (LCI_INSTANCES, "generate-lci", LCI_PREDICTIONS, LCI_RECORDS),
        _ => (
            OCCLUSION_INSTANCES,
            "generate-occlusion",
            OCCLUSION_PREDICTIONS,
            OCCLUSION_RECORDS,
        ),
    };
    let mut staged = Staged::new(json!({
        "backend": backend_params(config),
        "epsilon": config.epsilon,
        "target": config.target,
        "alignment": config.alignment,
    }));
    let cases = load_corpus(config, &mut staged)?;
    let path = require(config, instances_file, producer)?;
    let bytes = read_file(&path)?;
    staged.input(instances_file, &bytes);
    let mut instances = read_instances(BufReader::new(&bytes[..]))
        .map_err(|(line, e)| PipelineError::Data(format!("{instances_file} line {line}: {e}")))?;
    // imported datasets may lack explicit baseline rows
    let present: std::collections::HashSet<String> =
        instances.iter().map(|i| i.instance_id.clone()).collect();
    let by_id: HashMap<&str, &Case> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut extra = Vec::new();
    for inst in &instances {
        if !present.contains(&inst.baseline_id)
            && !extra
                .iter()
                .any(|b: &PerturbedInstance| b.instance_id == inst.baseline_id)
        {
            let case = by_id.get(inst.case_id.as_str()).ok_or_else(|| {
                PipelineError::Data(format!(
                    "instance {} names unknown case {}",
                    inst.instance_id, inst.case_id
                ))
            })?;
            extra.push(PerturbedInstance::baseline(case));
        }
    }
    instances.extend(extra);

    let calibration = load_calibration(config, &mut staged)?;
    let backend = build_backend(config, &mut staged)?;
    let predictions = if instances.is_empty() {
        Vec::new()
    } else {
        let items: Vec<(&str, &str)> = instances
            .iter()
            .map(|i| (i.instance_id.as_str(), i.text.as_str()))
            .collect();
        predict_batch(&backend, &items, &calibration)?
    };
    let map: HashMap<String, Prediction> = predictions
        .iter()
        .map(|p| (p.instance_id.clone(), p.clone()))
        .collect();
    let scoring = ScoringConfig {
        epsilon: config.epsilon,
        target: config.target,
        alignment: config.alignment,
    };
    let records = score_instances(&cases, &instances, &map, &scoring).map_err(data("scoring"))?;
    staged.add_jsonl(predictions_file, &predictions);
    staged.add_jsonl(records_file, &records);
    match kind {
        InstanceKind::Lci => staged.add_json(BIAS_REPORT, &bias_report(&records)),
        _ => {
            let rep = per_label_f1(&records);
            for g in rep.groups.iter().filter(|g| g.set_k.is_none()) {
                let cells: Vec<String> = g
                    .labels
                    .iter()
                    .map(|(l, s)| {
                        format!(
                            "{l} {}",
                            s.f1.map_or("-".to_string(), |f| format!("{f:.3}"))
                        )
                    })
                    .collect();
                staged.notes.push(format!(
                    "{}: {}",
                    g.language.display_name(),
                    cells.join(", ")
                ));
            }
            staged.add_json(OCCLUSION_REPORT, &rep);
        }
    }
    staged.notes.push(format!(
        "{} records scored with {}",
        records.len(),
        backend.name()
    ));
    Ok(staged)
}

fn iaa(config: &RunConfig) -> Result<Staged, PipelineError> {
    let mut staged = Staged::new(json!({ "backend": backend_params(config) }));
    let bytes = read_file(config.corpus_path()?)?;
    staged.input("annotations", &bytes);
    let set = parse_annotations(BufReader::new(&bytes[..]))?;
    let remote = match &config.backend {
        Some(BackendSpec::Remote(url)) => Some(remote_client(config, url)?),
        _ => None,
    };
    if remote.is_none() {
        staged
            .notes
            .push("no embedding backend, BERTScore column left empty".into());
    }
    let report = pairwise_agreement(&set, remote.as_ref().map(|r| r as &dyn TokenEmbedder))
        .map_err(data("agreement"))?;
    staged.add_json(AGREEMENT_REPORT, &report);
    staged.add(
        "table_agreement.md",
        report::agreement_markdown(&report).into_bytes(),
    );
    staged.add(
        "table_agreement.csv",
        report::agreement_csv(&report).into_bytes(),
    );
    Ok(staged)
}

fn render_report(config: &RunConfig) -> Result<Staged, PipelineError> {
    let name = config
        .model_name
        .clone()
        .unwrap_or_else(|| "model".to_string());
    let mut staged = Staged::new(json!({ "model_name": name }));
    let load_records =
        |file: &str, staged: &mut Staged| -> Result<Vec<ExplainabilityRecord>, PipelineError> {
            let p = config.out.join(file);
            if !p.is_file() {
                staged
                    .notes
                    .push(format!("{file} not found, table left empty"));
                return Ok(Vec::new());
            }
            staged.input(file, &read_file(&p)?);
            read_jsonl(&p)
        };
    let occ_records = load_records(OCCLUSION_RECORDS, &mut staged)?;
    let lci_records = load_records(LCI_RECORDS, &mut staged)?;
    let occ: OcclusionReport = per_label_f1(&occ_records);
    let bias: BiasReport = bias_report(&lci_records);
    let agreement_path = config.out.join(AGREEMENT_REPORT);
    let agreement: Option<AgreementReport> = if agreement_path.is_file() {
        let bytes = read_file(&agreement_path)?;
        staged.input(AGREEMENT_REPORT, &bytes);
        Some(serde_json::from_slice(&bytes).map_err(data(AGREEMENT_REPORT))?)
    } else {
        None
    };

    let occ_rows = [(name.as_str(), &occ)];
    let bias_rows = [(name.as_str(), &bias)];
    staged.add(
        "table_occlusion.md",
        report::occlusion_markdown(&occ_rows).into_bytes(),
    );
    staged.add(
        "table_occlusion.csv",
        report::occlusion_csv(&occ_rows).into_bytes(),
    );
    staged.add_json("table_occlusion.json", &occ);
    let mut by_set = String::new();
    for lang in Language::ALL {
        by_set.push_str(&format!("### {}\n\n", lang.display_name()));
        by_set.push_str(&report::per_set_markdown(&occ_rows, lang));
        by_set.push('\n');
    }
    staged.add("table_occlusion_by_set.md", by_set.into_bytes());
    staged.add(
        "table_lci.md",
        report::bias_markdown(&bias_rows).into_bytes(),
    );
    staged.add("table_lci.csv", report::bias_csv(&bias_rows).into_bytes());
    staged.add_json("table_lci.json", &bias);
    if let Some(a) = &agreement {
        staged.add(
            "table_agreement.md",
            report::agreement_markdown(a).into_bytes(),
        );
        staged.add("table_agreement.csv", report::agreement_csv(a).into_bytes());
    }
    staged.add(
        "report.md",
        report::full_markdown(&occ_rows, &bias_rows, agreement.as_ref()).into_bytes(),
    );
    Ok(staged)
}

fn read_rows(path: &Path) -> Result<Vec<Value>, PipelineError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(data(&path.display().to_string()))?;
    let csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    read_published_rows(&text, csv).map_err(data(&path.display().to_string()))
}

fn import(src: &PublishedSources) -> Result<Staged, PipelineError> {
    if src.occlusion.is_empty() && src.lci.is_none() {
        return Err(PipelineError::Config("no published files given".into()));
    }
    let mut staged = Staged::new(json!({}));
    let mut splits = Vec::new();
    for (k, path) in &src.occlusion {
        staged.input(&format!("occlusion_set_{k}"), &read_file(path)?);
        let rows = parse_occlusion_rows(read_rows(path)?)?;
        splits.push(OcclusionSplit { set_k: *k, rows });
    }
    let lci = match &src.lci {
        Some(p) => {
            staged.input("lci", &read_file(p)?);
            parse_lci_rows(read_rows(p)?)?
        }
        None => Vec::new(),
    };
    let ds = import_published(&splits, &lci)?;
    let mut corpus = Vec::new();
    write_corpus(&mut corpus, &ds.cases).map_err(data("corpus"))?;
    staged.add(CORPUS, corpus);
    if !ds.occlusion.is_empty() {
        staged.add_jsonl(OCCLUSION_INSTANCES, &ds.occlusion);
    }
    if !ds.lci.is_empty() {
        staged.add_jsonl(LCI_INSTANCES, &ds.lci);
    }
    let disc = ds.counts.lci_discrepancy();
    staged.add_json(
        PUBLISHED_COUNTS,
        &json!({
            "counts": ds.counts,
            "lci_discrepancy": disc,
            "missing_baselines": ds.missing_baselines,
        }),
    );
    for lang in Language::ALL {
        staged.notes.push(format!(
            "{}: {} documents, {} occlusion instances, {} LCI rows",
            lang.display_name(),
            ds.counts.document_count(lang),
            ds.counts.occlusion_total(lang),
            ds.counts.lci_total(lang)
        ));
    }
    staged.notes.push(format!(
        "LCI rows: {} observed; published table sums to {}, dataset description states {}",
        disc.observed, disc.table_total, disc.stated_total
    ));
    Ok(staged)
}

fn synth(config: &RunConfig, cases: usize, weighted_courts: bool) -> Result<Staged, PipelineError> {
    if cases == 0 {
        return Err(PipelineError::Config("--cases must be at least 1".into()));
    }
    let staged_params =
        json!({ "cases": cases, "seed": config.seed, "weighted_courts": weighted_courts });
    let mut staged = Staged::new(staged_params);
    let corpus = synthesize(&SynthOptions {
        cases,
        seed: config.seed,
        weighted_courts,
        ..Default::default()
    });
    let mut bytes = Vec::new();
    write_corpus(&mut bytes, &corpus.cases).map_err(data("corpus"))?;
    staged.add(CORPUS, bytes);
    let mut weights = corpus.classifier.to_json().into_bytes();
    weights.push(b'\n');
    staged.add(WEIGHTS, weights);
    staged.notes.push(format!("{cases} synthetic cases"));
    Ok(staged)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageEntry {
    config_hash: String,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn commit(config: &RunConfig, stage: &str, staged: Staged) -> Result<StageSummary, PipelineError> {
    let out = &config.out;
    fs::create_dir_all(out)
        .map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out.display())))?;

    let manifest_path = out.join(MANIFEST);
    let mut manifest: Manifest = if manifest_path.is_file() {
        serde_json::from_slice(&read_file(&manifest_path)?).map_err(data(MANIFEST))?
    } else {
        Manifest::default()
    };
    manifest.tool = TOOL.to_string();
    manifest.version = VERSION.to_string();
    let stage_config = json!({ "stage": stage, "params": staged.params, "inputs": staged.inputs });
    let entry = StageEntry {
        config_hash: sha256_hex(&serde_json::to_vec(&stage_config).expect("json")),
        config: staged.params.clone(),
        inputs: staged.inputs.clone(),
        outputs: staged
            .files
            .iter()
            .map(|(n, b)| (n.clone(), sha256_hex(b)))
            .collect(),
    };
    manifest.stages.insert(stage.to_string(), entry);
    let mut files = staged.files;
    let mut mbytes = serde_json::to_vec_pretty(&manifest).expect("json");
    mbytes.push(b'\n');
    files.insert(MANIFEST.to_string(), mbytes);

    // write everything to temporaries first, then rename into place
    let mut temps: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |temps: &[(PathBuf, PathBuf)]| {
        for (t, _) in temps {
            let _ = fs::remove_file(t);
        }
    };
    for (name, bytes) in &files {
        let final_path = out.join(name);
        let tmp = out.join(format!(".{name}.partial"));
        if let Err(e) = fs::write(&tmp, bytes) {
            let _ = fs::remove_file(&tmp);
            cleanup(&temps);
            return Err(PipelineError::Data(format!(
                "cannot write {}: {e}",
                final_path.display()
            )));
        }
        temps.push((tmp, final_path));
    }
    for (i, (tmp, final_path)) in temps.iter().enumerate() {
        if let Err(e) = fs::rename(tmp, final_path) {
            cleanup(&temps[i..]);
            return Err(PipelineError::Data(format!(
                "cannot write {}: {e}",
                final_path.display()
            )));
        }
    }
    let outputs = files.keys().filter(|n| *n != MANIFEST).cloned().collect();
    Ok(StageSummary {
        outputs,
        notes: staged.notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_run(dir: &Path, cases: usize) -> RunConfig {
        let mut cfg = RunConfig::new(dir);
        cfg.seed = 5;
        run_pipeline(
            &cfg,
            &Command::Synth {
                cases,
                weighted_courts: true,
            },
        )
        .unwrap();
        cfg.corpus = Some(dir.join(CORPUS));
        cfg.backend = Some(BackendSpec::ReferenceWeights(dir.join(WEIGHTS)));
        cfg
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(dir.path());
        cfg.k_max = 9;
        let err = run_pipeline(&cfg, &Command::GenerateOcclusion).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        cfg.k_max = 4;
        cfg.epsilon = -0.1;
        assert_eq!(
            run_pipeline(&cfg, &Command::GenerateOcclusion)
                .unwrap_err()
                .exit_code(),
            2
        );
        cfg.epsilon = 0.01;
        assert_eq!(
            run_pipeline(&cfg, &Command::GenerateOcclusion)
                .unwrap_err()
                .exit_code(),
            2
        );
        cfg.corpus = Some(dir.path().join("nope.jsonl"));
        assert_eq!(
            run_pipeline(&cfg, &Command::GenerateOcclusion)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn full_run_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let cfg = synth_run(dir, 9);
            for cmd in [
                Command::GenerateOcclusion,
                Command::GenerateLci,
                Command::Calibrate,
                Command::EvaluateOcclusion,
                Command::EvaluateLci,
                Command::Report,
            ] {
                run_pipeline(&cfg, &cmd).unwrap();
            }
        }
        let names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert!(names.len() > 10);
        for n in names {
            let (x, y) = (
                fs::read(a.path().join(&n)).unwrap(),
                fs::read(b.path().join(&n)).unwrap(),
            );
            assert!(x == y, "{n:?} differs");
            assert!(!n.to_string_lossy().ends_with(".partial"));
        }
    }

    #[test]
    fn failed_stage_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_run(dir.path(), 3);
        let before: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        let manifest = fs::read(dir.path().join(MANIFEST)).unwrap();
        let err = run_pipeline(&cfg, &Command::EvaluateOcclusion).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
        let mut bad = cfg.clone();
        bad.corpus = Some(dir.path().join("bad.jsonl"));
        assert_eq!(
            run_pipeline(&bad, &Command::GenerateOcclusion)
                .unwrap_err()
                .exit_code(),
            4
        );
        let mut after: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        after.retain(|n| n != "bad.jsonl");
        assert_eq!(before.len(), after.len());
        assert_eq!(fs::read(dir.path().join(MANIFEST)).unwrap(), manifest);
    }

    #[test]
    fn unreachable_backend_is_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_run(dir.path(), 3);
        run_pipeline(&cfg, &Command::GenerateOcclusion).unwrap();
        cfg.backend = Some(BackendSpec::Remote("http://127.0.0.1:9".into()));
        cfg.timeout = Duration::from_millis(200);
        let err = run_pipeline(&cfg, &Command::Calibrate).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn report_on_empty_records() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(OCCLUSION_RECORDS), "").unwrap();
        let cfg = RunConfig::new(dir.path());
        let summary = run_pipeline(&cfg, &Command::Report).unwrap();
        assert!(summary.outputs.contains(&"table_occlusion.md".to_string()));
        let md = fs::read_to_string(dir.path().join("table_occlusion.md")).unwrap();
        assert_eq!(md.lines().count(), 3);
    }
}
