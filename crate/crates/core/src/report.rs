//! Table renderers.
//!
//! Markdown tables put one model per row. Occlusion tables group columns by
//! language (or by occlusion set for the per-language view) with one column
//! per rationale label; F1 is printed times 100 with two decimals. The LCI
//! table has +MES, -MES and both flip rates per language, and the agreement
//! table has one row per metric and one column per annotator pair. Absent
//! cells print as an em dash. CSV output is long-format with instance counts
//! next to every score.

use std::fmt::Write as _;

use crate::agreement::{AgreementReport, Metric};
use crate::corpus::{Language, RationaleLabel};
use crate::metrics::{BiasReport, GroupScores, MeanStd, OcclusionReport};

pub const ABSENT: &str = "—";

/// A named report, one table row.
pub type Row<'a, T> = (&'a str, &'a T);

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn mean_std(v: Option<MeanStd>) -> String {
    v.map_or_else(
        || ABSENT.to_string(),
        |m| format!("{:.2} ({:.2})", m.mean, m.std),
    )
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    let sep: Vec<String> = header
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i == 0 {
                "---".to_string()
            } else {
                "---:".to_string()
            }
        })
        .collect();
    out.push_str(&line(&sep));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn f1_cell(group: Option<&GroupScores>, label: RationaleLabel) -> String {
    pct(group.and_then(|g| g.f1(label)))
}

/// Per-label F1 over all sets, languages as column groups.
pub fn occlusion_markdown(rows: &[Row<OcclusionReport>]) -> String {
    let mut header = vec!["Model".to_string()];
    for lang in Language::ALL {
        for label in RationaleLabel::ALL {
            header.push(format!("{} {}", lang.display_name(), label.title()));
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, rep)| {
            let mut r = vec![name.to_string()];
            for lang in Language::ALL {
                let g = rep.group(lang, None);
                r.extend(RationaleLabel::ALL.iter().map(|&l| f1_cell(g, l)));
            }
            r
        })
        .collect();
    table(&header, &body)
}

fn report_sets(rows: &[Row<OcclusionReport>]) -> Vec<u8> {
    let mut sets: Vec<u8> = rows.iter().flat_map(|(_, r)| r.sets()).collect();
    sets.sort_unstable();
    sets.dedup();
    if sets.is_empty() {
        sets = (1..=4).collect();
    }
    sets
}

/// Per-set F1 for one language, sets as column groups.
pub fn per_set_markdown(rows: &[Row<OcclusionReport>], language: Language) -> String {
    let sets = report_sets(rows);
    let mut header = vec!["Model".to_string()];
    for k in &sets {
        for label in RationaleLabel::ALL {
            header.push(format!("Set {k} {}", label.title()));
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, rep)| {
            let mut r = vec![name.to_string()];
            for &k in &sets {
                let g = rep.group(language, Some(k));
                r.extend(RationaleLabel::ALL.iter().map(|&l| f1_cell(g, l)));
            }
            r
        })
        .collect();
    table(&header, &body)
}

fn csv_string(records: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Long format: one line per (model, language, set, label). `set` is `all`
/// for the pooled group.
pub fn occlusion_csv(rows: &[Row<OcclusionReport>]) -> String {
    let mut out = vec![[
        "model", "language", "set", "label", "f1", "tp", "fp", "fn", "support", "records",
    ]
    .map(String::from)
    .to_vec()];
    for (name, rep) in rows {
        for g in &rep.groups {
            for (label, s) in &g.labels {
                out.push(vec![
                    name.to_string(),
                    g.language.code().to_string(),
                    g.set_k.map_or_else(|| "all".to_string(), |k| k.to_string()),
                    label.as_str().to_string(),
                    opt(s.f1),
                    s.confusion.tp.to_string(),
                    s.confusion.fp.to_string(),
                    s.confusion.fn_.to_string(),
                    s.confusion.support().to_string(),
                    g.records.to_string(),
                ]);
            }
        }
    }
    csv_string(out)
}

/// MES in percent as `mean (std)`, flip rates in percent.
pub fn bias_markdown(rows: &[Row<BiasReport>]) -> String {
    let mut header = vec!["Model".to_string()];
    for lang in Language::ALL {
        for col in ["+MES", "-MES", "Flip 1→0", "Flip 0→1"] {
            header.push(format!("{} {col}", lang.display_name()));
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, rep)| {
            let mut r = vec![name.to_string()];
            for lang in Language::ALL {
                let b = rep.language(lang);
                r.push(mean_std(b.and_then(|b| b.mes.plus)));
                r.push(mean_std(b.and_then(|b| b.mes.minus)));
                let flips = b.and_then(|b| b.flips);
                r.push(
                    flips.map_or_else(|| ABSENT.to_string(), |f| format!("{:.2}", f.one_to_zero)),
                );
                r.push(
                    flips.map_or_else(|| ABSENT.to_string(), |f| format!("{:.2}", f.zero_to_one)),
                );
            }
            r
        })
        .collect();
    table(&header, &body)
}

pub fn bias_csv(rows: &[Row<BiasReport>]) -> String {
    let mut out = vec![[
        "model",
        "language",
        "records",
        "mes_plus",
        "mes_plus_std",
        "mes_plus_n",
        "mes_minus",
        "mes_minus_std",
        "mes_minus_n",
        "flip_1_0",
        "flip_0_1",
        "flips_1_0",
        "flips_0_1",
    ]
    .map(String::from)
    .to_vec()];
    for (name, rep) in rows {
        for b in &rep.languages {
            let (p, m, f) = (b.mes.plus, b.mes.minus, b.flips);
            out.push(vec![
                name.to_string(),
                b.language.code().to_string(),
                b.records.to_string(),
                opt(p.map(|x| x.mean)),
                opt(p.map(|x| x.std)),
                p.map_or(0, |x| x.count).to_string(),
                opt(m.map(|x| x.mean)),
                opt(m.map(|x| x.std)),
                m.map_or(0, |x| x.count).to_string(),
                opt(f.map(|x| x.one_to_zero)),
                opt(f.map(|x| x.zero_to_one)),
                f.map_or(0, |x| x.flips_one_to_zero).to_string(),
                f.map_or(0, |x| x.flips_zero_to_one).to_string(),
            ]);
        }
    }
    csv_string(out)
}

fn pair_name(first: &str, second: &str) -> String {
    format!("{first}-{second}")
}

/// Metrics as rows, annotator pairs as columns, two decimals.
pub fn agreement_markdown(report: &AgreementReport) -> String {
    let mut header = vec!["IAA metric".to_string()];
    header.extend(report.pairs.iter().map(|p| pair_name(&p.first, &p.second)));
    let body: Vec<Vec<String>> = Metric::ALL
        .iter()
        .map(|m| {
            let mut r = vec![m.title().to_string()];
            r.extend(report.pairs.iter().map(|p| {
                p.scores
                    .get(m)
                    .map_or_else(|| ABSENT.to_string(), |v| format!("{v:.2}"))
            }));
            r
        })
        .collect();
    table(&header, &body)
}

pub fn agreement_csv(report: &AgreementReport) -> String {
    let mut out = vec![["pair", "metric", "score", "cells"]
        .map(String::from)
        .to_vec()];
    for p in &report.pairs {
        for m in Metric::ALL {
            out.push(vec![
                pair_name(&p.first, &p.second),
                m.title().to_string(),
                opt(p.scores.get(&m).copied()),
                p.cells.to_string(),
            ]);
        }
    }
    csv_string(out)
}

/// All tables in one document.
pub fn full_markdown(
    occlusion: &[Row<OcclusionReport>],
    bias: &[Row<BiasReport>],
    agreement: Option<&AgreementReport>,
) -> String {
    let mut out = String::new();
    out.push_str("## Occlusion: per-label F1 over all sets\n\n");
    out.push_str(&occlusion_markdown(occlusion));
    for lang in Language::ALL {
        let _ = write!(out, "\n## Occlusion: {} by set\n\n", lang.display_name());
        out.push_str(&per_set_markdown(occlusion, lang));
    }
    out.push_str("\n## Lower court insertion\n\n");
    out.push_str(&bias_markdown(bias));
    if let Some(a) = agreement {
        out.push_str("\n## Inter-annotator agreement\n\n");
        out.push_str(&agreement_markdown(a));
    }
    out
}
