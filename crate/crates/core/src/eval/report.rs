//! Comparison tables in text, CSV and JSON.
//!
//! The main table has one row per method and F1 / ISA columns per dataset,
//! grouped into supervised baselines, prompt-based rows (Direct chain) and
//! CoT-based rows (THOR, SAoT). Two further views follow in text and JSON
//! output: F1 improvements over a reference baseline, and an ESA/ISA
//! breakdown per experiment.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{average_improvement, improvement_delta, EvalError, EvalReport};
use crate::chains::ChainKind;
use crate::corpus::DatasetName;
use crate::percent::Percent;

pub const BASELINE_SECTION: &str = "State-of-the-art baselines";
pub const PROMPT_SECTION: &str = "Prompt-based methods";
pub const COT_SECTION: &str = "CoT-based methods";

const DAGGER: &str = "\u{2020}";
const DEFAULT_REFERENCE: &str = "BERT_Asp+SCAPT";
const COLUMNS: [&str; 4] = ["restaurant_f1", "restaurant_isa", "laptop_f1", "laptop_isa"];
const TEXT_COLUMNS: [&str; 4] = ["Restaurant F1", "Restaurant ISA", "Laptop F1", "Laptop ISA"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Baseline {
    pub method: String,
    /// Restaurant F1, Restaurant ISA, Laptop F1, Laptop ISA.
    pub scores: [Percent; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BaselineTable {
    pub rows: Vec<Baseline>,
}

impl BaselineTable {
    /// The table shipped in `data/baselines.csv`.
    pub fn builtin() -> Self {
        Self::parse(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/data/baselines.csv")))
            .expect("bundled baseline table parses")
    }

    /// Parses a baseline CSV; lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .map(|l| format!("{l}\n"))
            .collect();
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let headers = reader.headers().map_err(|e| EvalError::Baselines(e.to_string()))?.clone();
        let expected: Vec<&str> = std::iter::once("method").chain(COLUMNS).collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(EvalError::Baselines(format!("unexpected header {headers:?}")));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| EvalError::Baselines(e.to_string()))?;
            let mut scores = [Percent::ZERO; 4];
            for (i, slot) in scores.iter_mut().enumerate() {
                *slot = record[i + 1]
                    .parse()
                    .map_err(|e| EvalError::Baselines(format!("{}: {e}", &record[0])))?;
            }
            rows.push(Baseline {
                method: record[0].to_string(),
                scores,
            });
        }
        Ok(BaselineTable { rows })
    }

    pub fn get(&self, method: &str) -> Option<&Baseline> {
        self.rows.iter().find(|b| b.method == method)
    }
}

/// One evaluated experiment: a model run through one chain on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub experiment_id: String,
    pub model: String,
    pub chain: ChainKind,
    pub dataset: DatasetName,
    pub independent_reflect: bool,
    pub report: EvalReport,
}

impl ReportEntry {
    pub fn method(&self) -> String {
        let mut m = format!("{}+{}", self.model, self.chain.display_name());
        if self.chain == ChainKind::Saot && self.independent_reflect {
            m.push_str(" (independent reflect)");
        }
        m
    }

    fn section(&self) -> &'static str {
        match self.chain {
            ChainKind::Direct => PROMPT_SECTION,
            ChainKind::Thor | ChainKind::Saot => COT_SECTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableRow {
    pub section: String,
    pub method: String,
    /// Restaurant F1, Restaurant ISA, Laptop F1, Laptop ISA.
    pub cells: [Option<Percent>; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeltaRow {
    pub method: String,
    pub restaurant: Option<Percent>,
    pub laptop: Option<Percent>,
    pub average: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub experiment_id: String,
    pub method: String,
    pub dataset: DatasetName,
    pub all_f1: Percent,
    pub esa_f1: Percent,
    pub isa_f1: Percent,
    pub esa_support: u64,
    pub isa_support: u64,
    pub unparseable_rate: Percent,
    pub fallback: crate::extraction::Fallback,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub rows: Vec<TableRow>,
    pub reference: Option<String>,
    pub deltas: Vec<DeltaRow>,
    pub breakdown: Vec<BreakdownRow>,
}

fn dataset_offset(d: DatasetName) -> usize {
    match d {
        DatasetName::Restaurant => 0,
        DatasetName::Laptop => 2,
    }
}

impl ReportTable {
    /// Builds the table. Entries are ordered by (section, chain, model);
    /// when two entries fill the same cell the later one wins.
    pub fn build(entries: &[ReportEntry], baselines: &BaselineTable) -> Self {
        let mut rows: Vec<TableRow> = baselines
            .rows
            .iter()
            .map(|b| TableRow {
                section: BASELINE_SECTION.to_string(),
                method: format!("{}{DAGGER}", b.method),
                cells: b.scores.map(Some),
            })
            .collect();

        let mut sorted: Vec<&ReportEntry> = entries.iter().collect();
        sorted.sort_by(|a, b| {
            (a.section() != PROMPT_SECTION, a.chain, a.method(), a.dataset, &a.experiment_id).cmp(&(
                b.section() != PROMPT_SECTION,
                b.chain,
                b.method(),
                b.dataset,
                &b.experiment_id,
            ))
        });

        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut breakdown = Vec::new();
        for e in &sorted {
            let method = e.method();
            let at = *index.entry(method.clone()).or_insert_with(|| {
                rows.push(TableRow {
                    section: e.section().to_string(),
                    method: method.clone(),
                    cells: [None; 4],
                });
                rows.len() - 1
            });
            let off = dataset_offset(e.dataset);
            rows[at].cells[off] = Some(e.report.all.metrics.macro_f1_percent());
            rows[at].cells[off + 1] = Some(e.report.isa.metrics.macro_f1_percent());
            breakdown.push(BreakdownRow {
                experiment_id: e.experiment_id.clone(),
                method,
                dataset: e.dataset,
                all_f1: e.report.all.metrics.macro_f1_percent(),
                esa_f1: e.report.esa.metrics.macro_f1_percent(),
                isa_f1: e.report.isa.metrics.macro_f1_percent(),
                esa_support: e.report.esa.metrics.support,
                isa_support: e.report.isa.metrics.support,
                unparseable_rate: Percent::from_fraction(e.report.unparseable_rate),
                fallback: e.report.fallback,
                fingerprint: e.report.fingerprint.clone(),
            });
        }

        let reference = baselines
            .get(DEFAULT_REFERENCE)
            .or_else(|| baselines.rows.last())
            .cloned();
        let deltas = match &reference {
            Some(base) => rows
                .iter()
                .filter(|r| r.section != BASELINE_SECTION)
                .map(|r| {
                    let restaurant = r.cells[0].map(|s| improvement_delta(s, base.scores[0]));
                    let laptop = r.cells[2].map(|s| improvement_delta(s, base.scores[2]));
                    let present: Vec<Percent> = restaurant.into_iter().chain(laptop).collect();
                    DeltaRow {
                        method: r.method.clone(),
                        restaurant,
                        laptop,
                        average: average_improvement(&present).ok(),
                    }
                })
                .collect(),
            None => Vec::new(),
        };

        ReportTable {
            rows,
            reference: reference.map(|b| format!("{}{DAGGER}", b.method)),
            deltas,
            breakdown,
        }
    }

    /// Main table only: `section,method,restaurant_f1,restaurant_isa,laptop_f1,laptop_isa`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header: Vec<&str> = ["section", "method"].into_iter().chain(COLUMNS).collect();
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.section.clone(), r.method.clone()];
            rec.extend(r.cells.iter().map(|c| c.map(|p| p.to_string()).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Markdown-style tables; the best value of each score column is bold.
    pub fn to_text(&self) -> String {
        let best: Vec<Option<Percent>> = (0..4)
            .map(|c| self.rows.iter().filter_map(|r| r.cells[c]).max())
            .collect();
        let mut table = Vec::new();
        let mut section = "";
        for r in &self.rows {
            if r.section != section {
                section = &r.section;
                table.push(vec![format!("- {section}"), String::new(), String::new(), String::new(), String::new()]);
            }
            let mut line = vec![r.method.clone()];
            for (c, cell) in r.cells.iter().enumerate() {
                line.push(match cell {
                    Some(p) if Some(*p) == best[c] => format!("**{p}**"),
                    Some(p) => p.to_string(),
                    None => "-".into(),
                });
            }
            table.push(line);
        }
        let mut out = String::from("Zero-shot macro-F1 (%)\n\n");
        let header: Vec<String> = std::iter::once("Method".to_string())
            .chain(TEXT_COLUMNS.iter().map(|s| s.to_string()))
            .collect();
        out.push_str(&markdown(&header, &table));

        if let Some(reference) = &self.reference {
            if !self.deltas.is_empty() {
                out.push_str(&format!("\nF1 improvement over {reference} (percentage points)\n\n"));
                let header = ["Method", "Restaurant", "Laptop", "Average"].map(String::from);
                let body: Vec<Vec<String>> = self
                    .deltas
                    .iter()
                    .map(|d| {
                        vec![
                            d.method.clone(),
                            signed(d.restaurant),
                            signed(d.laptop),
                            signed(d.average),
                        ]
                    })
                    .collect();
                out.push_str(&markdown(&header, &body));
            }
        }

        if !self.breakdown.is_empty() {
            out.push_str("\nExplicit vs implicit instances (macro-F1 %)\n\n");
            let header = ["Experiment", "Method", "Dataset", "All", "ESA", "ISA", "ESA n", "ISA n", "Unparseable %"]
                .map(String::from);
            let body: Vec<Vec<String>> = self
                .breakdown
                .iter()
                .map(|b| {
                    vec![
                        b.experiment_id.clone(),
                        b.method.clone(),
                        b.dataset.title().to_string(),
                        b.all_f1.to_string(),
                        b.esa_f1.to_string(),
                        b.isa_f1.to_string(),
                        b.esa_support.to_string(),
                        b.isa_support.to_string(),
                        b.unparseable_rate.to_string(),
                    ]
                })
                .collect();
            out.push_str(&markdown(&header, &body));
            let mut fallbacks: Vec<String> = self
                .breakdown
                .iter()
                .map(|b| serde_json::to_value(b.fallback).unwrap().as_str().unwrap_or_default().to_string())
                .collect();
            fallbacks.sort();
            fallbacks.dedup();
            out.push_str(&format!(
                "\nF1 is macro-averaged over the labels (positive/negative/neutral) present as gold or prediction; undefined precision or recall counts as 0.\n\
                 Unparseable completions: {}.\n",
                fallbacks.join(", ")
            ));
        }
        out
    }
}

fn signed(p: Option<Percent>) -> String {
    match p {
        Some(p) if p.hundredths() >= 0 => format!("+{p}"),
        Some(p) => p.to_string(),
        None => "-".into(),
    }
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let width = |c: usize| {
        rows.iter()
            .map(|r| r[c].chars().count())
            .chain(std::iter::once(header[c].chars().count()))
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..header.len()).map(width).collect();
    let fmt_row = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = fmt_row(header);
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, w)| if i == 0 { "-".repeat(*w) } else { format!("{}:", "-".repeat(w.saturating_sub(1))) })
        .collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for r in rows {
        out.push_str(&fmt_row(r));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub table: ReportTable,
    pub text: String,
    pub csv: String,
    pub json: String,
}

pub fn render_report(entries: &[ReportEntry], baselines: &BaselineTable) -> RenderedReport {
    let table = ReportTable::build(entries, baselines);
    RenderedReport {
        text: table.to_text(),
        csv: table.to_csv(),
        json: table.to_json(),
        table,
    }
}
