//! Declarative run configuration and its expansion into experiment plans.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendConfig;
use crate::chains::TemplateSet;
use crate::chains::ChainKind;
use crate::corpus::{DatasetFormat, DatasetName, DatasetSummary};
use crate::extraction::ExtractionPolicy;

use super::RunError;

/// Report format written next to each experiment and printed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    #[serde(default)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedKeyword {
    /// The published test-split distribution for the dataset.
    Published,
    /// No check.
    None,
}

/// Distribution a dataset must match before a run starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedSummary {
    Keyword(ExpectedKeyword),
    Explicit(DatasetSummary),
}

impl Default for ExpectedSummary {
    fn default() -> Self {
        ExpectedSummary::Keyword(ExpectedKeyword::Published)
    }
}

impl ExpectedSummary {
    pub fn resolve(&self, dataset: DatasetName) -> Option<DatasetSummary> {
        match self {
            ExpectedSummary::Keyword(ExpectedKeyword::Published) => Some(DatasetSummary::published(dataset)),
            ExpectedSummary::Keyword(ExpectedKeyword::None) => None,
            ExpectedSummary::Explicit(s) => Some(*s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub path: PathBuf,
    #[serde(default)]
    pub format: DatasetFormat,
    /// Flag overlay: one `{"id", "is_implicit"}` object per line.
    #[serde(default)]
    pub implicit_flags: Option<PathBuf>,
    #[serde(default)]
    pub expected: ExpectedSummary,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prepended to every experiment id; change it to start fresh
    /// experiments after editing templates or backends.
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Directory of template overrides; built-in templates when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub independent_reflect: bool,
    pub chains: Vec<ChainKind>,
    pub datasets: Vec<DatasetSpec>,
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub extraction: ExtractionPolicy,
    #[serde(default)]
    pub report: ReportOptions,
}

/// CLI-level narrowing and overrides applied on top of a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub datasets: Vec<DatasetName>,
    pub chains: Vec<ChainKind>,
    pub backends: Vec<String>,
    pub concurrency: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub format: Option<ReportFormat>,
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))
    }

    /// Parses a config file; relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.anchor_paths(base);
        Ok(config)
    }

    pub fn anchor_paths(&mut self, base: &Path) {
        anchor(base, &mut self.output_dir);
        if let Some(p) = self.cache_dir.as_mut() {
            anchor(base, p);
        }
        if let Some(p) = self.templates.as_mut() {
            anchor(base, p);
        }
        for d in &mut self.datasets {
            anchor(base, &mut d.path);
            if let Some(p) = d.implicit_flags.as_mut() {
                anchor(base, p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), RunError> {
        if !o.datasets.is_empty() {
            self.datasets.retain(|d| o.datasets.contains(&d.name));
            if self.datasets.is_empty() {
                return Err(config_err("no configured dataset matches --dataset"));
            }
        }
        if !o.chains.is_empty() {
            self.chains = o.chains.clone();
        }
        if !o.backends.is_empty() {
            for name in &o.backends {
                if !self.backends.contains_key(name) {
                    return Err(config_err(format!("unknown backend {name:?}")));
                }
            }
            self.backends.retain(|k, _| o.backends.contains(k));
        }
        if let Some(c) = o.concurrency {
            self.concurrency = c;
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = p.clone();
        }
        if let Some(p) = &o.cache_dir {
            self.cache_dir = Some(p.clone());
        }
        if let Some(f) = o.format {
            self.report.format = f;
        }
        Ok(())
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), RunError> {
        if self.concurrency == 0 {
            return Err(config_err("concurrency must be positive"));
        }
        if self.chains.is_empty() {
            return Err(config_err("no chains configured"));
        }
        if self.datasets.is_empty() {
            return Err(config_err("no datasets configured"));
        }
        if self.backends.is_empty() {
            return Err(config_err("no backends configured"));
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name) {
                return Err(config_err(format!("dataset {} listed twice", d.name)));
            }
            if !d.path.is_file() {
                return Err(config_err(format!("dataset file {} not found", d.path.display())));
            }
            if let Some(f) = &d.implicit_flags {
                if !f.is_file() {
                    return Err(config_err(format!("flag file {} not found", f.display())));
                }
            }
        }
        for (name, b) in &self.backends {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(config_err(format!("invalid backend name {name:?}")));
            }
            b.validate().map_err(|e| config_err(format!("backend {name}: {e}")))?;
        }
        self.extraction
            .validate()
            .map_err(|e| config_err(format!("extraction: {e}")))?;
        let templates = load_templates(self.templates.as_deref())?;
        for &chain in &self.chains {
            templates
                .check(chain, self.independent_reflect)
                .map_err(|e| config_err(format!("templates: {e}")))?;
        }
        Ok(())
    }

    /// One plan per (dataset, backend, chain) cell, in that nesting order.
    pub fn plans(&self) -> Vec<ExperimentPlan> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for (backend_name, backend) in &self.backends {
                for &chain in &self.chains {
                    let independent = self.independent_reflect && chain == ChainKind::Saot;
                    let mut id = format!("{}-{}-{}", d.name, backend_name, chain);
                    if independent {
                        id.push_str("-indep");
                    }
                    if let Some(tag) = &self.tag {
                        id = format!("{tag}-{id}");
                    }
                    out.push(ExperimentPlan {
                        experiment_id: id,
                        dataset: d.clone(),
                        chain,
                        backend_name: backend_name.clone(),
                        backend: backend.clone(),
                        templates: self.templates.clone(),
                        independent_reflect: independent,
                        extraction: self.extraction.clone(),
                        concurrency: self.concurrency,
                        cache_dir: self.cache_dir.clone(),
                        output_dir: self.output_dir.clone(),
                        report_format: self.report.format,
                    });
                }
            }
        }
        out
    }
}

pub fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, RunError> {
    match dir {
        None => Ok(TemplateSet::builtin()),
        Some(d) => TemplateSet::load_dir(d).map_err(|e| config_err(format!("templates: {e}"))),
    }
}

/// Effective configuration of a single experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub experiment_id: String,
    pub dataset: DatasetSpec,
    pub chain: ChainKind,
    pub backend_name: String,
    pub backend: BackendConfig,
    pub templates: Option<PathBuf>,
    pub independent_reflect: bool,
    pub extraction: ExtractionPolicy,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub report_format: ReportFormat,
}

#[derive(Serialize)]
struct FingerprintMaterial<'a> {
    dataset: &'a DatasetSpec,
    chain: ChainKind,
    backend_name: &'a str,
    backend: &'a BackendConfig,
    independent_reflect: bool,
    extraction: &'a ExtractionPolicy,
    template_set_hash: &'a str,
}

impl ExperimentPlan {
    pub fn dir(&self) -> PathBuf {
        self.output_dir.join(&self.experiment_id)
    }

    /// Hash of everything that affects predictions. Concurrency and the
    /// output and cache locations are excluded.
    pub fn fingerprint(&self, template_set_hash: &str) -> String {
        let material = FingerprintMaterial {
            dataset: &self.dataset,
            chain: self.chain,
            backend_name: &self.backend_name,
            backend: &self.backend,
            independent_reflect: self.independent_reflect,
            extraction: &self.extraction,
            template_set_hash,
        };
        let bytes = serde_json::to_vec(&material).expect("plan serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
