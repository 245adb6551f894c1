//! Experiment orchestration: grid expansion, bounded parallel execution,
//! per-instance checkpointing, resume and reporting.
//!
//! Each experiment owns `<out>/<experiment_id>/` holding `manifest.json`,
//! `traces.jsonl`, `predictions.jsonl` and `report.{json,txt,csv}`. Records
//! are appended as instances complete, then rewritten in instance-id order
//! once the run finishes.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backend::{CachedBackend, ResponseCache};
use crate::backend::{build_backend, CompletionBackend};
use crate::chains::{run_chain, ChainContext, ChainError, ChainTrace};
use crate::corpus::{load_dataset, summarize, validate_expected, CorpusError, DatasetName, DatasetSummary, SentimentInstance, ValidationReport};
use crate::eval::{render_report, BaselineTable, RenderedReport, ReportEntry};
use crate::eval::{evaluate, EvalError, PredictionRecord};
use crate::extraction::{predict, ExtractionPolicy};

pub use config::{load_templates, DatasetSpec, ExpectedSummary, ExperimentPlan, Overrides, ReportFormat, RunConfig};
pub use manifest::{ExperimentDir, ExperimentManifest, InstanceStatus, StatusCounts};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dataset {dataset} does not match its expected distribution\n{report}")]
    DataValidation { dataset: DatasetName, report: ValidationReport },
    #[error("experiment {experiment_id} no longer matches its configuration ({reason}); start a new experiment id, for example by setting `tag`")]
    ConfigDrift { experiment_id: String, reason: String },
    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),
    #[error("experiment {experiment_id} is incomplete ({pending} pending, {failed} failed); pass --allow-partial to report it anyway")]
    Incomplete {
        experiment_id: String,
        pending: usize,
        failed: usize,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl RunError {
    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Corpus(_) | RunError::DataValidation { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub skip_validate: bool,
    /// Checked before each instance starts; in-flight instances finish.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub experiment_id: String,
    pub counts: StatusCounts,
    /// Instances attempted during this invocation.
    pub processed: usize,
    pub interrupted: bool,
}

impl RunSummary {
    /// More than 10% of instances ended Failed.
    pub fn excessive_failures(&self) -> bool {
        self.counts.failed * 10 > self.counts.total()
    }

    pub fn exit_code(&self) -> i32 {
        if self.excessive_failures() {
            3
        } else {
            0
        }
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} done, {} failed, {} pending of {} ({} processed this run{})",
            self.experiment_id,
            self.counts.done,
            self.counts.failed,
            self.counts.pending,
            self.counts.total(),
            self.processed,
            if self.interrupted { ", interrupted" } else { "" }
        )
    }
}

/// Builds the backend for one experiment.
pub type BackendFactory<'a> = dyn Fn(&ExperimentPlan) -> Result<Arc<dyn CompletionBackend>, RunError> + 'a;

/// The configured backend, behind the response cache when the plan names one.
pub fn default_backend(plan: &ExperimentPlan) -> Result<Arc<dyn CompletionBackend>, RunError> {
    let backend = build_backend(&plan.backend).map_err(|e| RunError::Config(format!("backend {}: {e}", plan.backend_name)))?;
    match &plan.cache_dir {
        None => Ok(backend),
        Some(dir) => {
            let cache = ResponseCache::open(dir).map_err(|e| RunError::Config(e.to_string()))?;
            Ok(Arc::new(CachedBackend::new(cache, backend)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetCheck {
    pub spec: DatasetSpec,
    pub summary: DatasetSummary,
    pub report: Option<ValidationReport>,
}

impl DatasetCheck {
    pub fn passed(&self) -> bool {
        self.report.as_ref().map_or(true, ValidationReport::passed)
    }
}

fn load_instances(spec: &DatasetSpec) -> Result<Vec<SentimentInstance>, RunError> {
    Ok(load_dataset(&spec.path, spec.format, spec.name, spec.implicit_flags.as_deref())?)
}

pub fn check_dataset(spec: &DatasetSpec) -> Result<DatasetCheck, RunError> {
    let summary = summarize(&load_instances(spec)?);
    let report = spec.expected.resolve(spec.name).map(|e| validate_expected(&summary, &e));
    Ok(DatasetCheck {
        spec: spec.clone(),
        summary,
        report,
    })
}

pub fn validate_data(config: &RunConfig) -> Result<Vec<DatasetCheck>, RunError> {
    config.datasets.iter().map(check_dataset).collect()
}

/// Reads a JSONL file, skipping lines that do not parse (a run killed
/// mid-write can leave a truncated last line). A missing file is empty.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RunError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => tracing::warn!(path = %path.display(), line = i + 1, error = %e, "ignoring malformed record"),
        }
    }
    Ok(out)
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<(), RunError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("record serializes");
        buf.push(b'\n');
    }
    manifest::write_atomic(path, &buf)
}

/// Keeps one record pair per Done instance (the latest), demotes Done
/// instances whose records are missing to Pending, and rewrites both files
/// in instance-id order.
fn reconcile(dir: &ExperimentDir, manifest: &mut ExperimentManifest) -> Result<BTreeMap<String, PredictionRecord>, RunError> {
    let done = |id: &str| manifest.status.get(id) == Some(&InstanceStatus::Done);
    let mut predictions: BTreeMap<String, PredictionRecord> = BTreeMap::new();
    for r in read_jsonl::<PredictionRecord>(&dir.predictions())? {
        if done(&r.instance_id) {
            predictions.insert(r.instance_id.clone(), r);
        }
    }
    let mut traces: BTreeMap<String, ChainTrace> = BTreeMap::new();
    for t in read_jsonl::<ChainTrace>(&dir.traces())? {
        if done(&t.instance_id) {
            traces.insert(t.instance_id.clone(), t);
        }
    }
    let mut demoted = false;
    for (id, status) in manifest.status.iter_mut() {
        if *status == InstanceStatus::Done && !(predictions.contains_key(id) && traces.contains_key(id)) {
            tracing::warn!(instance = %id, "records missing for a completed instance; re-running it");
            *status = InstanceStatus::Pending;
            demoted = true;
        }
    }
    predictions.retain(|id, _| manifest.status.get(id) == Some(&InstanceStatus::Done));
    traces.retain(|id, _| manifest.status.get(id) == Some(&InstanceStatus::Done));
    write_jsonl(&dir.predictions(), predictions.values())?;
    write_jsonl(&dir.traces(), traces.values())?;
    if demoted {
        manifest.store(&dir.manifest())?;
    }
    Ok(predictions)
}

/// Single writer for everything an experiment persists while running.
struct Writer<'a> {
    dir: &'a ExperimentDir,
    manifest: ExperimentManifest,
    traces: File,
    predictions: File,
    policy: &'a ExtractionPolicy,
    processed: usize,
}

fn append_line(file: &mut File, path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut line = serde_json::to_vec(value).expect("record serializes");
    line.push(b'\n');
    file.write_all(&line).map_err(|e| RunError::io(path, e))
}

impl Writer<'_> {
    fn record(&mut self, instance: &SentimentInstance, outcome: Result<ChainTrace, ChainError>) -> Result<(), RunError> {
        self.processed += 1;
        let id = instance.id.clone();
        match outcome {
            Ok(trace) => {
                let (predicted, unparseable) = predict(&trace.final_text, self.policy);
                let record = PredictionRecord {
                    instance_id: id.clone(),
                    gold: instance.gold,
                    predicted,
                    is_implicit: instance.is_implicit,
                    unparseable,
                };
                append_line(&mut self.traces, &self.dir.traces(), &trace)?;
                append_line(&mut self.predictions, &self.dir.predictions(), &record)?;
                self.manifest.failures.remove(&id);
                self.manifest.status.insert(id, InstanceStatus::Done);
            }
            Err(e) => {
                tracing::warn!(instance = %id, error = %e, "instance failed");
                self.manifest.failures.insert(id.clone(), e.to_string());
                self.manifest.status.insert(id, InstanceStatus::Failed);
            }
        }
        self.manifest.updated_at = Utc::now();
        self.manifest.store(&self.dir.manifest())
    }
}

fn open_append(path: &Path) -> Result<File, RunError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| RunError::io(path, e))
}

fn drift(plan: &ExperimentPlan, reason: impl Into<String>) -> RunError {
    RunError::ConfigDrift {
        experiment_id: plan.experiment_id.clone(),
        reason: reason.into(),
    }
}

/// Creates the experiment or continues it. Only instances that are not Done
/// are processed; a completed experiment makes no backend calls.
pub fn run_experiment(plan: &ExperimentPlan, backend: &dyn CompletionBackend, opts: &RunOptions) -> Result<RunSummary, RunError> {
    if plan.concurrency == 0 {
        return Err(RunError::Config("concurrency must be positive".into()));
    }
    let templates = load_templates(plan.templates.as_deref())?;
    templates
        .check(plan.chain, plan.independent_reflect)
        .map_err(|e| RunError::Config(format!("templates: {e}")))?;
    plan.extraction
        .validate()
        .map_err(|e| RunError::Config(format!("extraction: {e}")))?;

    let mut instances = load_instances(&plan.dataset)?;
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    let summary = summarize(&instances);
    let expected = plan.dataset.expected.resolve(plan.dataset.name);
    if let (Some(exp), false) = (expected, opts.skip_validate) {
        let report = validate_expected(&summary, &exp);
        if !report.passed() {
            return Err(RunError::DataValidation {
                dataset: plan.dataset.name,
                report,
            });
        }
    }

    let template_hash = templates.hash();
    let fingerprint = plan.fingerprint(&template_hash);
    let dir = ExperimentDir::new(&plan.output_dir, &plan.experiment_id);
    std::fs::create_dir_all(dir.root()).map_err(|e| RunError::io(dir.root(), e))?;

    let manifest = if dir.manifest().exists() {
        let mut m = ExperimentManifest::load(&dir.manifest())?;
        if m.template_set_hash != template_hash {
            return Err(drift(plan, "prompt templates changed"));
        }
        if m.fingerprint != fingerprint {
            return Err(drift(plan, "dataset, backend, chain or extraction settings changed"));
        }
        if !m.status.keys().eq(instances.iter().map(|i| &i.id)) {
            return Err(drift(plan, "dataset instance ids changed"));
        }
        m.plan = plan.clone();
        reconcile(&dir, &mut m)?;
        m
    } else {
        let now = Utc::now();
        let m = ExperimentManifest {
            experiment_id: plan.experiment_id.clone(),
            created_at: now,
            updated_at: now,
            template_set_hash: template_hash,
            fingerprint,
            dataset_summary: summary,
            expected_summary: expected,
            plan: plan.clone(),
            status: instances
                .iter()
                .map(|i| (i.id.clone(), InstanceStatus::Pending))
                .collect(),
            failures: BTreeMap::new(),
        };
        write_jsonl::<PredictionRecord>(&dir.predictions(), std::iter::empty())?;
        write_jsonl::<ChainTrace>(&dir.traces(), std::iter::empty())?;
        m
    };
    manifest.store(&dir.manifest())?;

    let pending: Vec<&SentimentInstance> = instances
        .iter()
        .filter(|i| manifest.status.get(&i.id) != Some(&InstanceStatus::Done))
        .collect();
    tracing::info!(experiment = %plan.experiment_id, pending = pending.len(), total = instances.len(), "starting");

    let decoding = plan.backend.decoding();
    let ctx = ChainContext {
        backend,
        decoding: &decoding,
        templates: &templates,
        independent_reflect: plan.independent_reflect,
    };
    let writer = Mutex::new(Writer {
        dir: &dir,
        traces: open_append(&dir.traces())?,
        predictions: open_append(&dir.predictions())?,
        manifest,
        policy: &plan.extraction,
        processed: 0,
    });
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let write_error: Mutex<Option<RunError>> = Mutex::new(None);
    let workers = plan.concurrency.min(pending.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if opts.cancelled() || abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&instance) = pending.get(i) else { break };
                let outcome = run_chain(&ctx, plan.chain, instance);
                let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
                if let Err(e) = w.record(instance, outcome) {
                    abort.store(true, Ordering::SeqCst);
                    write_error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = write_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    let Writer {
        mut manifest, processed, ..
    } = writer.into_inner().unwrap_or_else(|e| e.into_inner());

    let predictions = reconcile(&dir, &mut manifest)?;
    let counts = manifest.counts();
    let interrupted = counts.pending > 0;
    if !interrupted {
        write_reports(&dir, &manifest, &predictions)?;
    }
    let summary = RunSummary {
        experiment_id: plan.experiment_id.clone(),
        counts,
        processed,
        interrupted,
    };
    tracing::info!("{summary}");
    Ok(summary)
}

fn entry_from(manifest: &ExperimentManifest, predictions: &BTreeMap<String, PredictionRecord>) -> Result<ReportEntry, RunError> {
    let records: Vec<PredictionRecord> = predictions.values().cloned().collect();
    let plan = &manifest.plan;
    Ok(ReportEntry {
        experiment_id: manifest.experiment_id.clone(),
        model: plan.backend_name.clone(),
        chain: plan.chain,
        dataset: plan.dataset.name,
        independent_reflect: plan.independent_reflect,
        report: evaluate(&records, plan.extraction.fallback, &manifest.fingerprint)?,
    })
}

fn write_reports(dir: &ExperimentDir, manifest: &ExperimentManifest, predictions: &BTreeMap<String, PredictionRecord>) -> Result<(), RunError> {
    let entry = entry_from(manifest, predictions)?;
    let rendered = render_report(std::slice::from_ref(&entry), &BaselineTable::builtin());
    let mut json = serde_json::to_vec_pretty(&entry).expect("report serializes");
    json.push(b'\n');
    manifest::write_atomic(&dir.report("json"), &json)?;
    manifest::write_atomic(&dir.report("txt"), rendered.text.as_bytes())?;
    manifest::write_atomic(&dir.report("csv"), rendered.csv.as_bytes())
}

/// Runs every cell of the configured grid in order, stopping early when
/// cancelled.
pub fn run_all(config: &RunConfig, factory: &BackendFactory<'_>, opts: &RunOptions) -> Result<Vec<RunSummary>, RunError> {
    config.validate()?;
    let mut out = Vec::new();
    for plan in config.plans() {
        if opts.cancelled() {
            break;
        }
        let backend = factory(&plan)?;
        out.push(run_experiment(&plan, backend.as_ref(), opts)?);
    }
    Ok(out)
}

pub fn load_manifest(output_dir: &Path, experiment_id: &str) -> Result<ExperimentManifest, RunError> {
    let dir = ExperimentDir::new(output_dir, experiment_id);
    if !dir.manifest().is_file() {
        return Err(RunError::UnknownExperiment(experiment_id.to_string()));
    }
    ExperimentManifest::load(&dir.manifest())
}

/// Continues an existing experiment with its recorded configuration. When
/// `config` is given, the experiment must still match it.
pub fn resume(
    output_dir: &Path,
    experiment_id: &str,
    config: Option<&RunConfig>,
    factory: &BackendFactory<'_>,
    opts: &RunOptions,
) -> Result<RunSummary, RunError> {
    let manifest = load_manifest(output_dir, experiment_id)?;
    let mut plan = manifest.plan.clone();
    plan.output_dir = output_dir.to_path_buf();
    if let Some(config) = config {
        let current = config
            .plans()
            .into_iter()
            .find(|p| p.experiment_id == experiment_id)
            .ok_or_else(|| drift(&plan, "experiment is not part of the given configuration"))?;
        let hash = load_templates(current.templates.as_deref())?.hash();
        if current.fingerprint(&hash) != manifest.fingerprint {
            return Err(drift(&plan, "configuration differs from the recorded one"));
        }
        plan.concurrency = current.concurrency;
        plan.cache_dir = current.cache_dir;
    }
    let backend = factory(&plan)?;
    run_experiment(&plan, backend.as_ref(), opts)
}

/// Experiment ids present under `output_dir`, sorted.
pub fn list_experiments(output_dir: &Path) -> Result<Vec<String>, RunError> {
    let entries = match std::fs::read_dir(output_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RunError::io(output_dir, e)),
    };
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| RunError::io(output_dir, e))?;
        if entry.path().join("manifest.json").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Scores one experiment from its persisted predictions.
pub fn load_entry(output_dir: &Path, experiment_id: &str, allow_partial: bool) -> Result<ReportEntry, RunError> {
    let mut manifest = load_manifest(output_dir, experiment_id)?;
    let counts = manifest.counts();
    if !allow_partial && counts.done != counts.total() {
        return Err(RunError::Incomplete {
            experiment_id: experiment_id.to_string(),
            pending: counts.pending,
            failed: counts.failed,
        });
    }
    let dir = ExperimentDir::new(output_dir, experiment_id);
    let mut predictions = BTreeMap::new();
    for r in read_jsonl::<PredictionRecord>(&dir.predictions())? {
        if manifest.status.get(&r.instance_id) == Some(&InstanceStatus::Done) {
            predictions.insert(r.instance_id.clone(), r);
        }
    }
    manifest.status.retain(|id, _| predictions.contains_key(id));
    entry_from(&manifest, &predictions)
}

/// Table over the given experiments plus the baseline block. An empty id
/// list yields the baselines alone.
pub fn report(output_dir: &Path, experiment_ids: &[String], allow_partial: bool) -> Result<RenderedReport, RunError> {
    let entries = experiment_ids
        .iter()
        .map(|id| load_entry(output_dir, id, allow_partial))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(render_report(&entries, &BaselineTable::builtin()))
}
