//! Prompt chains.
//!
//! - **Direct**: one prompt, one answer.
//! - **THOR**: three sequential hops (aspect, opinion, polarity); each hop's
//!   answer is available to later hops as `{hop1}` / `{hop2}`.
//! - **SAoT**: an analysis prompt and a reflection prompt, whose outputs are
//!   both embedded (analysis first, then reflection) in a final inference
//!   prompt.
//!
//! Steps inside one chain always run sequentially.

mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionBackend, DecodingParams};
use crate::corpus::SentimentInstance;

pub use template::{render, PromptTemplate, TemplateError, TemplateSet, PLACEHOLDERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    Direct,
    Thor,
    Saot,
}

impl ChainKind {
    pub const ALL: [ChainKind; 3] = [ChainKind::Direct, ChainKind::Thor, ChainKind::Saot];

    pub fn as_str(self) -> &'static str {
        match self {
            ChainKind::Direct => "direct",
            ChainKind::Thor => "thor",
            ChainKind::Saot => "saot",
        }
    }

    /// Backend calls made for one instance.
    pub fn calls_per_instance(self) -> usize {
        match self {
            ChainKind::Direct => 1,
            ChainKind::Thor | ChainKind::Saot => 3,
        }
    }

    /// Method suffix used in report rows, e.g. `Flan-T5+THOR`.
    pub fn display_name(self) -> &'static str {
        match self {
            ChainKind::Direct => "Prompt",
            ChainKind::Thor => "THOR",
            ChainKind::Saot => "SAoT",
        }
    }
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(ChainKind::Direct),
            "thor" => Ok(ChainKind::Thor),
            "saot" => Ok(ChainKind::Saot),
            other => Err(format!("unknown chain {other:?} (expected direct, thor or saot)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub step_name: String,
    pub prompt: String,
    pub response: String,
    #[serde(default)]
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub instance_id: String,
    pub chain: ChainKind,
    pub steps: Vec<ChainStep>,
    pub final_text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StepFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// A chain that stopped early. `partial` holds the steps that completed.
#[derive(Debug, thiserror::Error)]
#[error("instance {instance_id}: {chain} step {step:?} failed: {source}")]
pub struct ChainError {
    pub instance_id: String,
    pub chain: ChainKind,
    pub step: String,
    #[source]
    pub source: StepFailure,
    pub partial: ChainTrace,
}

/// Everything a chain needs besides the instance.
#[derive(Clone, Copy)]
pub struct ChainContext<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub decoding: &'a DecodingParams,
    pub templates: &'a TemplateSet,
    /// Reflect without seeing the analysis.
    pub independent_reflect: bool,
}

struct Recorder<'c, 'a> {
    ctx: &'c ChainContext<'a>,
    trace: ChainTrace,
}

impl<'c, 'a> Recorder<'c, 'a> {
    fn new(ctx: &'c ChainContext<'a>, chain: ChainKind, instance: &SentimentInstance) -> Self {
        Recorder {
            ctx,
            trace: ChainTrace {
                instance_id: instance.id.clone(),
                chain,
                steps: Vec::new(),
                final_text: String::new(),
            },
        }
    }

    fn step(&mut self, step_name: &str, template: &str, vars: &BTreeMap<&str, String>) -> Result<String, ChainError> {
        let result = self
            .ctx
            .templates
            .get(template)
            .and_then(|t| t.render(vars))
            .map_err(StepFailure::from)
            .and_then(|prompt| {
                let resp = self.ctx.backend.complete(&self.ctx.decoding.request(prompt.clone()))?;
                Ok((prompt, resp))
            });
        match result {
            Ok((prompt, resp)) => {
                self.trace.steps.push(ChainStep {
                    step_name: step_name.to_string(),
                    prompt,
                    response: resp.text.clone(),
                    from_cache: resp.from_cache,
                });
                Ok(resp.text)
            }
            Err(source) => Err(ChainError {
                instance_id: self.trace.instance_id.clone(),
                chain: self.trace.chain,
                step: step_name.to_string(),
                source,
                partial: self.trace.clone(),
            }),
        }
    }

    fn finish(mut self, final_text: String) -> ChainTrace {
        self.trace.final_text = final_text;
        self.trace
    }
}

fn base_vars(instance: &SentimentInstance) -> BTreeMap<&'static str, String> {
    BTreeMap::from([("sentence", instance.text.clone()), ("target", instance.target.clone())])
}

pub fn run_direct(ctx: &ChainContext<'_>, instance: &SentimentInstance) -> Result<ChainTrace, ChainError> {
    let mut rec = Recorder::new(ctx, ChainKind::Direct, instance);
    let answer = rec.step("direct", "direct", &base_vars(instance))?;
    Ok(rec.finish(answer))
}

pub fn run_thor(ctx: &ChainContext<'_>, instance: &SentimentInstance) -> Result<ChainTrace, ChainError> {
    let mut rec = Recorder::new(ctx, ChainKind::Thor, instance);
    let mut vars = base_vars(instance);
    let aspect = rec.step("aspect", "thor_aspect", &vars)?;
    vars.insert("hop1", aspect);
    let opinion = rec.step("opinion", "thor_opinion", &vars)?;
    vars.insert("hop2", opinion);
    let polarity = rec.step("polarity", "thor_polarity", &vars)?;
    Ok(rec.finish(polarity))
}

pub fn run_saot(ctx: &ChainContext<'_>, instance: &SentimentInstance) -> Result<ChainTrace, ChainError> {
    let mut rec = Recorder::new(ctx, ChainKind::Saot, instance);
    let base = base_vars(instance);
    let analysis = rec.step("analyze", "saot_analyze", &base)?;

    let reflect_template = ctx.templates.reflect_template_name(ctx.independent_reflect);
    let reflection = if ctx.independent_reflect {
        rec.step("reflect", reflect_template, &base)?
    } else {
        let mut vars = base.clone();
        vars.insert("analysis", analysis.clone());
        rec.step("reflect", reflect_template, &vars)?
    };

    let mut vars = base;
    vars.insert("analysis", analysis);
    vars.insert("reflection", reflection);
    let answer = rec.step("infer", "saot_infer", &vars)?;
    Ok(rec.finish(answer))
}

pub fn run_chain(ctx: &ChainContext<'_>, chain: ChainKind, instance: &SentimentInstance) -> Result<ChainTrace, ChainError> {
    match chain {
        ChainKind::Direct => run_direct(ctx, instance),
        ChainKind::Thor => run_thor(ctx, instance),
        ChainKind::Saot => run_saot(ctx, instance),
    }
}

/// One trace per line.
pub fn traces_to_jsonl(traces: &[ChainTrace]) -> String {
    traces
        .iter()
        .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
        .collect()
}

pub fn traces_from_jsonl(text: &str) -> Result<Vec<ChainTrace>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
