use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use saot_core::backend::{CompletionBackend, ResponseCache};
use saot_core::chains::ChainKind;
use saot_core::corpus::{DatasetFormat, DatasetName};
use saot_core::eval::RenderedReport;
use saot_core::runner::{
    self, default_backend, DatasetSpec, ExpectedSummary, ExperimentPlan, Overrides, ReportFormat, RunConfig, RunError,
    RunOptions,
};

/// Runs prompting chains for aspect-level sentiment over completion backends
/// and reports macro-F1 on all, implicit and explicit instances.
#[derive(Parser)]
#[command(name = "saot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check dataset label counts against the expected distribution.
    ValidateData(ValidateArgs),
    /// Run every configured (dataset, backend, chain) experiment.
    Run(RunArgs),
    /// Continue an interrupted experiment.
    Resume(ResumeArgs),
    /// Render results tables for finished experiments.
    Report(ReportArgs),
    /// Show response cache size.
    CacheStats(CacheArgs),
}

#[derive(Args)]
struct Filters {
    /// Restrict to these datasets.
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<DatasetName>,
    /// Restrict to these chains.
    #[arg(long, value_delimiter = ',')]
    chain: Vec<ChainKind>,
    /// Restrict to these configured backends.
    #[arg(long, value_delimiter = ',')]
    backend: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<DatasetName>,
    /// Validate a single file instead of the configured datasets.
    #[arg(long, conflicts_with = "config", requires = "name")]
    file: Option<PathBuf>,
    /// Dataset the file belongs to (selects the published distribution).
    #[arg(long)]
    name: Option<DatasetName>,
    #[arg(long, default_value = "jsonl", value_parser = parse_format)]
    file_format: DatasetFormat,
    /// Implicit-flag overlay for `--file`.
    #[arg(long)]
    flags: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    filters: Filters,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Run even if a dataset does not match its expected distribution.
    #[arg(long)]
    skip_validate: bool,
}

#[derive(Args)]
struct ResumeArgs {
    experiment_id: String,
    /// When given, the experiment must still match this config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    skip_validate: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiments to include; none gives the baseline table alone.
    experiment_ids: Vec<String>,
    /// Include every experiment under the output directory.
    #[arg(long, conflicts_with = "experiment_ids")]
    all: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Args)]
struct CacheArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<DatasetFormat, String> {
    match s {
        "jsonl" => Ok(DatasetFormat::Jsonl),
        "semeval-xml" | "xml" => Ok(DatasetFormat::SemevalXml),
        other => Err(format!("unknown dataset format {other:?} (jsonl, semeval-xml)")),
    }
}

fn usage(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

fn load_config(path: &Path) -> Result<RunConfig, RunError> {
    RunConfig::load(path)
}

fn output_dir(out: Option<PathBuf>, config: Option<&RunConfig>) -> Result<PathBuf, RunError> {
    out.or_else(|| config.map(|c| c.output_dir.clone()))
        .ok_or_else(|| usage("pass --out or --config to locate the output directory"))
}

fn print_report(rendered: &RenderedReport, format: ReportFormat) {
    match format {
        ReportFormat::Text => print!("{}", rendered.text),
        ReportFormat::Csv => print!("{}", rendered.csv),
        ReportFormat::Json => println!("{}", rendered.json),
    }
}

fn validate_data(args: ValidateArgs) -> Result<i32, RunError> {
    let checks = match (args.file, args.config) {
        (Some(path), _) => {
            let spec = DatasetSpec {
                name: args.name.ok_or_else(|| usage("--file requires --name"))?,
                path,
                format: args.file_format,
                implicit_flags: args.flags,
                expected: ExpectedSummary::default(),
            };
            vec![runner::check_dataset(&spec)?]
        }
        (None, Some(config)) => {
            let mut config = load_config(&config)?;
            config.apply(&Overrides {
                datasets: args.dataset,
                ..Default::default()
            })?;
            runner::validate_data(&config)?
        }
        (None, None) => return Err(usage("pass --config or --file")),
    };
    let mut code = 0;
    for check in &checks {
        println!("{} ({})", check.spec.name, check.spec.path.display());
        println!("  {}", check.summary);
        match &check.report {
            Some(report) => println!("{report}"),
            None => println!("  no expected distribution configured"),
        }
        if !check.passed() {
            code = 2;
        }
    }
    Ok(code)
}

fn factory(plan: &ExperimentPlan) -> Result<Arc<dyn CompletionBackend>, RunError> {
    default_backend(plan)
}

fn run(args: RunArgs) -> Result<i32, RunError> {
    let mut config = load_config(&args.config)?;
    config.apply(&Overrides {
        datasets: args.filters.dataset,
        chains: args.filters.chain,
        backends: args.filters.backend,
        concurrency: args.concurrency,
        output_dir: args.out,
        cache_dir: args.cache_dir,
        format: args.format,
    })?;
    let opts = RunOptions {
        skip_validate: args.skip_validate,
        cancel: None,
    };
    let summaries = runner::run_all(&config, &factory, &opts)?;
    let mut code = 0;
    for s in &summaries {
        println!("{s}");
        if s.excessive_failures() {
            eprintln!("{}: more than 10% of instances failed", s.experiment_id);
            code = 3;
        }
    }
    let ids: Vec<String> = summaries.iter().map(|s| s.experiment_id.clone()).collect();
    print_report(&runner::report(&config.output_dir, &ids, true)?, config.report.format);
    Ok(code)
}

fn resume(args: ResumeArgs) -> Result<i32, RunError> {
    let mut config = args.config.as_deref().map(load_config).transpose()?;
    if let Some(c) = config.as_mut() {
        c.apply(&Overrides {
            concurrency: args.concurrency,
            cache_dir: args.cache_dir.clone(),
            ..Default::default()
        })?;
    }
    let out = output_dir(args.out, config.as_ref())?;
    let concurrency = args.concurrency;
    let cache_dir = args.cache_dir;
    let factory = move |plan: &ExperimentPlan| {
        let mut plan = plan.clone();
        if let Some(c) = concurrency {
            plan.concurrency = c;
        }
        if let Some(d) = &cache_dir {
            plan.cache_dir = Some(d.clone());
        }
        default_backend(&plan)
    };
    let opts = RunOptions {
        skip_validate: args.skip_validate,
        cancel: None,
    };
    let s = runner::resume(&out, &args.experiment_id, config.as_ref(), &factory, &opts)?;
    println!("{s}");
    Ok(s.exit_code())
}

fn report(args: ReportArgs) -> Result<i32, RunError> {
    let config = args.config.as_deref().map(load_config).transpose()?;
    let out = output_dir(args.out, config.as_ref())?;
    let ids = if args.all {
        runner::list_experiments(&out)?
    } else {
        args.experiment_ids
    };
    let format = args
        .format
        .or_else(|| config.as_ref().map(|c| c.report.format))
        .unwrap_or_default();
    print_report(&runner::report(&out, &ids, args.allow_partial)?, format);
    Ok(0)
}

fn cache_stats(args: CacheArgs) -> Result<i32, RunError> {
    let config = args.config.as_deref().map(load_config).transpose()?;
    let dir = args
        .cache_dir
        .or_else(|| config.and_then(|c| c.cache_dir))
        .ok_or_else(|| usage("pass --cache-dir or a --config that sets cache_dir"))?;
    let stats = ResponseCache::open(&dir)
        .and_then(|c| c.stats())
        .map_err(|e| usage(e.to_string()))?;
    println!("cache {}", dir.display());
    println!("  entries {}", stats.entries);
    println!("  shards  {}", stats.shards);
    println!("  bytes   {}", stats.bytes);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::ValidateData(a) => validate_data(a),
        Command::Run(a) => run(a),
        Command::Resume(a) => resume(a),
        Command::Report(a) => report(a),
        Command::CacheStats(a) => cache_stats(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
