use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use forge_core::config::{PipelineConfig, ProviderKind};
use forge_core::dataset::{compute_stats, load, persist, sample_subset, SampleStrategy};
use forge_core::eval_harness::{evaluate, EvalSettings};
use forge_core::pipeline::{all_drops, run_pipeline, PipelineStage};
use forge_core::sample_factory::{harvest, merge_producers, read_pairs, write_pairs};
use forge_core::{CorpusStats, Exact, ExactCorpusStats};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "forge", version, about = "Build executable evaluation environments from Python repositories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    allow_nonpaper: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// Pipeline config to take provider and execution settings from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// replay, record or http.
    #[arg(long)]
    provider: Option<String>,
    /// Replay cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a range of pipeline stages.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "ingest")]
        from: PipelineStage,
        #[arg(long, default_value = "emit")]
        to: PipelineStage,
    },
    /// Curate repositories and extract target functions.
    Ingest(RunArgs),
    /// Compute dependency closures.
    Closure(RunArgs),
    /// Generate sandboxed scripts.
    Sandbox(RunArgs),
    /// Generate equivalence tests.
    Gentests(RunArgs),
    /// Debug and coverage-check scripts by execution.
    Verify(RunArgs),
    /// Apply the final quality gate.
    Gate(RunArgs),
    /// Write the dataset file.
    Emit(RunArgs),
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Compute averages as exact fractions.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        json: bool,
    },
    /// Draw a training subset.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "by_example")]
        strategy: SampleStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model with pass@k and optional self-repair.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: String,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long = "k", default_values_t = [1])]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        repair: usize,
        /// Machine-readable report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Every candidate with its outcome, one JSON object per line.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Rejection-sample training pairs.
    Rejsample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        producer: String,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Give each failing sample one repair round.
        #[arg(long)]
        debug: bool,
        /// Model for the repair round; defaults to the producer.
        #[arg(long)]
        debugger: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Union of pair files with per-producer counts.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if args.allow_nonpaper {
        cfg.allow_nonpaper = true;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run(args: &RunArgs, from: PipelineStage, to: PipelineStage) -> Result<()> {
    let cfg = load_config(args)?;
    let summary = run_pipeline(&cfg, from, to)?;
    let reused: Vec<&str> = PipelineStage::ALL
        .iter()
        .filter(|s| **s >= from && **s <= to && !summary.computed.contains(s))
        .map(|s| s.as_str())
        .collect();
    if !reused.is_empty() {
        eprintln!("up to date: {}", reused.join(", "));
    }
    let f = &summary.funnel;
    println!("repositories: {} in, {} accepted", f.repos.inputs, f.repos.accepted);
    for (reason, n) in &f.repos.rejected {
        println!("  rejected {reason}: {n}");
    }
    for s in &f.stages {
        println!("{:<9} {:>5} in {:>5} kept {:>5} dropped", s.stage.as_str(), s.inputs, s.survivors, s.dropped());
        for (reason, n) in &s.drops {
            println!("  {reason}: {n}");
        }
    }
    if let Some(path) = &summary.dataset {
        println!("dataset: {}", path.display());
    }
    let drops = all_drops(&cfg.workdir)?;
    let mut lines = String::new();
    for d in &drops {
        lines.push_str(&serde_json::to_string(d)?);
        lines.push('\n');
    }
    std::fs::write(cfg.workdir.join("drops.jsonl"), lines)?;
    Ok(())
}

fn provider_config(args: &ProviderArgs, model: &str) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(kind) = &args.provider {
        cfg.provider.kind = match kind.as_str() {
            "replay" => ProviderKind::Replay,
            "record" => ProviderKind::Record,
            "http" => ProviderKind::Http,
            other => bail!("unknown provider {other:?}"),
        };
    }
    if let Some(cache) = &args.cache {
        cfg.provider.cache = Some(cache.clone());
    }
    if let Some(endpoint) = &args.endpoint {
        cfg.provider.endpoint = endpoint.clone();
    }
    if let Some(t) = args.temperature {
        cfg.provider.sample_temperature = t;
    }
    cfg.provider.model = model.to_string();
    Ok(cfg)
}

fn print_stats<T: std::fmt::Display>(s: &forge_core::dataset::CorpusStats<T>) {
    println!("examples               {}", s.examples);
    println!("avg target tokens      {}", s.avg_target_tokens);
    println!("avg target lines       {}", s.avg_target_lines);
    println!("avg script tokens      {}", s.avg_script_tokens);
    println!("avg script lines       {}", s.avg_script_lines);
    println!("avg test cases         {}", s.avg_test_cases);
    match &s.avg_branch_coverage {
        Some(c) => println!("avg branch coverage    {c}"),
        None => println!("avg branch coverage    n/a"),
    }
    println!("standalone fraction    {}", s.standalone_fraction);
    println!("distinct libraries     {}", s.distinct_libraries);
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { run: args, from, to } => run(&args, from, to),
        Command::Ingest(a) => run(&a, PipelineStage::Ingest, PipelineStage::Ingest),
        Command::Closure(a) => run(&a, PipelineStage::Closure, PipelineStage::Closure),
        Command::Sandbox(a) => run(&a, PipelineStage::Sandbox, PipelineStage::Sandbox),
        Command::Gentests(a) => run(&a, PipelineStage::Gentests, PipelineStage::Gentests),
        Command::Verify(a) => run(&a, PipelineStage::Verify, PipelineStage::Verify),
        Command::Gate(a) => run(&a, PipelineStage::Gate, PipelineStage::Gate),
        Command::Emit(a) => run(&a, PipelineStage::Emit, PipelineStage::Emit),
        Command::Stats { data, exact, json } => {
            let examples = load(&data)?;
            if exact {
                let s: ExactCorpusStats = compute_stats::<Exact>(&examples)?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&exact_json(&s))?);
                } else {
                    print_stats(&s);
                }
            } else {
                let s: CorpusStats = compute_stats(&examples)?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&s)?);
                } else {
                    print_stats(&s);
                }
            }
            Ok(())
        }
        Command::Sample {
            data,
            n,
            strategy,
            seed,
            out,
        } => {
            let examples = load(&data)?;
            let subset = sample_subset(&examples, n, strategy, seed)?;
            persist(&out, &subset)?;
            let repos: std::collections::BTreeSet<&str> = subset.iter().map(|e| e.repo_id.as_str()).collect();
            println!("{} examples from {} repositories -> {}", subset.len(), repos.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            data,
            model,
            provider,
            n,
            ks,
            repair,
            out,
            candidates,
        } => {
            let examples = load(&data)?;
            let cfg = provider_config(&provider, &model)?;
            if repair > cfg.budgets.repair_cap {
                bail!("--repair {repair} exceeds the configured cap {}", cfg.budgets.repair_cap);
            }
            let gateway = cfg.provider.build()?;
            let settings = EvalSettings {
                n,
                ks,
                repair_rounds: repair,
                decode: cfg.provider.sample_decode(),
            };
            let (cands, report) = evaluate::<f64>(&examples, &gateway, &cfg.executor(), &settings)?;
            if let Some(path) = candidates {
                let mut lines = String::new();
                for c in &cands {
                    lines.push_str(&serde_json::to_string(c)?);
                    lines.push('\n');
                }
                std::fs::write(&path, lines)?;
            }
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            eprintln!("{model}: {} examples, {n} samples each", examples.len());
            for (k, v) in &report.pass_at_k {
                eprintln!("  pass@{k} = {v:.4}");
            }
            for (round, v) in report.per_round_pass1.iter().enumerate() {
                eprintln!("  round {round} pass@1 = {v:.4}");
            }
            Ok(())
        }
        Command::Rejsample {
            data,
            producer,
            provider,
            n,
            debug,
            debugger,
            out,
        } => {
            let examples = load(&data)?;
            let cfg = provider_config(&provider, &producer)?;
            let gateway = cfg.provider.build()?;
            let debug_gateway = match &debugger {
                Some(m) => Some(provider_config(&provider, m)?.provider.build()?),
                None => None,
            };
            let report = harvest(
                &examples,
                &gateway,
                debug_gateway.as_ref(),
                &cfg.executor(),
                n,
                debug,
                &cfg.provider.sample_decode(),
            );
            write_pairs(&out, &report.pairs)?;
            for (id, err) in &report.skipped {
                eprintln!("skipped {id}: {err}");
            }
            println!("{} pairs for {} examples -> {}", report.pairs.len(), examples.len(), out.display());
            Ok(())
        }
        Command::Merge { inputs, out } => {
            let sets = inputs.iter().map(|p| read_pairs(p)).collect::<forge_core::Result<Vec<_>>>()?;
            let merged = merge_producers(&sets);
            write_pairs(&out, &merged.pairs)?;
            for (model, c) in &merged.per_producer {
                println!("{model}: {} pairs, {} examples solved", c.pairs, c.solved_examples);
            }
            println!("union: {} pairs, {} examples solved", merged.pairs.len(), merged.solved_examples);
            Ok(())
        }
    }
}

fn exact_json(s: &ExactCorpusStats) -> serde_json::Value {
    serde_json::json!({
        "examples": s.examples,
        "avg_target_tokens": s.avg_target_tokens.to_string(),
        "avg_target_lines": s.avg_target_lines.to_string(),
        "avg_script_tokens": s.avg_script_tokens.to_string(),
        "avg_script_lines": s.avg_script_lines.to_string(),
        "avg_test_cases": s.avg_test_cases.to_string(),
        "avg_branch_coverage": s.avg_branch_coverage.as_ref().map(ToString::to_string),
        "standalone_fraction": s.standalone_fraction.to_string(),
        "distinct_libraries": s.distinct_libraries,
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FORGE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
