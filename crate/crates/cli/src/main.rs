use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use caf_core::graph::build_call_tree;
use caf_core::ingest::{parse_file, PythonGrammar};
use caf_core::mix::{Alpha, MixPolicy};
use caf_core::pipeline::{
    analyze_directory, load_config, sample_roots, ConfigError, FieldDiagnostic, Pipeline,
    PipelineError, RunConfig, RunMode, Stage,
};
use clap::{Args, Parser, Subcommand};

/// Builds code-autoformalisation training data from a corpus of Python
/// repositories.
#[derive(Debug, Parser)]
#[command(name = "caf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List repositories, sources and READMEs under the corpus root.
    Scan(RunArgs),
    /// Parse sources and build per-repository call graphs.
    Analyze(RunArgs),
    /// Apply the depth and sibling policy to each repository.
    Filter(RunArgs),
    /// Pick or generate a description for every sample root.
    Augment(RunArgs),
    /// Write the code and math sample pools.
    Assemble(RunArgs),
    /// Interleave the pools into the training stream.
    Mix(RunArgs),
    /// Write corpus metrics and histograms.
    Stats(RunArgs),
    /// Run every stage in order.
    Run(RunArgs),
    /// Print the call trees of one repository directory.
    Tree {
        repo: PathBuf,
        /// Only this qualified function name.
        #[arg(long)]
        root: Option<String>,
    },
    /// Print the analysis of one source file as JSON.
    Parse { file: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Never contact the summarization endpoint.
    #[arg(long)]
    cache_only: bool,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Math fraction of the stream, as a decimal or a fraction like 3/4.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stream length; defaults to the largest the pools allow.
    #[arg(long)]
    total: Option<usize>,
    /// exact-quota or bernoulli.
    #[arg(long)]
    policy: Option<String>,
    /// aligned, math-only or code-only.
    #[arg(long)]
    mode: Option<String>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = load_config(&self.config)?;
        let mut diagnostics = Vec::new();
        let mut invalid = |field: &str, message: String| {
            diagnostics.push(FieldDiagnostic {
                field: field.into(),
                message,
            })
        };
        if self.cache_only {
            cfg.summarizer.cache_only = true;
        }
        if let Some(n) = self.workers {
            cfg.parallelism = n;
        }
        if let Some(alpha) = &self.alpha {
            match alpha.parse::<Alpha>() {
                Ok(a) => cfg.mix.alpha = a,
                Err(e) => invalid("mix.alpha", e.to_string()),
            }
        }
        if let Some(seed) = self.seed {
            cfg.mix.seed = seed;
        }
        if self.total.is_some() {
            cfg.mix.total = self.total;
        }
        if let Some(policy) = &self.policy {
            match policy.parse::<MixPolicy>() {
                Ok(p) => cfg.mix.policy = p,
                Err(e) => invalid("mix.policy", e),
            }
        }
        if let Some(mode) = &self.mode {
            match serde_json::from_value::<RunMode>(mode.as_str().into()) {
                Ok(m) => cfg.mode = m,
                Err(_) => invalid("mode", format!("unknown mode {mode:?}")),
            }
        }
        if !diagnostics.is_empty() {
            return Err(ConfigError { diagnostics }.into());
        }
        Ok(cfg)
    }
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> anyhow::Result<()> {
    let manifest = Pipeline::new(args.config()?)?.run(stages)?;
    let summary: Vec<serde_json::Value> = manifest
        .executed
        .iter()
        .map(|run| {
            let counts = manifest.stage(run.stage).map(|r| &r.counts);
            serde_json::json!({ "stage": run.stage, "noop": run.noop, "counts": counts })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn print_trees(repo: &Path, only: Option<&str>) -> anyhow::Result<()> {
    if !repo.is_dir() {
        bail!("{} is not a directory", repo.display());
    }
    let analysis = analyze_directory(repo)?;
    let roots = match only {
        Some(root) => vec![root.to_string()],
        None => sample_roots(&analysis.graph),
    };
    for (i, root) in roots.iter().enumerate() {
        let tree = build_call_tree(&analysis.graph, root)?;
        if i > 0 {
            println!();
        }
        print!("{}", tree.render());
    }
    Ok(())
}

fn print_analysis(file: &Path) -> anyhow::Result<()> {
    let source =
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let name = file.file_name().map(Path::new).unwrap_or(file);
    let analysis = parse_file(&source, &name.to_string_lossy(), &PythonGrammar)?;
    println!("{}", analysis.to_json());
    Ok(())
}

fn execute(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Scan(a) => run_stages(a, &[Stage::Scan]),
        Command::Analyze(a) => run_stages(a, &[Stage::Analyze]),
        Command::Filter(a) => run_stages(a, &[Stage::Filter]),
        Command::Augment(a) => run_stages(a, &[Stage::Augment]),
        Command::Assemble(a) => run_stages(a, &[Stage::Assemble]),
        Command::Mix(a) => run_stages(a, &[Stage::Mix]),
        Command::Stats(a) => run_stages(a, &[Stage::Stats]),
        Command::Run(a) => run_stages(a, &Stage::ALL),
        Command::Tree { repo, root } => print_trees(repo, root.as_deref()),
        Command::Parse { file } => print_analysis(file),
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    if let Some(e) = err.downcast_ref::<PipelineError>() {
        return e.to_json();
    }
    if let Some(e) = err.downcast_ref::<ConfigError>() {
        return PipelineError::ConfigInvalid(e.clone()).to_json();
    }
    serde_json::json!({ "error": "Failure", "message": format!("{err:#}") })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let json = serde_json::json!({ "error": "Usage", "message": e.to_string().trim() });
            eprintln!("{json}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
