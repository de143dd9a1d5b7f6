use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod services;

use config::Config;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "bmq", version, about = "Ontology-guided query expansion over BM25")]
struct Cli {
    /// Config file (TOML, or JSON by extension). Defaults to ./bmq.toml if present.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for every parallel stage.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or query a BM25 index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Capture the ontology records a dataset needs into a snapshot file.
    Snapshot(SnapshotArgs),
    /// Ontology context inspection.
    #[command(subcommand)]
    Context(ContextCommand),
    /// Expand a single query and show every intermediate stage.
    Expand(ExpandArgs),
    /// Expand and retrieve every query of a dataset, writing a TREC run.
    Run(RunArgs),
    /// Pipeline operations (same as the top-level `run`).
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Paraphrase a query set.
    Perturb(PerturbArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Run all five pipeline modes and tabulate the results.
    Ablate(AblateArgs),
    /// Configuration inspection.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Index a dataset's corpus.jsonl and save the index.
    Build(IndexBuildArgs),
    /// Search an index with a text query.
    Search(IndexSearchArgs),
}

#[derive(Subcommand, Debug)]
enum ContextCommand {
    /// Print the serialized definitions and relations for a query or terms.
    Dump(ContextDumpArgs),
}

#[derive(Subcommand, Debug)]
enum PipelineCommand {
    Run(RunArgs),
}

#[derive(Subcommand, Debug)]
enum ConfigCommand {
    /// Print every effective setting and where it came from.
    Show(ConfigShowArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct AnalyzerArgs {
    /// Apply Porter stemming.
    #[arg(long)]
    stem: bool,
    /// Drop English stopwords.
    #[arg(long)]
    stopwords: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct Bm25Args {
    #[arg(long, value_name = "X")]
    k1: Option<f64>,
    #[arg(long, value_name = "X")]
    b: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
struct BackendArgs {
    /// LLM backend: openai, mock:identity, mock:canned, mock:replay.
    #[arg(long, value_name = "BACKEND")]
    llm: Option<String>,
    #[arg(long, value_name = "ID")]
    model: Option<String>,
    /// Reply script for mock:canned.
    #[arg(long, value_name = "FILE")]
    llm_script: Option<String>,
    /// Generation temperature.
    #[arg(long, value_name = "T")]
    temperature: Option<f64>,
    /// Ontology backend: umls or snapshot.
    #[arg(long, value_name = "BACKEND")]
    ontology: Option<String>,
    /// Snapshot file for the snapshot backend.
    #[arg(long, value_name = "FILE")]
    snapshot: Option<String>,
    /// Root of the on-disk response caches.
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<String>,
    /// Maximum relations fetched per concept.
    #[arg(long, value_name = "N")]
    edge_cap: Option<usize>,
    /// Ignore cached responses and overwrite them.
    #[arg(long)]
    refresh: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct PipelineArgs {
    /// plain_bm25, no_llm, definitions_only, relations_only or full.
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// Repetitions of the original query (default 5, or 50 for no_llm).
    #[arg(long, value_name = "N")]
    alpha: Option<u32>,
    /// Ask for a rationale before the answer.
    #[arg(long)]
    cot: bool,
    /// Documents retrieved per query.
    #[arg(long = "top-k", value_name = "K")]
    top_k: Option<usize>,
    #[command(flatten)]
    bm25: Bm25Args,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// BEIR-layout dataset directory.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Queries file, overriding <dataset>/queries.jsonl.
    #[arg(long, value_name = "FILE")]
    queries: Option<PathBuf>,
    /// Saved index, instead of indexing <dataset>/corpus.jsonl.
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IndexBuildArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Output file (default <dataset>/index.bmq).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    analyzer: AnalyzerArgs,
}

#[derive(Args, Debug)]
struct IndexSearchArgs {
    #[arg(long, value_name = "FILE", required_unless_present = "dataset")]
    index: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    query: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    analyzer: AnalyzerArgs,
    #[command(flatten)]
    bm25: Bm25Args,
}

#[derive(Args, Debug)]
struct SnapshotArgs {
    /// Extract terms from this dataset's queries with the LLM.
    #[arg(long, value_name = "DIR", conflicts_with = "terms_file")]
    dataset: Option<PathBuf>,
    /// Queries file to extract terms from.
    #[arg(long, value_name = "FILE", conflicts_with = "terms_file")]
    queries: Option<PathBuf>,
    /// Plain list of terms, one per line.
    #[arg(long, value_name = "FILE")]
    terms_file: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Args, Debug)]
struct ContextDumpArgs {
    #[arg(long, required_unless_present = "terms")]
    query: Option<String>,
    /// Comma-separated terms, bypassing LLM extraction.
    #[arg(long, value_delimiter = ',')]
    terms: Option<Vec<String>>,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Default)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Args, Debug)]
struct ExpandArgs {
    #[arg(long)]
    query: String,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Run file to write.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Evaluate the run against these qrels after writing it.
    #[arg(long, value_name = "FILE")]
    qrels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    backends: BackendArgs,
    #[command(flatten)]
    analyzer: AnalyzerArgs,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long, value_name = "DIR", required_unless_present = "queries")]
    dataset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    queries: Option<PathBuf>,
    /// Output file (default queries-p.jsonl next to the input).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Fail on the first paraphrase error instead of keeping the original.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    backends: BackendArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    run: PathBuf,
    #[arg(long, value_name = "FILE")]
    qrels: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    /// Use 2^rel - 1 gains for NDCG.
    #[arg(long)]
    exp_gain: bool,
    #[arg(long)]
    per_query: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Qrels file (default <dataset>/qrels/test.tsv).
    #[arg(long, value_name = "FILE")]
    qrels: Option<PathBuf>,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    exp_gain: bool,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Also write each mode's run file into this directory.
    #[arg(long, value_name = "DIR")]
    runs_dir: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    backends: BackendArgs,
    #[command(flatten)]
    analyzer: AnalyzerArgs,
}

#[derive(Args, Debug)]
struct ConfigShowArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    backends: BackendArgs,
    #[command(flatten)]
    analyzer: AnalyzerArgs,
}

fn bool_flag(on: bool) -> Option<String> {
    on.then(|| "true".to_string())
}

impl AnalyzerArgs {
    fn apply(&self, cfg: &mut Config) {
        cfg.set_flag("bm25.stem", "stem", bool_flag(self.stem));
        cfg.set_flag("bm25.stopwords", "stopwords", bool_flag(self.stopwords));
    }
}

impl Bm25Args {
    fn apply(&self, cfg: &mut Config) {
        cfg.set_flag("bm25.k1", "k1", self.k1.map(|v| v.to_string()));
        cfg.set_flag("bm25.b", "b", self.b.map(|v| v.to_string()));
    }
}

impl BackendArgs {
    fn apply(&self, cfg: &mut Config) {
        cfg.set_flag("llm.backend", "llm", self.llm.clone());
        cfg.set_flag("llm.model", "model", self.model.clone());
        cfg.set_flag("llm.script", "llm-script", self.llm_script.clone());
        cfg.set_flag("llm.temperature", "temperature", self.temperature.map(|v| v.to_string()));
        cfg.set_flag("ontology.backend", "ontology", self.ontology.clone());
        cfg.set_flag("ontology.snapshot", "snapshot", self.snapshot.clone());
        cfg.set_flag("pipeline.cache_dir", "cache-dir", self.cache_dir.clone());
        cfg.set_flag("ontology.edge_cap", "edge-cap", self.edge_cap.map(|v| v.to_string()));
        // a snapshot path on the command line implies the snapshot backend
        if self.snapshot.is_some() && self.ontology.is_none() {
            cfg.set_flag("ontology.backend", "snapshot", Some("snapshot".into()));
        }
    }
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut Config) {
        cfg.set_flag("pipeline.mode", "mode", self.mode.clone());
        cfg.set_flag("pipeline.alpha", "alpha", self.alpha.map(|v| v.to_string()));
        cfg.set_flag("pipeline.cot", "cot", bool_flag(self.cot));
        cfg.set_flag("pipeline.top_k", "top-k", self.top_k.map(|v| v.to_string()));
        self.bm25.apply(cfg);
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    cfg.set_flag("pipeline.jobs", "jobs", cli.jobs.map(|j| j.to_string()));
    if let Some(jobs) = cfg.get_opt::<usize>("pipeline.jobs")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size worker pool: {e}")))?;
    }
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => {
            a.analyzer.apply(&mut cfg);
            commands::index_build(&cfg, &a.dataset, a.out.as_deref())
        }
        Command::Index(IndexCommand::Search(a)) => {
            a.analyzer.apply(&mut cfg);
            a.bm25.apply(&mut cfg);
            commands::index_search(&cfg, a.index.as_deref(), a.dataset.as_deref(), &a.query, a.k)
        }
        Command::Snapshot(a) => {
            a.backends.apply(&mut cfg);
            commands::snapshot(
                &cfg,
                a.dataset.as_deref(),
                a.queries.as_deref(),
                a.terms_file.as_deref(),
                &a.out,
                a.backends.refresh,
            )
        }
        Command::Context(ContextCommand::Dump(a)) => {
            a.backends.apply(&mut cfg);
            commands::context_dump(&cfg, a.query.as_deref(), a.terms.as_deref(), a.backends.refresh)
        }
        Command::Expand(a) => {
            a.pipeline.apply(&mut cfg);
            a.backends.apply(&mut cfg);
            commands::expand(&cfg, &a.query, a.format == Format::Json, a.backends.refresh)
        }
        Command::Run(a) | Command::Pipeline(PipelineCommand::Run(a)) => {
            a.pipeline.apply(&mut cfg);
            a.backends.apply(&mut cfg);
            a.analyzer.apply(&mut cfg);
            commands::run(
                &cfg,
                &commands::DataSel {
                    dataset: a.data.dataset.as_deref(),
                    queries: a.data.queries.as_deref(),
                    index: a.data.index.as_deref(),
                },
                &a.out,
                a.qrels.as_deref(),
                a.format == Format::Json,
                a.backends.refresh,
            )
        }
        Command::Perturb(a) => {
            a.backends.apply(&mut cfg);
            commands::perturb(
                &cfg,
                a.dataset.as_deref(),
                a.queries.as_deref(),
                a.out.as_deref(),
                a.strict,
                a.backends.refresh,
            )
        }
        Command::Eval(a) => commands::eval(
            &a.run,
            &a.qrels,
            a.k,
            a.exp_gain,
            a.per_query,
            a.format == Format::Json,
        ),
        Command::Ablate(a) => {
            a.pipeline.apply(&mut cfg);
            a.backends.apply(&mut cfg);
            a.analyzer.apply(&mut cfg);
            commands::ablate(
                &cfg,
                &commands::DataSel {
                    dataset: a.data.dataset.as_deref(),
                    queries: a.data.queries.as_deref(),
                    index: a.data.index.as_deref(),
                },
                a.qrels.as_deref(),
                a.k,
                a.exp_gain,
                a.format == Format::Json,
                a.runs_dir.as_deref(),
                a.backends.refresh,
            )
        }
        Command::Config(ConfigCommand::Show(a)) => {
            a.pipeline.apply(&mut cfg);
            a.backends.apply(&mut cfg);
            a.analyzer.apply(&mut cfg);
            print!("{}", cfg.show());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flags_are_errors() {
        assert!(Cli::try_parse_from(["bmq", "eval", "--run", "r", "--qrels", "q", "--bogus"]).is_err());
    }

    #[test]
    fn pipeline_run_alias() {
        let cli = Cli::try_parse_from([
            "bmq", "pipeline", "run", "--dataset", "d", "--mode", "full", "--alpha", "5", "--cot", "--out", "run.trec",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Pipeline(PipelineCommand::Run(_))));
    }
}
