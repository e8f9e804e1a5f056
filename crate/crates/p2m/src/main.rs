use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use p2m::config::{LlmSpec, RunConfig, TrainerSpec};
use p2m::evaluate::{self, EmbedderChoice, EvalOptions, Metric};
use p2m::files;
use p2m::pipeline::{self, PromptSource};
use p2m::run::{RunManifest, Stage, Workspace};
use p2m::server;
use p2m_core::metrics::MatchMode;
use p2m_core::DatasetSelection;

#[derive(Parser)]
#[command(name = "p2m", version, about = "Turn a task prompt into a small trained model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WorkspaceArg {
    /// Directory holding one subdirectory per run.
    #[arg(long, env = "P2M_WORKSPACE")]
    workspace: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmKind {
    Echo,
    Script,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmMode {
    Strict,
    Normalized,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run from a prompt file and advance it.
    Run(RunArgs),
    /// Run the next stage of an existing run.
    Advance {
        run_id: String,
        #[command(flatten)]
        ws: WorkspaceArg,
        /// Keep going until the run is evaluated, failed, or waiting.
        #[arg(long)]
        all: bool,
    },
    /// Put a failed run back at its last good stage.
    Retry {
        run_id: String,
        #[command(flatten)]
        ws: WorkspaceArg,
    },
    /// Post a dataset selection for a run waiting on one.
    Select {
        run_id: String,
        #[command(flatten)]
        ws: WorkspaceArg,
        #[arg(long, required_unless_present = "none")]
        dataset: Option<String>,
        /// Comma-separated input columns, in order.
        #[arg(long, value_delimiter = ',')]
        inputs: Vec<String>,
        #[arg(long)]
        output: Option<String>,
        /// None of the candidates fit; continue with generated data only.
        #[arg(long, conflicts_with_all = ["dataset", "inputs", "output"])]
        none: bool,
    },
    /// Print a run's manifest.
    Show {
        run_id: String,
        #[command(flatten)]
        ws: WorkspaceArg,
    },
    /// Score predictions against references (JSONL files).
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "em,chrf")]
        metrics: Vec<Metric>,
        #[arg(long, value_enum, default_value = "strict")]
        exact_match: EmMode,
        /// Token embedder for BERTScore.
        #[arg(long, default_value = "none")]
        embedder: EmbedderChoice,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        ws: WorkspaceArg,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Static dashboard bundle mounted at /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Kendall's tau between two model rankings.
    Compare {
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        reports: Vec<PathBuf>,
        /// Score used when a ranking file is a list of eval reports.
        #[arg(long, default_value = "em")]
        metric: Metric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    prompt: PathBuf,
    #[command(flatten)]
    ws: WorkspaceArg,
    /// Pick the top dataset and its columns without asking.
    #[arg(long)]
    auto: bool,
    /// Unique generated inputs to aim for.
    #[arg(long)]
    target_size: Option<usize>,
    /// Most LLM requests generation may send.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Base configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    llm: Option<LlmKind>,
    /// Scripted LLM transcript; implies `--llm script`.
    #[arg(long)]
    llm_script: Option<PathBuf>,
    /// Let the LLM segment the prompt.
    #[arg(long)]
    llm_parse: bool,
    /// Directory with datasets.jsonl, models.jsonl and data/.
    #[arg(long)]
    cards: Option<PathBuf>,
    /// External trainer command, split on whitespace. Default: mock trainer.
    #[arg(long)]
    trainer_command: Option<String>,
    /// Dataset ranking embedder.
    #[arg(long)]
    embedder: Option<EmbedderChoice>,
    #[arg(long)]
    bertscore_embedder: Option<EmbedderChoice>,
    #[arg(long, value_enum)]
    exact_match: Option<EmMode>,
    /// Stop once this stage is reached.
    #[arg(long)]
    until: Option<Stage>,
}

impl From<EmMode> for MatchMode {
    fn from(m: EmMode) -> Self {
        match m {
            EmMode::Strict => MatchMode::Strict,
            EmMode::Normalized => MatchMode::Normalized,
        }
    }
}

fn build_config(a: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut c: RunConfig = match &a.config {
        Some(p) => files::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        c = c.with_seed(seed);
    }
    c.auto |= a.auto;
    if let Some(n) = a.target_size {
        c.generation.target_unique_inputs = n;
    }
    if let Some(n) = a.budget {
        c.generation.max_requests_budget = n;
    }
    match (a.llm, &a.llm_script) {
        (Some(LlmKind::Script) | None, Some(path)) => c.llm = LlmSpec::Script { path: path.clone() },
        (Some(LlmKind::Script), None) => bail!("--llm script needs --llm-script <file>"),
        (Some(_), Some(_)) => bail!("--llm-script only goes with --llm script"),
        (Some(LlmKind::Echo), None) => c.llm = LlmSpec::Echo,
        (Some(LlmKind::Http), None) => c.llm = LlmSpec::Http,
        (None, None) => {}
    }
    c.llm_prompt_parsing |= a.llm_parse;
    if let Some(dir) = &a.cards {
        c.cards_dir = Some(std::path::absolute(dir)?);
    }
    if let Some(cmd) = &a.trainer_command {
        c.trainer = TrainerSpec::Command { argv: cmd.split_whitespace().map(String::from).collect() };
    }
    if let Some(e) = a.embedder {
        c.retrieval_embedder = e;
    }
    if let Some(e) = a.bertscore_embedder {
        c.bertscore_embedder = e;
    }
    if let Some(m) = a.exact_match {
        c.exact_match_mode = m.into();
    }
    Ok(c)
}

fn report(ws: &Workspace, m: &RunManifest) -> ExitCode {
    println!("run {} at stage {}", m.run_id, m.stage);
    println!("directory {}", ws.root().join(&m.run_id).display());
    for w in &m.warnings {
        println!("warning: {w}");
    }
    if m.awaiting_selection {
        println!("waiting for a dataset selection: see dataset_candidates.json, then `p2m select`");
    }
    match &m.failure {
        Some(cause) => {
            eprintln!("failed: {cause}");
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    }
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> anyhow::Result<()> {
    if let Some(path) = out {
        files::write_json(path, value)?;
    }
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(a) => {
            let config = build_config(&a)?;
            let ws = Workspace::new(&a.ws.workspace);
            let m = pipeline::create_run(&ws, PromptSource::File(&a.prompt), config).await?;
            if m.stage == Stage::Failed {
                return Ok(report(&ws, &m));
            }
            let m = pipeline::advance_until(&ws, &m.run_id, a.until).await?;
            Ok(report(&ws, &m))
        }
        Command::Advance { run_id, ws, all } => {
            let ws = Workspace::new(ws.workspace);
            let m = if all {
                pipeline::advance_until(&ws, &run_id, None).await?
            } else {
                pipeline::advance(&ws, &run_id).await?
            };
            Ok(report(&ws, &m))
        }
        Command::Retry { run_id, ws } => {
            let ws = Workspace::new(ws.workspace);
            let m = pipeline::retry(&ws, &run_id)?;
            Ok(report(&ws, &m))
        }
        Command::Select { run_id, ws, dataset, inputs, output, none } => {
            let ws = Workspace::new(ws.workspace);
            let selection = if none {
                DatasetSelection::none_selected()
            } else {
                DatasetSelection {
                    card_id: dataset.context("--dataset is required")?,
                    input_columns: inputs,
                    output_column: output.context("--output is required")?,
                    accepted: true,
                }
            };
            let m = pipeline::post_selection(&ws, &run_id, selection).await?;
            Ok(report(&ws, &m))
        }
        Command::Show { run_id, ws } => {
            let m = Workspace::new(ws.workspace).run(&run_id)?.manifest()?;
            print_json(&m, None)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { predictions, references, metrics, exact_match, embedder, out } => {
            let preds = evaluate::read_texts(&predictions)?;
            let refs = evaluate::read_texts(&references)?;
            let opts = EvalOptions { metrics, exact_match_mode: exact_match.into(), embedder, ..EvalOptions::default() };
            let report = evaluate::score(&preds, &refs, &opts, None)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&report, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { ws, port, host, ui } => {
            let listener = server::bind(SocketAddr::new(host, port)).await?;
            eprintln!("listening on http://{}", listener.local_addr()?);
            server::serve(listener, Workspace::new(ws.workspace), ui).await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { reports, metric, out } => {
            let a = evaluate::read_ranking(&reports[0], metric)?;
            let b = evaluate::read_ranking(&reports[1], metric)?;
            print_json(&evaluate::compare(&a, &b)?, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
