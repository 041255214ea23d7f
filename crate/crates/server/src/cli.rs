//! The `qgen` command line.

use crate::error::ApiError;
use crate::ops::{self, CompareRequest, Context, CreateGroup, GenerateRequest, IngestDocument, PairsQuery, TrainRequest};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qgen_core::chunker::{chunk_document, ChunkConfig};
use qgen_core::corpus::{self, SourceKind};
use qgen_core::datastore::{SplitSpec, Store};
use qgen_core::explorer::{CompareOptions, ModelRef, DEFAULT_CONTEXT_TOKENS};
use qgen_core::llm_gateway::{Gateway, ProviderConfig};
use qgen_core::metrics::{self, MetricName};
use qgen_core::promptkit::{GenerationConfig, PromptMode};
use qgen_core::trainjobs::{JobState, TrainingParams};
use serde_json::{json, Value};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;
use tracing::info;

#[derive(Debug, Parser)]
#[command(name = "qgen", version, about = "Generate, score and export question-answer datasets")]
pub struct Cli {
    /// Workspace directory holding all records.
    #[arg(long, env = "QGEN_WORKSPACE", global = true)]
    pub workspace: Option<PathBuf>,
    /// Address for `serve`.
    #[arg(long, env = "QGEN_LISTEN", global = true, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Trainer command template, e.g. "trainer --data {data} --model {model} --lr {lr}".
    #[arg(long, env = "QGEN_TRAIN_CMD", global = true)]
    pub train_cmd: Option<String>,
    /// Write the JSON result to this file instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// JSON file with an array of provider configs to register.
    #[arg(long, global = true)]
    pub providers: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a file into a document of a group.
    Ingest(IngestArgs),
    /// Show how a document would be chunked.
    Chunk(ChunkArgs),
    /// Generate a scored dataset for a group.
    Generate(GenerateArgs),
    /// List a dataset's pairs with metric filters, or score one text pair.
    Score(ScoreArgs),
    /// Write train/valid/test files for a dataset.
    Export(ExportArgs),
    /// Run the external trainer on an export and wait for it.
    Train(TrainArgs),
    /// Ask two providers the same question about a document.
    Compare(CompareArgs),
    /// Serve the HTTP API.
    Serve,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Markdown,
    PlainText,
    StructuredJson,
}

impl From<KindArg> for SourceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Markdown => SourceKind::Markdown,
            KindArg::PlainText => SourceKind::PlainText,
            KindArg::StructuredJson => SourceKind::StructuredJson,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Group id or name.
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub file: PathBuf,
    /// Defaults to the file stem.
    #[arg(long)]
    pub title: Option<String>,
    /// Defaults from the file extension (.md, .json, anything else is plain text).
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Create the group (named `--group`) if it does not exist.
    #[arg(long)]
    pub create_group: bool,
}

#[derive(Debug, Args)]
pub struct ChunkFlags {
    #[arg(long, default_value_t = 300)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 30)]
    pub overlap: usize,
    #[arg(long)]
    pub no_headings: bool,
}

impl ChunkFlags {
    fn config(&self) -> Result<ChunkConfig, ApiError> {
        ChunkConfig::new(self.max_tokens, self.overlap, !self.no_headings).map_err(|e| ApiError::validation(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    #[arg(long)]
    pub doc: String,
    #[command(flatten)]
    pub chunking: ChunkFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Group id or name.
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub provider: String,
    #[arg(long, default_value_t = 3)]
    pub questions: usize,
    #[arg(long, value_enum, default_value = "zero-shot")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub num_examples: usize,
    #[arg(long, default_value_t = 0.2)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1024)]
    pub max_output_tokens: u32,
    /// Comma-separated metric names; all metrics when omitted.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub chunking: ChunkFlags,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Dataset whose pairs to list.
    #[arg(long, conflicts_with_all = ["candidate", "reference"])]
    pub dataset: Option<String>,
    /// Metric filter, e.g. "combined.bleu2 > 0.8".
    #[arg(long, requires = "dataset")]
    pub filter: Option<String>,
    /// Sort key, e.g. "answer.meteor:desc".
    #[arg(long, requires = "dataset")]
    pub sort: Option<String>,
    /// Candidate text to score directly.
    #[arg(long, requires = "reference")]
    pub candidate: Option<String>,
    #[arg(long, requires = "candidate")]
    pub reference: Option<String>,
    /// Extra idf corpus texts (the reference is always included).
    #[arg(long)]
    pub corpus: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long, default_value_t = 0.1)]
    pub valid: f64,
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub include_context: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Export id (under the workspace) or export directory path.
    #[arg(long)]
    pub export: String,
    #[arg(long)]
    pub base_model: String,
    #[arg(long)]
    pub lr: f64,
    #[arg(long)]
    pub iters: u64,
    #[arg(long, default_value_t = 16)]
    pub lora_layers: u32,
    #[arg(long, default_value_t = 4)]
    pub batch: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub doc: String,
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub model_a: String,
    #[arg(long)]
    pub model_b: String,
    #[arg(long)]
    pub adapter_a: Option<String>,
    #[arg(long)]
    pub adapter_b: Option<String>,
    /// Also score both answers against the best-matching chunk.
    #[arg(long)]
    pub score: bool,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_TOKENS)]
    pub context_tokens: usize,
}

fn usage(message: impl Into<String>) -> ApiError {
    ApiError::new(2, "usage_error", message)
}

fn read_file(path: &Path) -> Result<Vec<u8>, ApiError> {
    std::fs::read(path).map_err(|e| ApiError::validation(format!("cannot read {}: {e}", path.display())))
}

/// Load `--providers FILE` into a gateway.
pub fn load_gateway(providers: Option<&Path>) -> Result<Gateway, ApiError> {
    let gateway = Gateway::new();
    if let Some(path) = providers {
        let configs: Vec<ProviderConfig> = serde_json::from_slice(&read_file(path)?)
            .map_err(|e| ApiError::validation(format!("invalid providers file {}: {e}", path.display())))?;
        for cfg in configs {
            gateway.register_provider(cfg)?;
        }
    }
    Ok(gateway)
}

fn kind_for(path: &Path) -> SourceKind {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("md" | "markdown") => SourceKind::Markdown,
        Some("json") => SourceKind::StructuredJson,
        _ => SourceKind::PlainText,
    }
}

fn ingest(store: &Store, args: &IngestArgs) -> Result<Value, ApiError> {
    let group = match corpus::find_group(store, &args.group)? {
        Some(g) => g,
        None if args.create_group => ops::create_group(
            store,
            &CreateGroup {
                name: args.group.clone(),
            },
        )?,
        None => return Err(ApiError::not_found(format!("group '{}' not found", args.group))),
    };
    let bytes = read_file(&args.file)?;
    let content = String::from_utf8(bytes).map_err(|e| {
        ApiError::new(422, "parse_error", format!("{} is not valid UTF-8", args.file.display()))
            .with_details(json!({"position": {"offset": e.utf8_error().valid_up_to()}}))
    })?;
    let title = match &args.title {
        Some(t) => t.clone(),
        None => args
            .file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("document")
            .to_string(),
    };
    let req = IngestDocument {
        title,
        source_kind: args.kind.map(SourceKind::from).unwrap_or_else(|| kind_for(&args.file)),
        content,
    };
    to_value(ops::ingest(store, &group.group_id, &req)?)
}

fn generation_request(store: &Store, args: &GenerateArgs) -> Result<GenerateRequest, ApiError> {
    let group = ops::resolve_group(store, &args.group)?;
    let mut config = GenerationConfig::new(args.provider.clone());
    config.chunk_config = args.chunking.config()?;
    config.questions_per_chunk = args.questions;
    config.prompt_mode = match args.mode {
        ModeArg::ZeroShot => PromptMode::ZeroShot,
        ModeArg::FewShot => PromptMode::FewShot,
    };
    config.num_examples = args.num_examples;
    config.temperature = args.temperature;
    config.max_output_tokens = args.max_output_tokens;
    config.seed = args.seed;
    if !args.metrics.is_empty() {
        config.metrics = args
            .metrics
            .iter()
            .map(|m| m.trim().parse::<MetricName>())
            .collect::<Result<_, _>>()?;
    }
    Ok(GenerateRequest {
        group_id: group.group_id,
        config,
    })
}

fn score(store: &Store, args: &ScoreArgs) -> Result<Value, ApiError> {
    if let Some(dataset) = &args.dataset {
        let query = PairsQuery {
            filter: args.filter.clone(),
            sort: args.sort.clone(),
        };
        return to_value(ops::pairs(store, dataset, &query)?);
    }
    let (Some(candidate), Some(reference)) = (&args.candidate, &args.reference) else {
        return Err(usage("give --dataset, or --candidate with --reference"));
    };
    let mut corpus: Vec<&str> = vec![reference.as_str()];
    corpus.extend(args.corpus.iter().map(String::as_str));
    let rouge = metrics::rouge(candidate, reference)?;
    let mut out = serde_json::Map::new();
    for n in 1..=4 {
        out.insert(format!("bleu{n}"), json!(metrics::bleu_n(candidate, reference, n)?));
    }
    out.insert("rouge1_f".into(), json!(rouge.rouge1_f));
    out.insert("rouge2_f".into(), json!(rouge.rouge2_f));
    out.insert("rougeL_f".into(), json!(rouge.rouge_l_f));
    out.insert("meteor".into(), json!(metrics::meteor_simple(candidate, reference)?));
    out.insert("tfidf_cosine".into(), json!(metrics::tfidf_cosine(candidate, reference, &corpus)?));
    out.insert("count_cosine".into(), json!(metrics::count_cosine(candidate, reference)?));
    Ok(Value::Object(out))
}

fn train_request(args: &TrainArgs) -> TrainRequest {
    let as_id = !args.export.is_empty()
        && args.export.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !Path::new(&args.export).exists();
    TrainRequest {
        export_id: as_id.then(|| args.export.clone()),
        export_dir: (!as_id).then(|| PathBuf::from(&args.export)),
        params: TrainingParams {
            base_model: args.base_model.clone(),
            learning_rate: args.lr,
            iterations: args.iters,
            lora_layers: args.lora_layers,
            batch_size: args.batch,
            adapter_output_dir: args.out.clone(),
        },
        command_template: None,
    }
}

fn to_value<T: serde::Serialize>(value: T) -> Result<Value, ApiError> {
    serde_json::to_value(value).map_err(|e| ApiError::internal(e.to_string()))
}

/// Execute a parsed command line, writing its JSON result.
pub async fn run(cli: Cli) -> Result<(), ApiError> {
    let workspace = cli
        .workspace
        .clone()
        .ok_or_else(|| usage("--workspace (or QGEN_WORKSPACE) is required"))?;
    let store = Store::open(&workspace)?;
    let value = match &cli.command {
        Command::Ingest(args) => ingest(&store, args)?,
        Command::Chunk(args) => {
            let doc = corpus::get_document(&store, &args.doc)?;
            to_value(chunk_document(&doc, &args.chunking.config()?))?
        }
        Command::Generate(args) => {
            let req = generation_request(&store, args)?;
            let ctx = Context::new(store, load_gateway(cli.providers.as_deref())?, None)?;
            to_value(ops::generate(&ctx, &req).await?)?
        }
        Command::Score(args) => score(&store, args)?,
        Command::Export(args) => {
            let spec = SplitSpec {
                test_fraction: args.test,
                valid_fraction: args.valid,
                shuffle: args.shuffle,
                seed: args.seed,
                include_context: args.include_context,
            };
            to_value(ops::export(&store, &args.dataset, &spec)?)?
        }
        Command::Train(args) => {
            let ctx = Context::new(store, Gateway::new(), cli.train_cmd.clone())?;
            let job = ops::train(&ctx, &train_request(args))?;
            let mut job = ctx.jobs.wait(&job.job_id, Duration::from_secs(3600))?;
            while ctx.jobs.is_active(&job.job_id) {
                job = ctx.jobs.wait(&job.job_id, Duration::from_secs(3600))?;
            }
            let failed = job.state != JobState::Completed;
            let value = to_value(&job)?;
            if failed {
                return Err(ApiError::new(422, "spawn_error", format!("training job {} ended {:?}", job.job_id, job.state))
                    .with_details(value));
            }
            value
        }
        Command::Compare(args) => {
            let ctx = Context::new(store, load_gateway(cli.providers.as_deref())?, None)?;
            let req = CompareRequest {
                doc_id: args.doc.clone(),
                question: args.question.clone(),
                model_a: ModelRef {
                    provider_id: args.model_a.clone(),
                    adapter: args.adapter_a.clone(),
                },
                model_b: ModelRef {
                    provider_id: args.model_b.clone(),
                    adapter: args.adapter_b.clone(),
                },
                opts: CompareOptions {
                    score: args.score,
                    context_tokens: args.context_tokens,
                    ..CompareOptions::default()
                },
            };
            to_value(ops::compare(&ctx, &req).await?)?
        }
        Command::Serve => {
            let ctx = Context::new(store, load_gateway(cli.providers.as_deref())?, cli.train_cmd.clone())?;
            return serve(ctx, &cli.listen).await;
        }
    };
    emit(&value, cli.output.as_deref())
}

fn emit(value: &Value, output: Option<&Path>) -> Result<(), ApiError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ApiError::internal(e.to_string()))?;
    text.push('\n');
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| ApiError::internal(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| ApiError::internal(e.to_string())),
    }
}

/// Bind and serve until interrupted.
pub async fn serve(ctx: Context, listen: &str) -> Result<(), ApiError> {
    // Fail fast when another process holds the workspace writer lock.
    ctx.store.write(|_| Ok::<_, qgen_core::datastore::StoreError>(()))?;
    let addr: SocketAddr = listen
        .parse()
        .map_err(|e| usage(format!("invalid --listen address '{listen}': {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ApiError::internal(format!("cannot bind {addr}: {e}")))?;
    info!(%addr, workspace = %ctx.workspace().display(), "serving");
    let app = crate::router(std::sync::Arc::new(ctx));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}
