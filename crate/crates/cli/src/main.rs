mod render;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, bail};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;
use taskreflect_core::advisor::Reveal;
use taskreflect_core::ingest::{
    self, CropRect, DEFAULT_BATCH_SIZE, DEFAULT_INTERVAL_S, DEFAULT_MAX_SEGMENTS, SamplingConfig,
};
use taskreflect_core::metrics::files as eval_files;
use taskreflect_core::providers::{self, ApiKey, ChatProvider, HttpProvider, MockProvider, ProviderConfig};
use taskreflect_service::{AppState, SessionDir, SessionState, SessionStore};

#[derive(Debug, Parser)]
#[command(name = "taskreflect", version, about = "Workflow suggestions from spreadsheet screen recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyze one recording into a new session directory.
    Analyze(AnalyzeArgs),
    /// Show revealed suggestions of a session, or reveal the next one.
    Suggest(SuggestArgs),
    /// Score annotated sessions and optional agreement and runtime data.
    Eval(EvalArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Args)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: ProviderKind,
    /// Scripted responses for the mock provider.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. https://api.openai.com/v1.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model for frame batches (and suggestions unless --text-model is set).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    text_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 120.0)]
    timeout_s: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Seconds between sampled frames.
    #[arg(long, default_value_t = DEFAULT_INTERVAL_S)]
    interval: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SEGMENTS)]
    max_segments: usize,
    /// Crop rectangle X,Y,W,H applied to every frame.
    #[arg(long)]
    crop: Option<CropRect>,
    /// Data directory; the session is created in a new subdirectory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SuggestArgs {
    /// Session directory written by `analyze`.
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    next: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON-lines file of {session_id, truth, predicted}.
    #[arg(long)]
    annotations: PathBuf,
    /// JSON file of paired rater verdicts.
    #[arg(long)]
    agreement: Option<PathBuf>,
    /// JSON file of (duration, runtime) points in minutes.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Report path; defaults to `<annotations>.report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long)]
    data_dir: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Suggest(args) => suggest(args),
        Command::Eval(args) => eval(args),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Flag combinations clap cannot express; exits 2 with the subcommand's usage.
fn usage_error(subcommand: &str, kind: clap::error::ErrorKind, message: impl std::fmt::Display) -> ! {
    let mut cli = Cli::command().bin_name("taskreflect");
    cli.build();
    match cli.find_subcommand_mut(subcommand) {
        Some(sub) => sub.error(kind, message).exit(),
        None => cli.error(kind, message).exit(),
    }
}

fn build_provider(subcommand: &str, args: &ProviderArgs) -> anyhow::Result<Arc<dyn ChatProvider>> {
    match args.provider {
        ProviderKind::Mock => {
            let Some(path) = &args.script else { usage_error(subcommand, ErrorKind::MissingRequiredArgument, "--provider mock requires --script <PATH>") };
            let script = providers::load_script(path)?;
            Ok(Arc::new(MockProvider::new(script)))
        }
        ProviderKind::Http => {
            let (Some(endpoint), Some(model)) = (&args.endpoint, &args.model) else {
                usage_error(
                    subcommand,
                    ErrorKind::MissingRequiredArgument,
                    "--provider http requires --endpoint <URL> and --model <NAME>",
                )
            };
            let config = ProviderConfig {
                endpoint_url: endpoint.clone(),
                model_name: model.clone(),
                text_model_name: args.text_model.clone(),
                api_key_env_var_name: args.api_key_env.clone(),
                timeout_s: args.timeout_s,
                max_retries: args.max_retries,
                ..Default::default()
            };
            let key = ApiKey::from_env(&config.api_key_env_var_name)?;
            Ok(Arc::new(HttpProvider::new(config, key)?))
        }
    }
}

fn analyze(args: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let config = SamplingConfig {
        interval_s: args.interval,
        batch_size: args.batch_size,
        max_segments: args.max_segments,
        crop: args.crop,
    };
    if let Err(e) = config.validate() {
        usage_error("analyze", ErrorKind::ValueValidation, e);
    }
    let provider = build_provider("analyze", &args.provider)?;
    let store = SessionStore::open(&args.out)?;
    let created = store.create_session(&args.video, config)?;
    let decoder = ingest::decoder_for(&created.recording_path);
    let record = store.run_pipeline(&created.session_id, provider.as_ref(), decoder.as_ref())?;
    let dir = store.root().join(&record.session_id);

    if args.json {
        println!("{}", serde_json::to_string_pretty(&render::summary_json(&record, &dir))?);
    } else {
        print!("{}", render::summary_text(&record, &dir));
    }
    Ok(if record.state == SessionState::Ready { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn suggest(args: SuggestArgs) -> anyhow::Result<ExitCode> {
    let dir = SessionDir::new(&args.session);
    if !dir.exists() {
        bail!("{} is not a session directory", args.session.display());
    }
    if args.next {
        let revealed = dir.reveal_next()?;
        match (revealed.reveal, args.json) {
            (Reveal::Item { index, assessment }, true) => println!(
                "{}",
                json!({ "index": index, "suggestion": assessment, "remaining": revealed.remaining })
            ),
            (Reveal::Item { index, assessment }, false) => {
                print!("{}", render::suggestion_markdown(index, index + 1 + revealed.remaining, &assessment))
            }
            (Reveal::Exhausted, true) => println!("{}", json!({ "exhausted": true })),
            (Reveal::Exhausted, false) => println!("No more suggestions for this session."),
        }
    } else {
        let queue = dir.revealed()?;
        let total = dir.load()?.queue.map_or(0, |q| q.items.len());
        if args.json {
            println!("{}", json!({ "items": queue.items, "revealed": queue.revealed }));
        } else if queue.items.is_empty() {
            println!("No suggestions revealed yet ({total} available); use --next.");
        } else {
            for (index, item) in queue.items.iter().enumerate() {
                print!("{}", render::suggestion_markdown(index, total, item));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn default_report_path(annotations: &Path) -> PathBuf {
    let mut name = annotations.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    annotations.with_file_name(name)
}

fn eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let annotations = eval_files::load_annotations(&args.annotations)?;
    let verdicts = args.agreement.as_deref().map(eval_files::load_verdicts).transpose()?;
    let timings = args.timings.as_deref().map(eval_files::load_timings).transpose()?;
    let report = eval_files::evaluate(&annotations, verdicts.as_ref(), timings.as_ref())
        .with_context(|| format!("evaluating {}", args.annotations.display()))?;

    let out = args.out.unwrap_or_else(|| default_report_path(&args.annotations));
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    if args.json {
        println!("{text}");
    } else {
        print!("{}", eval_files::render_text(&report));
        println!("\nreport written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let provider = build_provider("serve", &args.provider)?;
    let store = Arc::new(SessionStore::open(&args.data_dir)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr = SocketAddr::new(args.host, args.port);
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        let bound = listener.local_addr()?;
        println!("listening on http://{bound} (data dir {})", store.root().display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        taskreflect_service::serve(listener, AppState::new(store, provider), shutdown).await?;
        println!("shut down");
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}
