//! `ens`: one binary for the whole pipeline.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags, config, corpora,
//! unknown run or mask, existing run id), 2 runtime failure.

pub mod config;
pub mod pipeline;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ens_core::corpus::{
    expand_scenarios, generate_scenarios, synthesize_corpus, DomainTag, PromptTemplate, Scenario,
    SynthesisDecoding, SynthesisError,
};
use ens_core::desk::DeskChatClient;
use ens_core::dialogue::{validate_dialogue, Dialogue};
use ens_core::eval::{
    default_sweep_grid, emit_report, sweep_csv, threshold_sensitivity_sweep, ReportFormat,
};
use ens_core::gateway::{ChatClient, HttpChatClient, RetryingClient};
use ens_core::jsonl::{read_jsonl, write_atomic, write_jsonl};
use ens_core::training::TrainingRunState;
use ens_service::{AppState, PolicyEntry, ServiceConfig};
use thiserror::Error;

use crate::config::{load, mask_from_id, PipelineConfig};
use crate::pipeline::{
    corpus_id, evaluate_loaded, load_run, read_corpus, report_path, sweep_point, train_run,
};

const MAX_EXPANSION_ROUNDS: u64 = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ens", version, about = "Emotion-aware negotiation dialogue pipeline")]
pub struct Cli {
    /// Directory holding training runs.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file (falls back to ENS_CONFIG, then ./ens.config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set thresholds.tau1=0.85
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize scenarios and annotated dialogues from seed dialogues.
    Generate {
        /// Seed dialogues (JSONL).
        #[arg(long)]
        seeds: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenarios to produce.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "job_interview")]
        domain: String,
        /// `desk` (offline, deterministic) or `http` (ENS_LLM_* variables).
        #[arg(long, default_value = "desk")]
        client: String,
        /// Turns per synthesized dialogue.
        #[arg(long, default_value_t = 6)]
        turns: usize,
        /// Seed for exemplar sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check corpus files against the dialogue schema.
    Validate {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
    },
    /// Run supervised init plus the iterative self-training loop.
    Train {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        /// Name of the new run directory under --runs-dir.
        #[arg(long)]
        run_id: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a run's final policy on a corpus.
    Evaluate {
        /// Run to load.
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Train and evaluate under one rationale mask setting.
    Ablate {
        #[arg(long)]
        mask: u64,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to ablate-mask<ID>.
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value = "md")]
        format: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Threshold sensitivity grid, one CSV row per (tau1, tau2).
    Sweep {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Serve a run's policy over HTTP until interrupted.
    Serve {
        /// Run whose final policy is served.
        #[arg(long)]
        run_id: String,
        /// Listen address; defaults to ENS_SERVICE_ADDR or 127.0.0.1:8080.
        #[arg(long)]
        addr: Option<String>,
        /// Session logs and transcripts.
        #[arg(long, default_value = "service-data")]
        data_dir: PathBuf,
        /// JSONL of scenarios addressable by id.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if cli.verbose {
        let _ = tracing_subscriber::fmt()
            .with_writer(std::io::stderr)
            .with_max_level(tracing::Level::INFO)
            .try_init();
    }
    match execute(&cli) {
        Ok(summary) => {
            emit(&summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Generate {
            seeds,
            out,
            n,
            domain,
            client,
            turns,
            seed,
        } => cmd_generate(seeds, out, *n, domain, client, *turns, *seed),
        Command::Validate { corpora } => cmd_validate(corpora),
        Command::Train {
            labeled,
            unlabeled,
            run_id,
            config,
        } => {
            let config = load(config.config.as_deref(), &config.overrides)?;
            cmd_train(&config, labeled, unlabeled, &cli.runs_dir, run_id)
        }
        Command::Evaluate {
            run_id,
            corpus,
            format,
        } => cmd_evaluate(&cli.runs_dir, run_id, corpus, format),
        Command::Ablate {
            mask,
            labeled,
            unlabeled,
            corpus,
            run_id,
            format,
            config,
        } => {
            let mask_setting = mask_from_id(*mask)?;
            let format = parse_format(format)?;
            let mut config = load(config.config.as_deref(), &config.overrides)?;
            config.training.mask = mask_setting;
            config.mask_id = *mask as u8;
            let run_id = run_id.clone().unwrap_or_else(|| format!("ablate-mask{mask}"));
            let mut out = cmd_train(&config, labeled, unlabeled, &cli.runs_dir, &run_id)?;
            out.push_str(&evaluate_and_emit(&cli.runs_dir, &run_id, corpus, format)?);
            Ok(out)
        }
        Command::Sweep {
            labeled,
            unlabeled,
            corpus,
            out,
            config,
        } => {
            let config = load(config.config.as_deref(), &config.overrides)?;
            cmd_sweep(&config, labeled, unlabeled, corpus, out)
        }
        Command::Serve {
            run_id,
            addr,
            data_dir,
            scenarios,
        } => cmd_serve(&cli.runs_dir, run_id, addr.clone(), data_dir, scenarios.as_deref()),
    }
}

fn parse_format(raw: &str) -> Result<ReportFormat, CliError> {
    raw.parse()
        .map_err(|_| CliError::Validation(format!("unknown --format {raw:?}; use md, json or csv")))
}

fn cmd_generate(
    seeds: &Path,
    out: &Path,
    n: usize,
    domain: &str,
    client: &str,
    turns: usize,
    seed: u64,
) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::Validation(
            "--n must be at least 1\n\nUsage: ens generate --seeds PATH --out PATH --n INT --domain TAG".into(),
        ));
    }
    if turns < 2 || turns % 2 != 0 {
        return Err(CliError::Validation("--turns must be an even number >= 2".into()));
    }
    let seed_dialogues: Vec<Dialogue> =
        read_jsonl(seeds).map_err(|e| CliError::Validation(e.to_string()))?;
    if seed_dialogues.is_empty() {
        return Err(CliError::Validation(format!("{}: no seed dialogues", seeds.display())));
    }
    for d in &seed_dialogues {
        let report = validate_dialogue(d);
        if !report.is_valid() {
            return Err(CliError::Validation(format!(
                "seed dialogue {} is invalid: {:?}",
                d.id, report.violations[0]
            )));
        }
    }
    let domain = DomainTag::parse(domain);
    let chat: Box<dyn ChatClient> = match client {
        "desk" => Box::new(DeskChatClient),
        "http" => Box::new(RetryingClient::new(
            HttpChatClient::from_env().map_err(|e| CliError::Validation(e.to_string()))?,
        )),
        other => return Err(CliError::Validation(format!("unknown --client {other:?}"))),
    };
    let template = |name: &str| {
        PromptTemplate::builtin(name).map_err(|e| CliError::Runtime(e.to_string()))
    };
    let synthesis = |e: SynthesisError| match e {
        SynthesisError::Client { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Validation(other.to_string()),
    };

    let mut batch = generate_scenarios(&seed_dialogues, &template("scenario")?, chat.as_ref(), n, domain)
        .map_err(synthesis)?;
    let mut scenarios: Vec<Scenario> = std::mem::take(&mut batch.scenarios);
    let (mut inadequate, mut duplicates) = (batch.inadequate, batch.duplicates);
    // Seeded scenarios paired with their source dialogues anchor expansion.
    let exemplars: Vec<(Scenario, Dialogue)> = scenarios
        .iter()
        .cloned()
        .zip(seed_dialogues.iter().cloned())
        .collect();
    let expand = template("expand")?;
    let mut round = 0;
    while scenarios.len() < n && round < MAX_EXPANSION_ROUNDS {
        let more = expand_scenarios(
            &scenarios,
            &exemplars,
            &expand,
            chat.as_ref(),
            n - scenarios.len(),
            domain,
            seed.wrapping_add(round),
        )
        .map_err(synthesis)?;
        inadequate += more.inadequate;
        duplicates += more.duplicates;
        scenarios.extend(more.scenarios);
        round += 1;
    }
    scenarios.truncate(n);
    let exemplars: Vec<Dialogue> = seed_dialogues.iter().take(3).cloned().collect();
    let results = synthesize_corpus(
        &scenarios,
        &exemplars,
        &template("dialogue")?,
        chat.as_ref(),
        &SynthesisDecoding::default(),
        turns,
        4,
    );
    let mut dialogues = Vec::new();
    let mut provenance = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => {
                dialogues.push(s.dialogue);
                provenance.push(s.provenance);
            }
            Err(e) => failures.push(e),
        }
    }
    let io = |e: ens_core::jsonl::JsonlError| CliError::Runtime(e.to_string());
    let scenario_path = out.join("scenarios.jsonl");
    let dialogue_path = out.join("dialogues.jsonl");
    let provenance_path = out.join("provenance.jsonl");
    write_jsonl(&scenario_path, &scenarios).map_err(io)?;
    write_jsonl(&dialogue_path, &dialogues).map_err(io)?;
    write_jsonl(&provenance_path, &provenance).map_err(io)?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "scenarios: {} written ({inadequate} inadequate, {duplicates} duplicate)",
        scenarios.len()
    );
    let _ = writeln!(
        summary,
        "dialogues: {} valid, {} failed",
        dialogues.len(),
        failures.len()
    );
    for path in [&scenario_path, &dialogue_path, &provenance_path] {
        let _ = writeln!(summary, "wrote {}", path.display());
    }
    if let Some(first) = failures.into_iter().next() {
        emit(&summary);
        return Err(synthesis(first));
    }
    Ok(summary)
}

fn cmd_validate(corpora: &[PathBuf]) -> Result<String, CliError> {
    let mut summary = String::new();
    let mut bad = 0;
    for path in corpora {
        let dialogues: Vec<Dialogue> =
            read_jsonl(path).map_err(|e| CliError::Validation(e.to_string()))?;
        let mut violations = 0;
        for d in &dialogues {
            let report = validate_dialogue(d);
            for v in &report.violations {
                violations += 1;
                let _ = writeln!(summary, "{}: {}: {v:?}", path.display(), d.id);
            }
        }
        bad += violations;
        let stats = ens_core::corpus::corpus_stats(&corpus_id(path), &dialogues);
        let _ = writeln!(summary, "{stats}; {violations} violation(s)");
    }
    if bad > 0 {
        emit(&summary);
        return Err(CliError::Validation(format!("{bad} schema violation(s)")));
    }
    Ok(summary)
}

pub fn iteration_table(state: &TrainingRunState) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:<8} {:<8} {:<8} {:>6} {:>7} {:>7} {:>9} {:>9}",
        "iter", "base", "sft", "dpo", "pairs", "pseudo", "merged", "sft_loss", "dpo_loss"
    );
    let num = |m: &std::collections::BTreeMap<String, f64>, k: &str| {
        m.get(k).map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
    };
    for r in &state.iterations {
        let _ = writeln!(
            out,
            "{:>4}  {:<8} {:<8} {:<8} {:>6} {:>7} {:>7} {:>9} {:>9}",
            r.iteration,
            r.base_checkpoint,
            r.sft_checkpoint,
            r.dpo_checkpoint.as_deref().unwrap_or("-"),
            r.preference_pairs,
            r.pseudo_labels,
            r.merged_size,
            num(&r.metrics, "sft_loss"),
            num(&r.metrics, "dpo_loss"),
        );
    }
    let _ = writeln!(out, "status: {:?}", state.status);
    out
}

fn cmd_train(
    config: &PipelineConfig,
    labeled: &Path,
    unlabeled: &Path,
    runs_root: &Path,
    run_id: &str,
) -> Result<String, CliError> {
    let labeled = read_corpus(labeled, config)?;
    let unlabeled = read_corpus(unlabeled, config)?;
    let (store, state) = train_run(config, &labeled, &unlabeled, runs_root, run_id)?;
    let mut out = iteration_table(&state);
    let _ = writeln!(out, "mask: {}", config.mask_id);
    let _ = writeln!(out, "run: {}", store.dir().display());
    Ok(out)
}

fn evaluate_and_emit(
    runs_root: &Path,
    run_id: &str,
    corpus: &Path,
    format: ReportFormat,
) -> Result<String, CliError> {
    let loaded = load_run(runs_root, run_id)?;
    let dialogues = read_corpus(corpus, &loaded.config)?;
    let cid = corpus_id(corpus);
    let policy_id = format!("{run_id}/{} mask={}", loaded.checkpoint.id(), loaded.config.mask_id);
    let report = evaluate_loaded(&loaded, &policy_id, &dialogues, &cid)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&report_path(runs_root, run_id, &cid), &json)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut text = emit_report(&[report], format).map_err(|e| CliError::Runtime(e.to_string()))?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    Ok(text)
}

fn cmd_evaluate(runs_root: &Path, run_id: &str, corpus: &Path, format: &str) -> Result<String, CliError> {
    let format = parse_format(format)?;
    evaluate_and_emit(runs_root, run_id, corpus, format)
}

fn cmd_sweep(
    config: &PipelineConfig,
    labeled: &Path,
    unlabeled: &Path,
    corpus: &Path,
    out: &Path,
) -> Result<String, CliError> {
    let labeled = read_corpus(labeled, config)?;
    let unlabeled = read_corpus(unlabeled, config)?;
    let test = read_corpus(corpus, config)?;
    let cid = corpus_id(corpus);
    let rows = threshold_sensitivity_sweep(&default_sweep_grid(), |point| {
        sweep_point(config, point, &labeled, &unlabeled, &test, &cid)
    });
    let csv = sweep_csv(&rows).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(out, csv.as_bytes()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let failed: Vec<String> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("({}, {}): {e}", r.point.tau1, r.point.tau2)))
        .collect();
    let mut summary = format!("{} rows written to {}\n", rows.len(), out.display());
    if !failed.is_empty() {
        summary.push_str(&failed.join("\n"));
        emit(&format!("{summary}\n"));
        return Err(CliError::Runtime(format!("{} grid point(s) failed", failed.len())));
    }
    Ok(summary)
}

fn cmd_serve(
    runs_root: &Path,
    run_id: &str,
    addr: Option<String>,
    data_dir: &Path,
    scenarios: Option<&Path>,
) -> Result<String, CliError> {
    let loaded = load_run(runs_root, run_id)?;
    let scenarios: Vec<Scenario> = match scenarios {
        Some(p) => read_jsonl(p).map_err(|e| CliError::Validation(e.to_string()))?,
        None => Vec::new(),
    };
    let policy = PolicyEntry {
        backend: Arc::from(loaded.backend),
        mask: loaded.config.training.mask.clone(),
    };
    let config = ServiceConfig {
        seed: loaded.config.training.seed,
        retry_limit: loaded.config.training.retry_limit,
        ..ServiceConfig::new(data_dir).with_env_token()
    };
    let state = AppState::open(config, HashMap::from([(run_id.to_string(), policy)]), scenarios)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let addr = addr.unwrap_or_else(ens_service::listen_addr);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        emit(&format!("serving policy {run_id} on http://{local}\n"));
        ens_service::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    Ok("shut down cleanly\n".into())
}
