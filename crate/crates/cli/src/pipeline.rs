//! Train / evaluate plumbing shared by `train`, `evaluate`, `ablate`, `sweep`
//! and `serve`.
//!
//! Besides what the training loop persists, a run directory holds
//! `pipeline.json` (resolved config) and `script.json` (the mock backend's
//! completion table), which is enough to rebuild the policy later.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ens_core::desk::build_desk_script;
use ens_core::dialogue::{validate_dialogue_with_mask, Dialogue};
use ens_core::eval::{
    eval_records_from_dialogues, evaluate_policy, CentroidStrategyJudge, EvalSettings,
    ExactEmotionJudge, Judges, MetricReport, SweepPoint,
};
use ens_core::gateway::{
    BackendFactory, CompletionScript, GenerativeBackend, HashEmbedder, MockBackend,
    PolicyCheckpoint,
};
use ens_core::jsonl::read_jsonl;
use ens_core::training::{
    labeled_from_dialogues, load_policy, run_iterative_loop, unlabeled_from_dialogues,
    GenerationSettings, RunStore, TrainError, TrainingRunState,
};

use crate::config::PipelineConfig;
use crate::CliError;

/// Reads a JSONL corpus and rejects it if any dialogue violates the schema
/// under `config`'s mask.
pub fn read_corpus(path: &Path, config: &PipelineConfig) -> Result<Vec<Dialogue>, CliError> {
    let dialogues: Vec<Dialogue> =
        read_jsonl(path).map_err(|e| CliError::Validation(e.to_string()))?;
    if dialogues.is_empty() {
        return Err(CliError::Validation(format!("{}: corpus is empty", path.display())));
    }
    let mut problems = Vec::new();
    for d in &dialogues {
        let report = validate_dialogue_with_mask(d, &config.training.mask);
        for v in &report.violations {
            problems.push(format!("{}: {v:?}", d.id));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: {} violation(s), first: {}",
            path.display(),
            problems.len(),
            problems[0]
        )));
    }
    Ok(dialogues)
}

pub fn factory(config: &PipelineConfig, script: CompletionScript) -> Box<BackendFactory> {
    let script = Arc::new(script);
    let mock = config.backend.clone();
    Box::new(move || {
        Box::new(MockBackend::new(mock.clone(), script.clone())) as Box<dyn GenerativeBackend>
    })
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::RunExists(dir) => CliError::Validation(format!(
            "run directory {} already exists; pick another --run-id",
            dir.display()
        )),
        TrainError::Config(msg) => CliError::Validation(msg),
        TrainError::MissingArtifact(msg) => CliError::Validation(msg),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Runs the iterative loop into `runs_root/run_id`.
pub fn train_run(
    config: &PipelineConfig,
    labeled: &[Dialogue],
    unlabeled: &[Dialogue],
    runs_root: &Path,
    run_id: &str,
) -> Result<(RunStore, TrainingRunState), CliError> {
    let labeled_records = labeled_from_dialogues(labeled);
    if labeled_records.is_empty() {
        return Err(CliError::Validation("labeled corpus has no annotated agent turns".into()));
    }
    let unlabeled_records = unlabeled_from_dialogues(unlabeled);
    let store = RunStore::create(runs_root, run_id).map_err(train_error)?;
    let all: Vec<Dialogue> = labeled.iter().chain(unlabeled).cloned().collect();
    let script = build_desk_script(&all, &config.training.mask);
    store.write_json("pipeline.json", config).map_err(train_error)?;
    store.write_json("script.json", &script).map_err(train_error)?;
    let embedder = HashEmbedder::new(config.embedder_dim);
    let state = run_iterative_loop(
        factory(config, script).as_ref(),
        &labeled_records,
        &unlabeled_records,
        &embedder,
        &config.training,
        &store,
    )
    .map_err(|failure| {
        CliError::Runtime(format!(
            "{} (state saved in {})",
            failure.error,
            store.dir().join("state.json").display()
        ))
    })?;
    Ok((store, state))
}

pub struct LoadedPolicy {
    pub config: PipelineConfig,
    pub state: TrainingRunState,
    pub checkpoint: PolicyCheckpoint,
    pub backend: Box<dyn GenerativeBackend>,
}

/// Rebuilds the final policy of a finished run.
pub fn load_run(runs_root: &Path, run_id: &str) -> Result<LoadedPolicy, CliError> {
    let store = RunStore::open(runs_root, run_id)
        .map_err(|_| CliError::Validation(format!("unknown run {run_id} under {}", runs_root.display())))?;
    let state = store.load_state().map_err(train_error)?;
    let config: PipelineConfig = store.read_json("pipeline.json").map_err(|e| {
        CliError::Validation(format!("run {run_id} has no usable pipeline.json: {e}"))
    })?;
    let script: CompletionScript = store
        .read_json("script.json")
        .map_err(|e| CliError::Validation(format!("run {run_id} has no usable script.json: {e}")))?;
    let id = state
        .final_policy()
        .ok_or_else(|| CliError::Validation(format!("run {run_id} has no trained checkpoint")))?
        .to_string();
    let checkpoint = store
        .load_checkpoint(&id)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let backend = load_policy(factory(&config, script).as_ref(), &checkpoint).map_err(train_error)?;
    Ok(LoadedPolicy {
        config,
        state,
        checkpoint,
        backend,
    })
}

pub fn evaluate_loaded(
    loaded: &LoadedPolicy,
    policy_id: &str,
    corpus: &[Dialogue],
    corpus_id: &str,
) -> Result<MetricReport, CliError> {
    let mask = &loaded.config.training.mask;
    let records = eval_records_from_dialogues(corpus, mask);
    if records.is_empty() {
        return Err(CliError::Validation("evaluation corpus has no agent turns".into()));
    }
    let embedder = HashEmbedder::new(loaded.config.embedder_dim);
    let strategy = CentroidStrategyJudge::with_bundled(HashEmbedder::new(loaded.config.embedder_dim));
    let judges = Judges {
        embedder: &embedder,
        emotion: &ExactEmotionJudge,
        strategy: &strategy,
    };
    let settings = EvalSettings {
        corpus_id: corpus_id.to_string(),
        generation: GenerationSettings {
            temperature: 0.0,
            seed: loaded.config.training.seed,
            retry_limit: loaded.config.training.retry_limit,
            mask: mask.clone(),
            ..GenerationSettings::default()
        },
        ..EvalSettings::default()
    };
    let (report, _) = evaluate_policy(loaded.backend.as_ref(), policy_id, &records, &judges, &settings)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(report)
}

pub fn corpus_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "corpus".into(), |s| s.to_string_lossy().into_owned())
}

/// Trains and evaluates one grid point in a scratch directory.
pub fn sweep_point(
    base: &PipelineConfig,
    point: &SweepPoint,
    labeled: &[Dialogue],
    unlabeled: &[Dialogue],
    test: &[Dialogue],
    corpus_id: &str,
) -> Result<MetricReport, String> {
    let mut config = base.clone();
    config.training.tau1 = point.tau1;
    config.training.tau2 = point.tau2;
    config.training.tau3 = point.tau3;
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_id = format!("tau1-{}-tau2-{}", point.tau1, point.tau2);
    train_run(&config, labeled, unlabeled, scratch.path(), &run_id).map_err(|e| e.to_string())?;
    let loaded = load_run(scratch.path(), &run_id).map_err(|e| e.to_string())?;
    evaluate_loaded(&loaded, &run_id, test, corpus_id).map_err(|e| e.to_string())
}

pub fn report_path(runs_root: &Path, run_id: &str, corpus_id: &str) -> PathBuf {
    runs_root.join(run_id).join("reports").join(format!("{corpus_id}.json"))
}
