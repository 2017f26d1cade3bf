//! `ens.config` loading: TOML file, `--set key=value` overrides, required keys.
//!
//! ```toml
//! seed = 7
//! [thresholds]
//! tau1 = 0.8
//! tau2 = 0.4
//! tau3 = 0.8
//! [dpo]
//! beta = 0.1
//! [sampling]
//! k = 5
//! m = 3
//! temperature = 0.7
//! [loop]
//! iteration_limit = 3
//! convergence_fraction = 0.01
//! [backend]
//! kind = "mock"
//! ```
//!
//! Optional: `sampling.top_p`, `loop.pair_cap`, `loop.accumulate_pseudo_labels`,
//! `loop.retry_limit`, `dpo.scoring`, the optimiser keys under `[sft]` and
//! `[dpo]`, `backend.vocab_size`, `backend.init_scale`, `embedder.dim`,
//! `ablation.mask`.

use std::path::{Path, PathBuf};

use ens_core::gateway::MockConfig;
use ens_core::rationale::AblationMask;
use ens_core::training::{DpoScoring, OptimizerSettings, TrainingConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const REQUIRED_KEYS: [&str; 11] = [
    "thresholds.tau1",
    "thresholds.tau2",
    "thresholds.tau3",
    "dpo.beta",
    "sampling.k",
    "sampling.m",
    "sampling.temperature",
    "loop.iteration_limit",
    "loop.convergence_fraction",
    "seed",
    "backend.kind",
];

/// Everything a run needs besides its corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub training: TrainingConfig,
    pub backend: MockConfig,
    pub embedder_dim: usize,
    pub mask_id: u8,
}

/// `--config`, then `ENS_CONFIG`, then `./ens.config`.
pub fn resolve_path(flag: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os("ENS_CONFIG").filter(|p| !p.is_empty()) {
        return Some(PathBuf::from(p));
    }
    let local = PathBuf::from("ens.config");
    local.is_file().then_some(local)
}

pub fn load(flag: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let path = resolve_path(flag).ok_or_else(|| {
        CliError::Validation("no config: pass --config, set ENS_CONFIG or create ./ens.config".into())
    })?;
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut table: Table = raw
        .parse()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(&table)
}

/// `a.b=value`; the value is read as TOML and falls back to a plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Validation(format!("--set has an empty key: {assignment:?}")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut node = table;
    for part in parts {
        node = node
            .entry(part)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("--set {key}: {part} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn lookup<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut value = table.get(parts.next()?)?;
    for part in parts {
        value = value.as_table()?.get(part)?;
    }
    Some(value)
}

fn float(table: &Table, key: &str) -> Result<Option<f64>, CliError> {
    match lookup(table, key) {
        None => Ok(None),
        Some(Value::Float(f)) => Ok(Some(*f)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(other) => Err(CliError::Validation(format!("{key} must be a number, got {other}"))),
    }
}

fn int(table: &Table, key: &str) -> Result<Option<u64>, CliError> {
    match lookup(table, key) {
        None => Ok(None),
        Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
        Some(other) => Err(CliError::Validation(format!(
            "{key} must be a non-negative integer, got {other}"
        ))),
    }
}

fn boolean(table: &Table, key: &str) -> Result<Option<bool>, CliError> {
    match lookup(table, key) {
        None => Ok(None),
        Some(Value::Boolean(b)) => Ok(Some(*b)),
        Some(other) => Err(CliError::Validation(format!("{key} must be a boolean, got {other}"))),
    }
}

fn string<'a>(table: &'a Table, key: &str) -> Result<Option<&'a str>, CliError> {
    match lookup(table, key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(CliError::Validation(format!("{key} must be a string, got {other}"))),
    }
}

fn optimizer(table: &Table, section: &str, base: OptimizerSettings) -> Result<OptimizerSettings, CliError> {
    let k = |name: &str| format!("{section}.{name}");
    Ok(OptimizerSettings {
        epochs: int(table, &k("epochs"))?.map_or(base.epochs, |v| v as usize),
        batch_size: int(table, &k("batch_size"))?.map_or(base.batch_size, |v| v as usize),
        learning_rate: float(table, &k("learning_rate"))?.unwrap_or(base.learning_rate),
        warmup_ratio: float(table, &k("warmup_ratio"))?.unwrap_or(base.warmup_ratio),
        weight_decay: float(table, &k("weight_decay"))?.unwrap_or(base.weight_decay),
        grad_clip: float(table, &k("grad_clip"))?.unwrap_or(base.grad_clip),
    })
}

pub fn from_table(table: &Table) -> Result<PipelineConfig, CliError> {
    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| lookup(table, k).is_none()) {
        return Err(CliError::Validation(format!("config is missing required key {missing}")));
    }
    let req_f = |k: &str| float(table, k).map(|v| v.expect("required key checked"));
    let req_i = |k: &str| int(table, k).map(|v| v.expect("required key checked"));

    let kind = string(table, "backend.kind")?.expect("required key checked");
    if kind != "mock" {
        return Err(CliError::Validation(format!(
            "backend.kind = {kind:?} is not available offline; only \"mock\" can be trained"
        )));
    }
    let mask_id = int(table, "ablation.mask")?.unwrap_or(0);
    let mask = mask_from_id(mask_id)?;
    let defaults = TrainingConfig::default();
    let dpo_scoring = match string(table, "dpo.scoring")? {
        None | Some("full_sequence") => DpoScoring::FullSequence,
        Some("rationale_only") => DpoScoring::RationaleOnly,
        Some(other) => {
            return Err(CliError::Validation(format!(
                "dpo.scoring must be full_sequence or rationale_only, got {other:?}"
            )))
        }
    };
    let pair_cap = match lookup(table, "loop.pair_cap") {
        Some(Value::String(s)) if s == "none" => None,
        _ => int(table, "loop.pair_cap")?.map_or(defaults.pair_cap, |v| Some(v as usize)),
    };
    let training = TrainingConfig {
        tau1: req_f("thresholds.tau1")?,
        tau2: req_f("thresholds.tau2")?,
        tau3: req_f("thresholds.tau3")?,
        beta: req_f("dpo.beta")?,
        k: req_i("sampling.k")? as usize,
        m: req_i("sampling.m")? as usize,
        sample_temperature: req_f("sampling.temperature")?,
        top_p: float(table, "sampling.top_p")?.unwrap_or(defaults.top_p),
        iteration_limit: u32::try_from(req_i("loop.iteration_limit")?)
            .map_err(|_| CliError::Validation("loop.iteration_limit is too large".into()))?,
        convergence_fraction: req_f("loop.convergence_fraction")?,
        pair_cap,
        accumulate_pseudo_labels: boolean(table, "loop.accumulate_pseudo_labels")?
            .unwrap_or(defaults.accumulate_pseudo_labels),
        dpo_scoring,
        mask,
        sft: optimizer(table, "sft", defaults.sft.clone())?,
        dpo: optimizer(table, "dpo", defaults.dpo.clone())?,
        retry_limit: int(table, "loop.retry_limit")?.map_or(defaults.retry_limit, |v| v as usize),
        seed: req_i("seed")?,
    };
    training
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mock = MockConfig::default();
    let backend = MockConfig {
        vocab_size: int(table, "backend.vocab_size")?.map_or(mock.vocab_size, |v| v as usize),
        init_scale: float(table, "backend.init_scale")?.unwrap_or(mock.init_scale),
        seed: training.seed,
        ..mock
    };
    if backend.vocab_size == 0 {
        return Err(CliError::Validation("backend.vocab_size must be positive".into()));
    }
    let embedder_dim = int(table, "embedder.dim")?.unwrap_or(64) as usize;
    if embedder_dim == 0 {
        return Err(CliError::Validation("embedder.dim must be positive".into()));
    }
    Ok(PipelineConfig {
        training,
        backend,
        embedder_dim,
        mask_id: mask_id as u8,
    })
}

pub fn mask_from_id(id: u64) -> Result<AblationMask, CliError> {
    u8::try_from(id)
        .ok()
        .and_then(AblationMask::setting)
        .ok_or_else(|| CliError::Validation(format!("unknown mask setting {id}; expected 0..=5")))
}
