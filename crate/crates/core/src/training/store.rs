//! On-disk layout of a training run:
//!
//! ```text
//! runs/<run-id>/state.json
//! runs/<run-id>/checkpoints/<stage>-<iteration>.ckpt
//! runs/<run-id>/iter-<i>/{preference_pairs,pseudo_labels,merged}.jsonl
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::records::{LabeledRecord, PreferencePair, PseudoLabelRecord};
use super::state::TrainingRunState;
use super::TrainError;
use crate::gateway::PolicyCheckpoint;
use crate::jsonl::{read_jsonl, write_atomic, write_jsonl, JsonlError};

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| {
        TrainError::Io(JsonlError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl RunStore {
    /// Creates `root/run_id`; refuses if it already exists.
    pub fn create(root: &Path, run_id: &str) -> Result<Self, TrainError> {
        let dir = root.join(run_id);
        if dir.exists() {
            return Err(TrainError::RunExists(dir));
        }
        fs::create_dir_all(dir.join("checkpoints")).map_err(io(&dir))?;
        Ok(Self { dir })
    }

    pub fn open(root: &Path, run_id: &str) -> Result<Self, TrainError> {
        let dir = root.join(run_id);
        if !dir.join("state.json").is_file() {
            return Err(TrainError::MissingArtifact(format!(
                "no training run at {}",
                dir.display()
            )));
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn run_id(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, TrainError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(JsonlError::from)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, TrainError> {
        let path = self.dir.join(name);
        let text = fs::read_to_string(&path).map_err(|_| {
            TrainError::MissingArtifact(format!("{} is missing", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|source| {
            TrainError::Io(JsonlError::Parse {
                path,
                line: source.line(),
                source,
            })
        })
    }

    pub fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{id}.ckpt"))
    }

    pub fn save_checkpoint(&self, checkpoint: &PolicyCheckpoint) -> Result<PathBuf, TrainError> {
        self.write_json(&format!("checkpoints/{}.ckpt", checkpoint.id()), checkpoint)
    }

    pub fn load_checkpoint(&self, id: &str) -> Result<PolicyCheckpoint, TrainError> {
        self.read_json(&format!("checkpoints/{id}.ckpt"))
    }

    pub fn save_state(&self, state: &TrainingRunState) -> Result<PathBuf, TrainError> {
        self.write_json("state.json", state)
    }

    pub fn load_state(&self) -> Result<TrainingRunState, TrainError> {
        self.read_json("state.json")
    }

    pub fn iteration_dir(&self, iteration: u32) -> PathBuf {
        self.dir.join(format!("iter-{iteration}"))
    }

    pub fn save_iteration_sets(
        &self,
        iteration: u32,
        pairs: &[PreferencePair],
        pseudo: &[PseudoLabelRecord],
        merged: &[LabeledRecord],
    ) -> Result<(), TrainError> {
        let dir = self.iteration_dir(iteration);
        write_jsonl(&dir.join("preference_pairs.jsonl"), pairs)?;
        write_jsonl(&dir.join("pseudo_labels.jsonl"), pseudo)?;
        write_jsonl(&dir.join("merged.jsonl"), merged)?;
        Ok(())
    }

    pub fn load_merged(&self, iteration: u32) -> Result<Vec<LabeledRecord>, TrainError> {
        Ok(read_jsonl(&self.iteration_dir(iteration).join("merged.jsonl"))?)
    }

    pub fn load_pairs(&self, iteration: u32) -> Result<Vec<PreferencePair>, TrainError> {
        Ok(read_jsonl(
            &self.iteration_dir(iteration).join("preference_pairs.jsonl"),
        )?)
    }

    pub fn load_pseudo_labels(&self, iteration: u32) -> Result<Vec<PseudoLabelRecord>, TrainError> {
        Ok(read_jsonl(
            &self.iteration_dir(iteration).join("pseudo_labels.jsonl"),
        )?)
    }
}
