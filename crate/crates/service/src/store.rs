//! Session state and its append-only event log.
//!
//! Each session owns `sessions/<id>.jsonl`. State is whatever replaying that
//! file produces; nothing else is authoritative.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use ens_core::catalog::StrategyLabel;
use ens_core::dialogue::{Context, Dialogue, RationaleRecord, Speaker, Turn};
use ens_core::jsonl::{append_jsonl, read_jsonl, JsonlError};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Human rating dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    F,
    C,
    E,
    EA,
    ENSC,
    BE,
    OF,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::F,
        Dimension::C,
        Dimension::E,
        Dimension::EA,
        Dimension::ENSC,
        Dimension::BE,
        Dimension::OF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::F => "F",
            Dimension::C => "C",
            Dimension::E => "E",
            Dimension::EA => "EA",
            Dimension::ENSC => "ENSC",
            Dimension::BE => "BE",
            Dimension::OF => "OF",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ServiceError::BadRequest(format!("unknown rating dimension {s:?}")))
    }
}

pub type Scores = BTreeMap<Dimension, u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub domain_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        scenario: SessionScenario,
        policy_id: String,
        at: u64,
    },
    Turn {
        user: String,
        agent: RationaleRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<StrategyLabel>,
        attempts: usize,
        at: u64,
    },
    Closed {
        at: u64,
    },
    Rating {
        rater_id: String,
        scores: Scores,
        /// Set when this event overwrote an earlier rating by the same rater.
        replaced: bool,
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub rater_id: String,
    pub at: u64,
    pub previous: Scores,
}

/// Session record as returned by `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub scenario: SessionScenario,
    pub policy_id: String,
    pub status: SessionStatus,
    pub created_at: u64,
    pub transcript: Dialogue,
    pub ratings: BTreeMap<String, Scores>,
    pub audit: Vec<AuditEntry>,
}

impl SessionRecord {
    pub fn context_for(&self, utterance: &str) -> Context {
        let mut history: Vec<(Speaker, String)> = self
            .transcript
            .turns
            .iter()
            .map(|t| (t.speaker, t.utterance.clone()))
            .collect();
        history.push((Speaker::User, utterance.to_string()));
        Context {
            id: format!("{}#{}", self.session_id, self.agent_turns()),
            scenario: self.scenario.text.clone(),
            history,
        }
    }

    pub fn agent_turns(&self) -> usize {
        self.transcript
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::Agent)
            .count()
    }

    /// Applies one event. Events that cannot follow the current state are
    /// rejected so a corrupt log is noticed during replay.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), String> {
        match event {
            SessionEvent::Created { .. } => Err("duplicate created event".into()),
            SessionEvent::Turn { user, agent, .. } => {
                if self.status != SessionStatus::Open {
                    return Err("turn after close".into());
                }
                self.transcript.turns.push(Turn::user(user.clone(), None));
                self.transcript.turns.push(Turn {
                    speaker: Speaker::Agent,
                    utterance: agent.response.clone(),
                    emotion: None,
                    rationale: Some(agent.clone()),
                });
                Ok(())
            }
            SessionEvent::Closed { .. } => {
                if self.status == SessionStatus::Closed {
                    return Err("second close".into());
                }
                self.status = SessionStatus::Closed;
                Ok(())
            }
            SessionEvent::Rating {
                rater_id, scores, at, ..
            } => {
                if self.status != SessionStatus::Closed {
                    return Err("rating before close".into());
                }
                if let Some(previous) = self.ratings.insert(rater_id.clone(), scores.clone()) {
                    self.audit.push(AuditEntry {
                        rater_id: rater_id.clone(),
                        at: *at,
                        previous,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn from_created(event: &SessionEvent) -> Result<Self, String> {
        let SessionEvent::Created {
            session_id,
            scenario,
            policy_id,
            at,
        } = event
        else {
            return Err("log does not start with a created event".into());
        };
        Ok(Self {
            session_id: session_id.clone(),
            scenario: scenario.clone(),
            policy_id: policy_id.clone(),
            status: SessionStatus::Open,
            created_at: *at,
            transcript: Dialogue {
                id: session_id.clone(),
                scenario: scenario.text.clone(),
                domain_tag: scenario.domain_tag.clone(),
                turns: Vec::new(),
                quality_ratings: None,
            },
            ratings: BTreeMap::new(),
            audit: Vec::new(),
        })
    }
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Where sessions and transcripts live under the data directory.
#[derive(Debug, Clone)]
pub struct EventLog {
    root: PathBuf,
}

fn internal(e: JsonlError) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

impl EventLog {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.jsonl"))
    }

    pub fn transcripts_path(&self) -> PathBuf {
        self.root.join("transcripts.jsonl")
    }

    pub fn append(&self, id: &str, event: &SessionEvent) -> Result<(), ServiceError> {
        append_jsonl(&self.session_path(id), event).map_err(internal)
    }

    pub fn append_transcript(&self, transcript: &Dialogue) -> Result<(), ServiceError> {
        append_jsonl(&self.transcripts_path(), transcript).map_err(internal)
    }

    /// Rebuilds every session found on disk, sorted by id.
    pub fn replay_all(&self) -> Result<Vec<SessionRecord>, ServiceError> {
        let dir = self.root.join("sessions");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths.iter().map(|p| replay(p)).collect()
    }
}

pub fn replay(path: &Path) -> Result<SessionRecord, ServiceError> {
    let events: Vec<SessionEvent> = read_jsonl(path).map_err(internal)?;
    let corrupt = |msg: String| ServiceError::Internal(format!("{}: {msg}", path.display()));
    let first = events
        .first()
        .ok_or_else(|| corrupt("empty event log".into()))?;
    let mut record = SessionRecord::from_created(first).map_err(corrupt)?;
    for event in &events[1..] {
        record.apply(event).map_err(corrupt)?;
    }
    Ok(record)
}
