//! Dialogues, turns and their validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogError, EmotionLabel, StrategyLabel};
use crate::rationale::{
    render_tagged_target, AblationMask, Component, EnsCotRationale, RationaleError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

impl Speaker {
    pub fn title(self) -> &'static str {
        match self {
            Speaker::User => "User",
            Speaker::Agent => "Agent",
        }
    }
}

/// Rationale as stored in corpus files. Labels are kept as raw strings so
/// that out-of-catalog values survive loading and show up in validation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RationaleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspective_shift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mindset_transformation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_reason: Option<String>,
    pub response: String,
}

impl RationaleRecord {
    pub fn to_rationale(&self) -> Result<EnsCotRationale, CatalogError> {
        let nonblank = |v: &Option<String>| v.clone().filter(|s| !s.trim().is_empty());
        Ok(EnsCotRationale {
            emotion: nonblank(&self.emotion)
                .map(|s| s.parse::<EmotionLabel>())
                .transpose()?,
            trigger: nonblank(&self.trigger),
            assessment: nonblank(&self.assessment),
            perspective_shift: nonblank(&self.perspective_shift),
            mindset_transformation: nonblank(&self.mindset_transformation),
            strategy: nonblank(&self.strategy)
                .map(|s| s.parse::<StrategyLabel>())
                .transpose()?,
            strategy_reason: nonblank(&self.strategy_reason),
            response: self.response.clone(),
        })
    }
}

impl From<&EnsCotRationale> for RationaleRecord {
    fn from(r: &EnsCotRationale) -> Self {
        Self {
            emotion: r.emotion.map(|e| e.as_str().to_string()),
            trigger: r.trigger.clone(),
            assessment: r.assessment.clone(),
            perspective_shift: r.perspective_shift.clone(),
            mindset_transformation: r.mindset_transformation.clone(),
            strategy: r.strategy.map(|s| s.as_str().to_string()),
            strategy_reason: r.strategy_reason.clone(),
            response: r.response.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<RationaleRecord>,
}

impl Turn {
    pub fn user(utterance: impl Into<String>, emotion: Option<EmotionLabel>) -> Self {
        Self {
            speaker: Speaker::User,
            utterance: utterance.into(),
            emotion: emotion.map(|e| e.as_str().to_string()),
            rationale: None,
        }
    }

    pub fn agent(rationale: &EnsCotRationale) -> Self {
        Self {
            speaker: Speaker::Agent,
            utterance: rationale.response.clone(),
            emotion: None,
            rationale: Some(rationale.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub scenario: String,
    pub domain_tag: String,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_ratings: Option<BTreeMap<String, f64>>,
}

/// A dialogue prefix ending in a user turn: the conditioning input for one
/// agent turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub scenario: String,
    pub history: Vec<(Speaker, String)>,
}

impl Context {
    /// Prompt text fed to the generative backend.
    pub fn prompt(&self) -> String {
        let mut out = format!("Scenario: {}\n", self.scenario.trim());
        for (speaker, text) in &self.history {
            out.push_str(speaker.title());
            out.push_str(": ");
            out.push_str(text.trim());
            out.push('\n');
        }
        out.push_str("Next agent turn:");
        out
    }

    pub fn ends_with_user(&self) -> bool {
        matches!(self.history.last(), Some((Speaker::User, _)))
    }
}

impl Dialogue {
    pub fn utterance_count(&self) -> usize {
        self.turns.len()
    }

    /// Context for agent turn `index` (all turns before it).
    pub fn context_at(&self, index: usize) -> Context {
        Context {
            id: format!("{}#{}", self.id, index),
            scenario: self.scenario.clone(),
            history: self.turns[..index.min(self.turns.len())]
                .iter()
                .map(|t| (t.speaker, t.utterance.clone()))
                .collect(),
        }
    }

    /// Every agent turn preceded by a user turn, with its context.
    pub fn agent_turns(&self) -> impl Iterator<Item = (Context, &Turn)> + '_ {
        self.turns.iter().enumerate().filter_map(move |(i, t)| {
            (t.speaker == Speaker::Agent && i > 0 && self.turns[i - 1].speaker == Speaker::User)
                .then(|| (self.context_at(i), t))
        })
    }

    /// Reference emotion for agent turn `index`: the preceding user turn's label.
    pub fn user_emotion_before(&self, index: usize) -> Option<EmotionLabel> {
        index
            .checked_sub(1)
            .and_then(|i| self.turns.get(i))
            .filter(|t| t.speaker == Speaker::User)
            .and_then(|t| t.emotion.as_deref())
            .and_then(|e| e.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    EmptyField,
    Alternation,
    UserRationale,
    Catalog,
    MissingComponent,
    EmptyComponent,
    ResponseMismatch,
    Unrenderable,
    RatingOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Turn index, or `None` for dialogue-level problems.
    pub turn: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.turn {
            Some(i) => write!(f, "turn {i}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dialogue_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, turn: Option<usize>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            turn,
            kind,
            message: message.into(),
        });
    }
}

/// Checks a dialogue against the full octuple.
pub fn validate_dialogue(dialogue: &Dialogue) -> ValidationReport {
    validate_dialogue_with_mask(dialogue, &AblationMask::full())
}

pub fn validate_dialogue_with_mask(dialogue: &Dialogue, mask: &AblationMask) -> ValidationReport {
    let mut report = ValidationReport {
        dialogue_id: dialogue.id.clone(),
        violations: Vec::new(),
    };
    if dialogue.id.trim().is_empty() {
        report.push(None, ViolationKind::EmptyField, "id is empty");
    }
    if dialogue.scenario.trim().is_empty() {
        report.push(None, ViolationKind::EmptyField, "scenario is empty");
    }
    if let Some(ratings) = &dialogue.quality_ratings {
        for (criterion, score) in ratings {
            if !(1.0..=5.0).contains(score) {
                report.push(
                    None,
                    ViolationKind::RatingOutOfRange,
                    format!("{criterion} = {score} outside 1..=5"),
                );
            }
        }
    }

    for (i, turn) in dialogue.turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Speaker::User } else { Speaker::Agent };
        if turn.speaker != expected {
            report.push(
                Some(i),
                ViolationKind::Alternation,
                format!("expected {:?}, found {:?}", expected, turn.speaker),
            );
        }
        if turn.utterance.trim().is_empty() {
            report.push(Some(i), ViolationKind::EmptyField, "utterance is empty");
        }
        if let Some(emotion) = &turn.emotion {
            if let Err(e) = emotion.parse::<EmotionLabel>() {
                report.push(Some(i), ViolationKind::Catalog, e.to_string());
            }
        }
        match (turn.speaker, &turn.rationale) {
            (Speaker::User, Some(_)) => {
                report.push(Some(i), ViolationKind::UserRationale, "user turn carries a rationale")
            }
            (Speaker::Agent, Some(record)) => check_rationale(&mut report, i, turn, record, mask),
            _ => {}
        }
    }
    report
}

fn check_rationale(
    report: &mut ValidationReport,
    i: usize,
    turn: &Turn,
    record: &RationaleRecord,
    mask: &AblationMask,
) {
    if record.response != turn.utterance {
        report.push(
            Some(i),
            ViolationKind::ResponseMismatch,
            "rationale.response differs from the utterance",
        );
    }
    let rationale = match record.to_rationale() {
        Ok(r) => r,
        Err(e) => {
            report.push(Some(i), ViolationKind::Catalog, e.to_string());
            return;
        }
    };
    let mut complete = true;
    for component in mask.components() {
        if !rationale.has(component) {
            complete = false;
            let raw_present = match component {
                Component::Trigger => record.trigger.is_some(),
                Component::Assessment => record.assessment.is_some(),
                Component::PerspectiveShift => record.perspective_shift.is_some(),
                Component::MindsetTransformation => record.mindset_transformation.is_some(),
                Component::StrategyReason => record.strategy_reason.is_some(),
                Component::Response => true,
                Component::Emotion => record.emotion.is_some(),
                Component::Strategy => record.strategy.is_some(),
            };
            let kind = if raw_present {
                ViolationKind::EmptyComponent
            } else {
                ViolationKind::MissingComponent
            };
            report.push(Some(i), kind, format!("{component}"));
        }
    }
    if complete {
        if let Err(e) = render_tagged_target(&rationale, &turn.utterance, mask) {
            let kind = match e {
                RationaleError::MissingComponent(_) => ViolationKind::MissingComponent,
                RationaleError::EmptyComponent(_) => ViolationKind::EmptyComponent,
                _ => ViolationKind::Unrenderable,
            };
            report.push(Some(i), kind, e.to_string());
        }
    }
}
