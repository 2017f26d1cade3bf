//! Closed emotion and strategy inventories.
//!
//! Both catalogs have exactly twelve members. Ingest is forgiving about case,
//! hyphens, underscores and repeated whitespace; output is always the canonical
//! lowercase spelling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("'{0}' is not one of the 12 emotion labels")]
    UnknownEmotion(String),
    #[error("'{0}' is not one of the 12 negotiation strategies")]
    UnknownStrategy(String),
}

/// Lowercases, maps `-`/`_` to spaces and collapses whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.chars()
        .map(|c| match c {
            '-' | '_' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

macro_rules! closed_catalog {
    (
        $(#[$meta:meta])*
        $name:ident, $err:ident, [$($variant:ident => $canon:literal),+ $(,)?]
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: [$name; 12] = [$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $canon),+
                }
            }

            /// Position in the canonical ordering (0..12).
            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap_or_default()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = CatalogError;

            fn from_str(raw: &str) -> Result<Self, Self::Err> {
                let key = normalize_label(raw);
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| normalize_label(v.as_str()) == key)
                    .ok_or_else(|| CatalogError::$err(raw.trim().to_string()))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_catalog!(
    /// Emotion a user expresses in a turn.
    EmotionLabel, UnknownEmotion, [
        Joy => "joy",
        Confidence => "confidence",
        Positivity => "positivity",
        Gratitude => "gratitude",
        Trust => "trust",
        Surprise => "surprise",
        Anger => "anger",
        Disappointment => "disappointment",
        Frustration => "frustration",
        Fear => "fear",
        Anxiety => "anxiety",
        Neutral => "neutral",
    ]
);

closed_catalog!(
    /// Emotion-aware negotiation strategy an agent selects before replying.
    StrategyLabel, UnknownStrategy, [
        Savoring => "savoring",
        PositiveReinforcement => "positive reinforcement",
        ExpressingOptimism => "expressing optimism",
        CognitiveReappraisal => "cognitive reappraisal",
        PositiveFraming => "positive framing",
        EmotionDiffusion => "emotion diffusion",
        ExpressiveSuppression => "expressive suppression",
        ActiveListening => "active listening",
        PerspectiveTaking => "perspective-taking",
        ProblemSolving => "problem solving",
        EscalateAssurance => "escalate assurance",
        NoStrategy => "no strategy",
    ]
);

impl StrategyLabel {
    /// Title-cased display name, e.g. "Positive Framing".
    pub fn title(self) -> String {
        self.as_str()
            .split(' ')
            .map(|word| {
                word.split('-')
                    .map(|part| {
                        let mut chars = part.chars();
                        match chars.next() {
                            Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
                            None => String::new(),
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("-")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Short working definition used when instructing a generator.
    pub fn definition(self) -> &'static str {
        match self {
            StrategyLabel::Savoring => {
                "dwell on and amplify positive moments such as points of agreement"
            }
            StrategyLabel::PositiveReinforcement => {
                "acknowledge constructive behaviour or ideas to encourage more of it"
            }
            StrategyLabel::ExpressingOptimism => {
                "voice a credible positive outlook on reaching a mutually good deal"
            }
            StrategyLabel::CognitiveReappraisal => {
                "reinterpret the situation so that it carries a less negative charge"
            }
            StrategyLabel::PositiveFraming => "present the offer in terms of gains rather than losses",
            StrategyLabel::EmotionDiffusion => {
                "acknowledge strong feelings and de-escalate with calm language"
            }
            StrategyLabel::ExpressiveSuppression => {
                "keep one's own emotional display in check to stay composed"
            }
            StrategyLabel::ActiveListening => {
                "paraphrase and validate concerns so the counterpart feels heard"
            }
            StrategyLabel::PerspectiveTaking => {
                "reason from the counterpart's viewpoint about motives and constraints"
            }
            StrategyLabel::ProblemSolving => "jointly work out options that meet both sides' needs",
            StrategyLabel::EscalateAssurance => {
                "answer worries with concrete guarantees and commitments"
            }
            StrategyLabel::NoStrategy => "reply in a neutral, task-focused way",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_distinct_members_each() {
        let emotions: std::collections::BTreeSet<_> = EmotionLabel::ALL.iter().collect();
        let strategies: std::collections::BTreeSet<_> = StrategyLabel::ALL.iter().collect();
        assert_eq!(emotions.len(), 12);
        assert_eq!(strategies.len(), 12);
    }

    #[test]
    fn ingest_is_case_and_hyphen_insensitive() {
        assert_eq!("Perspective-Taking".parse(), Ok(StrategyLabel::PerspectiveTaking));
        assert_eq!("perspective taking".parse(), Ok(StrategyLabel::PerspectiveTaking));
        assert_eq!("  POSITIVE_framing ".parse(), Ok(StrategyLabel::PositiveFraming));
        assert_eq!("Anxiety".parse(), Ok(EmotionLabel::Anxiety));
    }

    #[test]
    fn unknown_labels_are_rejected() {
        assert_eq!(
            "boredom".parse::<EmotionLabel>(),
            Err(CatalogError::UnknownEmotion("boredom".into()))
        );
        assert!("haggling".parse::<StrategyLabel>().is_err());
    }

    #[test]
    fn serde_uses_canonical_lowercase() {
        let json = serde_json::to_string(&StrategyLabel::PerspectiveTaking).unwrap();
        assert_eq!(json, "\"perspective-taking\"");
        let back: StrategyLabel = serde_json::from_str("\"Active Listening\"").unwrap();
        assert_eq!(back, StrategyLabel::ActiveListening);
    }

    #[test]
    fn title_case_display() {
        assert_eq!(StrategyLabel::PositiveFraming.title(), "Positive Framing");
        assert_eq!(StrategyLabel::PerspectiveTaking.title(), "Perspective-Taking");
    }
}
