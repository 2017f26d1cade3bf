use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::catalog::StrategyLabel;
use crate::dialogue::Context;
use crate::gateway::{Decoding, GenerativeBackend};
use crate::rationale::{parse_with_mask, AblationMask, EnsCotRationale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
    /// Extra attempts after the first unparseable completion.
    pub retry_limit: usize,
    pub mask: AblationMask,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 1.0,
            seed: 0,
            retry_limit: 2,
            mask: AblationMask::full(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub rationale: EnsCotRationale,
    pub response: String,
    /// The rationale's SS component, surfaced as the selected strategy.
    pub strategy: Option<StrategyLabel>,
    pub completion: String,
    pub attempts: usize,
}

/// Samples and parses one agent turn, retrying unparseable completions.
pub fn generate_agent_turn(
    policy: &dyn GenerativeBackend,
    context: &Context,
    settings: &GenerationSettings,
) -> Result<AgentTurn, TrainError> {
    if !context.ends_with_user() {
        return Err(TrainError::ContextOrder);
    }
    let prompt = context.prompt();
    let attempts = settings.retry_limit + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        let decoding = Decoding {
            temperature: settings.temperature,
            top_p: settings.top_p,
            seed: settings.seed.wrapping_add(attempt as u64),
        };
        let completion = policy
            .sample(&prompt, &decoding, 1)?
            .into_iter()
            .next()
            .unwrap_or_default();
        match parse_with_mask(&completion, &settings.mask) {
            Ok((rationale, response)) => {
                return Ok(AgentTurn {
                    strategy: rationale.strategy,
                    rationale,
                    response,
                    completion,
                    attempts: attempt + 1,
                })
            }
            Err(e) => {
                tracing::debug!(attempt, error = %e, "unparseable agent completion");
                last_error = e.to_string();
            }
        }
    }
    Err(TrainError::GenerationUnparseable {
        attempts,
        last_error,
    })
}
