//! ENS-CoT rationales and the tagged target format.
//!
//! A rationale is the ordered octuple EM, ET, IA, PS, MT, SS, SR, RG. On the
//! wire each present component is written with its lead-in phrase, components
//! are separated by single spaces and the whole thing is wrapped as
//!
//! ```text
//! <R> The user feels joy. User's Emotion is triggered by ... Agent: ... </R> <A> response </A>
//! ```
//!
//! The lead-in phrases are the delimiters the parser splits on, so component
//! text may not contain a later component's lead-in. [`render_tagged_target`]
//! refuses such input instead of producing text that would not round-trip.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, EmotionLabel, StrategyLabel};

pub const OPEN_RATIONALE: &str = "<R>";
pub const CLOSE_RATIONALE: &str = "</R>";
pub const OPEN_ANSWER: &str = "<A>";
pub const CLOSE_ANSWER: &str = "</A>";

/// Connective that every strategy-reason component must contain.
pub const STRATEGY_REASON_LINK: &str = ", the agent uses ";

/// One slot of the octuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "EM")]
    Emotion,
    #[serde(rename = "ET")]
    Trigger,
    #[serde(rename = "IA")]
    Assessment,
    #[serde(rename = "PS")]
    PerspectiveShift,
    #[serde(rename = "MT")]
    MindsetTransformation,
    #[serde(rename = "SS")]
    Strategy,
    #[serde(rename = "SR")]
    StrategyReason,
    #[serde(rename = "RG")]
    Response,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Emotion,
        Component::Trigger,
        Component::Assessment,
        Component::PerspectiveShift,
        Component::MindsetTransformation,
        Component::Strategy,
        Component::StrategyReason,
        Component::Response,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Component::Emotion => "EM",
            Component::Trigger => "ET",
            Component::Assessment => "IA",
            Component::PerspectiveShift => "PS",
            Component::MindsetTransformation => "MT",
            Component::Strategy => "SS",
            Component::StrategyReason => "SR",
            Component::Response => "RG",
        }
    }

    pub fn from_code(code: &str) -> Option<Component> {
        Component::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(code.trim()))
    }

    pub fn lead_in(self) -> &'static str {
        match self {
            Component::Emotion => "The user feels ",
            Component::Trigger => "User's Emotion is triggered by ",
            Component::Assessment => "The user thinks ",
            Component::PerspectiveShift => {
                "Enable the user to consider the situation from a different angle: "
            }
            Component::MindsetTransformation => {
                "Enable the user to think about reframing the belief: "
            }
            Component::Strategy => "The agent chooses ",
            Component::StrategyReason => "To ",
            Component::Response => "Agent: ",
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RationaleError {
    #[error("tag structure: {0}")]
    TagStructure(String),
    #[error("lead-in for {component} not found: {detail}")]
    LeadIn { component: Component, detail: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("component {0} is empty")]
    EmptyComponent(Component),
    #[error("component {0} is required but missing")]
    MissingComponent(Component),
    #[error("mask must include RG")]
    Mask,
    #[error("text of component {0} contains a delimiter and would not parse back")]
    AmbiguousContent(Component),
}

/// The component subset kept during training and generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct AblationMask {
    included: BTreeSet<Component>,
}

impl AblationMask {
    pub fn full() -> Self {
        Self {
            included: Component::ALL.into_iter().collect(),
        }
    }

    pub fn new(included: impl IntoIterator<Item = Component>) -> Result<Self, RationaleError> {
        let included: BTreeSet<_> = included.into_iter().collect();
        if !included.contains(&Component::Response) {
            return Err(RationaleError::Mask);
        }
        Ok(Self { included })
    }

    /// The six component-removal settings, by id (0 = full octuple).
    pub fn setting(id: u8) -> Option<Self> {
        use Component::*;
        let excluded: &[Component] = match id {
            0 => &[],
            1 => &[Trigger, Assessment],
            2 => &[PerspectiveShift, MindsetTransformation],
            3 => &[Strategy, StrategyReason],
            4 => &[Emotion, Trigger, Assessment, PerspectiveShift, MindsetTransformation],
            5 => &[
                Emotion,
                Trigger,
                Assessment,
                PerspectiveShift,
                MindsetTransformation,
                StrategyReason,
            ],
            _ => return None,
        };
        Some(Self {
            included: Component::ALL
                .into_iter()
                .filter(|c| !excluded.contains(c))
                .collect(),
        })
    }

    pub const SETTING_IDS: [u8; 6] = [0, 1, 2, 3, 4, 5];

    pub fn includes(&self, component: Component) -> bool {
        self.included.contains(&component)
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        self.included.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.included.len() == Component::ALL.len()
    }
}

impl Default for AblationMask {
    fn default() -> Self {
        Self::full()
    }
}

impl TryFrom<Vec<Component>> for AblationMask {
    type Error = RationaleError;

    fn try_from(value: Vec<Component>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AblationMask> for Vec<Component> {
    fn from(mask: AblationMask) -> Self {
        mask.included.into_iter().collect()
    }
}

/// An ENS-CoT rationale. Absent optional fields mean the component was masked
/// out; `response` (RG) is always present.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsCotRationale {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspective_shift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mindset_transformation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_reason: Option<String>,
    pub response: String,
}

impl EnsCotRationale {
    /// Builds a complete octuple.
    #[allow(clippy::too_many_arguments)]
    pub fn full(
        emotion: EmotionLabel,
        trigger: impl Into<String>,
        assessment: impl Into<String>,
        perspective_shift: impl Into<String>,
        mindset_transformation: impl Into<String>,
        strategy: StrategyLabel,
        strategy_reason: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        Self {
            emotion: Some(emotion),
            trigger: Some(trigger.into()),
            assessment: Some(assessment.into()),
            perspective_shift: Some(perspective_shift.into()),
            mindset_transformation: Some(mindset_transformation.into()),
            strategy: Some(strategy),
            strategy_reason: Some(strategy_reason.into()),
            response: response.into(),
        }
    }

    fn text_of(&self, component: Component) -> Option<String> {
        match component {
            Component::Emotion => self.emotion.map(|e| e.as_str().to_string()),
            Component::Trigger => self.trigger.clone(),
            Component::Assessment => self.assessment.clone(),
            Component::PerspectiveShift => self.perspective_shift.clone(),
            Component::MindsetTransformation => self.mindset_transformation.clone(),
            Component::Strategy => self.strategy.map(|s| s.as_str().to_string()),
            Component::StrategyReason => self.strategy_reason.clone(),
            Component::Response => Some(self.response.clone()),
        }
    }

    /// Whether `component` is present with non-blank text.
    pub fn has(&self, component: Component) -> bool {
        self.text_of(component)
            .is_some_and(|text| !text.trim().is_empty())
    }

    /// Components present, in octuple order.
    pub fn components(&self) -> Vec<Component> {
        Component::ALL.into_iter().filter(|c| self.has(*c)).collect()
    }

    /// Fails with the first mask-required component that is absent or blank.
    pub fn check_mask(&self, mask: &AblationMask) -> Result<(), RationaleError> {
        match mask.components().find(|c| !self.has(*c)) {
            Some(missing) => Err(RationaleError::MissingComponent(missing)),
            None => Ok(()),
        }
    }

    fn trimmed(&self) -> Self {
        let trim = |v: &Option<String>| v.as_ref().map(|s| s.trim().to_string());
        Self {
            emotion: self.emotion,
            trigger: trim(&self.trigger),
            assessment: trim(&self.assessment),
            perspective_shift: trim(&self.perspective_shift),
            mindset_transformation: trim(&self.mindset_transformation),
            strategy: self.strategy,
            strategy_reason: trim(&self.strategy_reason),
            response: self.response.trim().to_string(),
        }
    }

    /// Rationale body (the text between the rationale tags) for the mask.
    pub fn render_body(&self, mask: &AblationMask) -> Result<String, RationaleError> {
        self.check_mask(mask)?;
        let parts: Vec<String> = mask
            .components()
            .map(|c| {
                let text = self.text_of(c).unwrap_or_default();
                let text = text.trim();
                match c {
                    Component::Emotion | Component::Strategy => {
                        format!("{}{}.", c.lead_in(), text)
                    }
                    _ => format!("{}{}", c.lead_in(), text),
                }
            })
            .collect();
        Ok(parts.join(" "))
    }

    /// Lowercased, whitespace-collapsed body; used as a dedup key.
    pub fn normalized_text(&self) -> String {
        let mask = AblationMask {
            included: self.components().into_iter().collect(),
        };
        let body = self.render_body(&mask).unwrap_or_default();
        body.to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Removes every component the mask excludes.
pub fn apply_mask(
    rationale: &EnsCotRationale,
    mask: &AblationMask,
) -> Result<EnsCotRationale, RationaleError> {
    if !mask.includes(Component::Response) {
        return Err(RationaleError::Mask);
    }
    let keep = |c: Component| mask.includes(c);
    Ok(EnsCotRationale {
        emotion: rationale.emotion.filter(|_| keep(Component::Emotion)),
        trigger: rationale.trigger.clone().filter(|_| keep(Component::Trigger)),
        assessment: rationale
            .assessment
            .clone()
            .filter(|_| keep(Component::Assessment)),
        perspective_shift: rationale
            .perspective_shift
            .clone()
            .filter(|_| keep(Component::PerspectiveShift)),
        mindset_transformation: rationale
            .mindset_transformation
            .clone()
            .filter(|_| keep(Component::MindsetTransformation)),
        strategy: rationale.strategy.filter(|_| keep(Component::Strategy)),
        strategy_reason: rationale
            .strategy_reason
            .clone()
            .filter(|_| keep(Component::StrategyReason)),
        response: rationale.response.clone(),
    })
}

/// A rendered `<R> .. </R> <A> .. </A>` target sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaggedTarget(String);

impl TaggedTarget {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn parse(&self) -> Result<(EnsCotRationale, String), RationaleError> {
        parse_tagged_target(&self.0)
    }

    /// Text up to and including the opening answer tag.
    pub fn rationale_prefix(&self) -> &str {
        match self.0.find(OPEN_ANSWER) {
            Some(pos) => &self.0[..pos + OPEN_ANSWER.len()],
            None => &self.0,
        }
    }

    /// Text up to and including the closing rationale tag.
    pub fn rationale_span(&self) -> &str {
        match self.0.find(CLOSE_RATIONALE) {
            Some(pos) => &self.0[..pos + CLOSE_RATIONALE.len()],
            None => &self.0,
        }
    }
}

impl AsRef<str> for TaggedTarget {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaggedTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const TAGS: [&str; 4] = [OPEN_RATIONALE, CLOSE_RATIONALE, OPEN_ANSWER, CLOSE_ANSWER];

/// Renders the target sequence for `rationale` under `mask`, with `response`
/// as the answer span.
pub fn render_tagged_target(
    rationale: &EnsCotRationale,
    response: &str,
    mask: &AblationMask,
) -> Result<TaggedTarget, RationaleError> {
    let answer = response.trim();
    if answer.is_empty() {
        return Err(RationaleError::EmptyComponent(Component::Response));
    }
    if TAGS.iter().any(|t| answer.contains(t)) {
        return Err(RationaleError::AmbiguousContent(Component::Response));
    }
    let expected = apply_mask(&rationale.trimmed(), mask)?;
    let body = expected.render_body(mask)?;
    if TAGS.iter().any(|t| body.contains(t)) {
        let culprit = mask
            .components()
            .find(|c| {
                expected
                    .text_of(*c)
                    .is_some_and(|t| TAGS.iter().any(|tag| t.contains(tag)))
            })
            .unwrap_or(Component::Response);
        return Err(RationaleError::AmbiguousContent(culprit));
    }
    let text = format!("{OPEN_RATIONALE} {body} {CLOSE_RATIONALE} {OPEN_ANSWER} {answer} {CLOSE_ANSWER}");

    // Component text that embeds a later lead-in would split differently on
    // the way back in; detect that here rather than emit it.
    match parse_tagged_target(&text) {
        Ok((parsed, parsed_answer)) if parsed == expected && parsed_answer == answer => {
            Ok(TaggedTarget(text))
        }
        Ok((parsed, _)) => {
            let culprit = Component::ALL
                .into_iter()
                .find(|c| parsed.text_of(*c) != expected.text_of(*c))
                .unwrap_or(Component::Response);
            Err(RationaleError::AmbiguousContent(culprit))
        }
        Err(_) => Err(RationaleError::AmbiguousContent(
            first_embedded_lead_in(&expected, mask).unwrap_or(Component::Response),
        )),
    }
}

fn first_embedded_lead_in(rationale: &EnsCotRationale, mask: &AblationMask) -> Option<Component> {
    mask.components().find(|c| {
        let text = rationale.text_of(*c).unwrap_or_default();
        Component::ALL[c.position() + 1..]
            .iter()
            .any(|later| text.contains(later.lead_in().trim_end()))
    })
}

fn span<'a>(text: &'a str, open: &str, close: &str) -> Result<(usize, &'a str, usize), RationaleError> {
    let start = text
        .find(open)
        .ok_or_else(|| RationaleError::TagStructure(format!("missing {open}")))?;
    let inner_start = start + open.len();
    let end = text[inner_start..]
        .find(close)
        .map(|p| p + inner_start)
        .ok_or_else(|| RationaleError::TagStructure(format!("missing {close} after {open}")))?;
    Ok((start, &text[inner_start..end], end + close.len()))
}

/// Parses generated text back into `(rationale, answer)`.
///
/// Any subset of components is accepted as long as what is present appears in
/// octuple order and RG is there; use [`parse_with_mask`] to require a set.
pub fn parse_tagged_target(text: &str) -> Result<(EnsCotRationale, String), RationaleError> {
    for tag in TAGS {
        let count = text.matches(tag).count();
        if count != 1 {
            return Err(RationaleError::TagStructure(format!(
                "expected exactly one {tag}, found {count}"
            )));
        }
    }
    let (r_start, body, r_end) = span(text, OPEN_RATIONALE, CLOSE_RATIONALE)?;
    let (a_start, answer, a_end) = span(text, OPEN_ANSWER, CLOSE_ANSWER)?;
    if a_start < r_end {
        return Err(RationaleError::TagStructure(
            "answer span must follow the rationale span".into(),
        ));
    }
    let outside = [&text[..r_start], &text[r_end..a_start], &text[a_end..]];
    if outside.iter().any(|s| !s.trim().is_empty()) {
        return Err(RationaleError::TagStructure(
            "text outside the rationale and answer spans".into(),
        ));
    }
    let answer = answer.trim();
    if answer.is_empty() {
        return Err(RationaleError::TagStructure("empty answer span".into()));
    }
    let rationale = parse_rationale_body(body.trim())?;
    Ok((rationale, answer.to_string()))
}

/// Like [`parse_tagged_target`] but every component in `mask` must be present.
pub fn parse_with_mask(
    text: &str,
    mask: &AblationMask,
) -> Result<(EnsCotRationale, String), RationaleError> {
    let (rationale, answer) = parse_tagged_target(text)?;
    rationale.check_mask(mask)?;
    Ok((rationale, answer))
}

/// Where the content that starts at `from` would be cut by the lead-in of
/// `next`, if that lead-in occurs.
fn boundary(body: &str, from: usize, next: Component) -> Option<usize> {
    let rest = &body[from..];
    if next == Component::StrategyReason {
        let link = rest.find(STRATEGY_REASON_LINK)?;
        let marker = format!(" {}", next.lead_in());
        return rest[..link].rfind(&marker).map(|p| from + p);
    }
    let marker = format!(" {}", next.lead_in());
    rest.find(&marker).map(|p| from + p)
}

fn starts_component(rest: &str, component: Component) -> bool {
    if !rest.starts_with(component.lead_in()) {
        return false;
    }
    component != Component::StrategyReason || rest.contains(STRATEGY_REASON_LINK)
}

/// Splits a rationale body at lead-in phrases.
pub fn parse_rationale_body(body: &str) -> Result<EnsCotRationale, RationaleError> {
    let mut found: Vec<(Component, String)> = Vec::new();
    let mut cursor = 0usize;
    let mut next_expected = 0usize;
    while cursor < body.len() {
        let rest = &body[cursor..];
        let component = Component::ALL[next_expected..]
            .iter()
            .copied()
            .find(|c| starts_component(rest, *c))
            .ok_or_else(|| RationaleError::LeadIn {
                component: Component::ALL[next_expected.min(7)],
                detail: format!(
                    "expected a component lead-in at '{}'",
                    rest.chars().take(40).collect::<String>()
                ),
            })?;
        let content_start = cursor + component.lead_in().len();
        let end = Component::ALL[component.position() + 1..]
            .iter()
            .filter_map(|next| boundary(body, content_start, *next))
            .min()
            .unwrap_or(body.len());
        found.push((component, body[content_start..end].trim().to_string()));
        next_expected = component.position() + 1;
        cursor = end;
        while body[cursor..].starts_with(' ') {
            cursor += 1;
        }
        if next_expected >= Component::ALL.len() && cursor < body.len() {
            return Err(RationaleError::TagStructure(
                "trailing text after the RG component".into(),
            ));
        }
    }

    let mut rationale = EnsCotRationale {
        emotion: None,
        trigger: None,
        assessment: None,
        perspective_shift: None,
        mindset_transformation: None,
        strategy: None,
        strategy_reason: None,
        response: String::new(),
    };
    let mut has_response = false;
    for (component, content) in found {
        if content.is_empty() {
            return Err(RationaleError::EmptyComponent(component));
        }
        match component {
            Component::Emotion => {
                rationale.emotion = Some(strip_label(&content).parse::<EmotionLabel>()?)
            }
            Component::Trigger => rationale.trigger = Some(content),
            Component::Assessment => rationale.assessment = Some(content),
            Component::PerspectiveShift => rationale.perspective_shift = Some(content),
            Component::MindsetTransformation => rationale.mindset_transformation = Some(content),
            Component::Strategy => {
                // "no strategy" is itself a label, so the suffix is only
                // dropped when the full text does not parse
                let label = strip_label(&content);
                rationale.strategy = Some(match label.parse::<StrategyLabel>() {
                    Ok(s) => s,
                    Err(e) => label
                        .strip_suffix(" strategy")
                        .or_else(|| label.strip_suffix(" Strategy"))
                        .ok_or(e)?
                        .parse::<StrategyLabel>()?,
                })
            }
            Component::StrategyReason => rationale.strategy_reason = Some(content),
            Component::Response => {
                rationale.response = content;
                has_response = true;
            }
        }
    }
    if !has_response {
        return Err(RationaleError::LeadIn {
            component: Component::Response,
            detail: "rationale has no RG component".into(),
        });
    }
    Ok(rationale)
}

fn strip_label(content: &str) -> &str {
    content
        .trim()
        .trim_end_matches('.')
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’'))
        .trim()
}
