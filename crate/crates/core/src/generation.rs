//! Stage-2 prompt construction for the four class-conditioning variants
//! and parsing of the enumerated candidate list the generator returns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::session::{flatten_session, IntentClass, Session};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("no enumerated candidates in model output: {raw:?}")]
    NoCandidates { raw: String },
}

/// Which class information the generation prompt carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningVariant {
    UsePredicted,
    UseGroundTruth,
    UseAll,
    UseNone,
}

impl ConditioningVariant {
    pub const ALL: [ConditioningVariant; 4] = [
        ConditioningVariant::UsePredicted,
        ConditioningVariant::UseGroundTruth,
        ConditioningVariant::UseAll,
        ConditioningVariant::UseNone,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConditioningVariant::UsePredicted => "use_predicted",
            ConditioningVariant::UseGroundTruth => "use_ground_truth",
            ConditioningVariant::UseAll => "use_all",
            ConditioningVariant::UseNone => "use_none",
        }
    }

    pub fn needs_class(self) -> bool {
        matches!(
            self,
            ConditioningVariant::UsePredicted | ConditioningVariant::UseGroundTruth
        )
    }
}

#[derive(Debug, Clone)]
pub struct GenRequest {
    pub session: Session,
    pub variant: ConditioningVariant,
    pub conditioning_class: Option<IntentClass>,
    pub m: usize,
    pub shuffle_seed: u64,
}

impl GenRequest {
    pub fn new(
        session: Session,
        variant: ConditioningVariant,
        conditioning_class: Option<IntentClass>,
        m: usize,
        shuffle_seed: u64,
    ) -> Result<Self, GenError> {
        if m < 1 {
            return Err(GenError::InvalidRequest("m must be >= 1".into()));
        }
        if variant.needs_class() != conditioning_class.is_some() {
            return Err(GenError::InvalidRequest(format!(
                "variant {} {} a conditioning class",
                variant.label(),
                if variant.needs_class() {
                    "requires"
                } else {
                    "must not carry"
                }
            )));
        }
        Ok(Self {
            session,
            variant,
            conditioning_class,
            m,
            shuffle_seed,
        })
    }
}

/// Ordered candidate intents parsed from the generator output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub candidates: Vec<String>,
}

/// The five display names in a seeded Fisher-Yates order, mitigating
/// positional bias in the prompt.
pub fn shuffled_class_names(seed: u64) -> [&'static str; 5] {
    let mut names = IntentClass::class_set();
    Rng::new(seed).shuffle(&mut names);
    names
}

/// Renders the generation instruction around the flattened session. The
/// session must already be truncated.
pub fn build_generation_prompt(req: &GenRequest) -> String {
    let flat = flatten_session(&req.session);
    let class_list = shuffled_class_names(req.shuffle_seed).join(", ");
    let topic_sentence = match req.variant {
        ConditioningVariant::UsePredicted | ConditioningVariant::UseGroundTruth => {
            let class = req.conditioning_class.expect("validated").display_name();
            format!("Possible topics are {class_list}, but {class} is the most likely. ")
        }
        ConditioningVariant::UseAll => format!("Possible topics are {class_list}. "),
        ConditioningVariant::UseNone => String::new(),
    };
    format!(
        "A customer browsed the following pages---{flat}---and reached out a chat agent for assistance. {topic_sentence}Pretend to be this customer, and enumerate {m} questions (1., 2., ...) to ask the chat agent. Don't say anything else.",
        m = req.m
    )
}

/// Captures lines of the shape `^\s*\d+\.\s*(.+)$` in order, trimmed,
/// capped at `m`. Zero matches is a parse error carrying the raw text.
pub fn parse_candidates(text: &str, m: usize) -> Result<CandidateList, GenError> {
    let mut candidates = Vec::new();
    for line in text.lines() {
        let rest = line.trim_start();
        let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            continue;
        }
        let Some(after) = rest[digits..].strip_prefix('.') else {
            continue;
        };
        let body = after.trim();
        if body.is_empty() {
            continue;
        }
        candidates.push(body.to_string());
        if candidates.len() == m {
            break;
        }
    }
    if candidates.is_empty() {
        return Err(GenError::NoCandidates {
            raw: text.to_string(),
        });
    }
    Ok(CandidateList { candidates })
}
