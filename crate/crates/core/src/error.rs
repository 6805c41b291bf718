use thiserror::Error;

/// Where a budget ran out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    Refinement,
    Localization,
    Band,
    Conditional,
    Factory,
    Ladder,
    LambdaPlus,
    Level,
    Position,
}

impl StageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageTag::Refinement => "refinement",
            StageTag::Localization => "localization",
            StageTag::Band => "band",
            StageTag::Conditional => "conditional",
            StageTag::Factory => "factory",
            StageTag::Ladder => "ladder",
            StageTag::LambdaPlus => "lambda-plus",
            StageTag::Level => "level",
            StageTag::Position => "position",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("model evaluation produced a non-finite value at {0}")]
    ModelEvaluation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("budget exhausted in {} after {spent} (last tolerance {last_eps:e})", stage.as_str())]
    BudgetExhausted {
        stage: StageTag,
        spent: u64,
        last_eps: f64,
    },
    #[error("overflow while computing {0}")]
    Overflow(&'static str),
    #[error("numerical integrity: {0}")]
    NumericalIntegrity(String),
}

impl SdeError {
    pub fn budget(stage: StageTag, spent: u64) -> Self {
        SdeError::BudgetExhausted {
            stage,
            spent,
            last_eps: f64::NAN,
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, SdeError::BudgetExhausted { .. })
    }

    pub fn stage(&self) -> Option<StageTag> {
        match self {
            SdeError::BudgetExhausted { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, SdeError>;
