//! Error taxonomy mapped onto exit codes: 2 config, 3 missing
//! prerequisite, 4 transport, 5 metric/parse, 1 anything else.

use intent_core::gateway::GatewayError;
use intent_core::generation::GenError;
use intent_core::judge::JudgeError;
use intent_core::model::ModelError;
use intent_core::session::DataError;
use intent_core::vocab::TokenizerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("prerequisite error: {0}")]
    Prereq(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    MetricParse(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Prereq(_) => 3,
            CliError::Transport(_) => 4,
            CliError::MetricParse(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Malformed { .. } | DataError::UnknownClass { .. } => {
                CliError::MetricParse(e.to_string())
            }
            DataError::Io(io) => CliError::Other(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io(io) => CliError::Other(io.to_string()),
            other => CliError::MetricParse(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::MissingSplit(_) => CliError::Prereq(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::InputRange(_) => {
                CliError::MetricParse(e.to_string())
            }
            ModelError::Data(d) => d.into(),
            ModelError::Tokenizer(t) => t.into(),
            ModelError::Io(io) => CliError::Other(io.to_string()),
            ModelError::Diverged { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Transport(_) => CliError::Transport(e.to_string()),
            GatewayError::Protocol(_) => CliError::MetricParse(e.to_string()),
            GatewayError::InvalidRequest(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::NoCandidates { .. } => CliError::MetricParse(e.to_string()),
            GenError::InvalidRequest(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Gateway(g) => g.into(),
            other => CliError::MetricParse(other.to_string()),
        }
    }
}

impl From<intent_core::classify::MetricError> for CliError {
    fn from(e: intent_core::classify::MetricError) -> Self {
        CliError::MetricParse(e.to_string())
    }
}
