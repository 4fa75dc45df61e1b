use thiserror::Error;

/// Unified error type for the crate.
///
/// Machine-facing consumers (the CLI prints `error: {code}: {message}`) rely on
/// [`Error::code`] staying stable, so add variants rather than repurposing them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("message does not conform to schema: {0}")]
    MessageInvalid(String),

    #[error("rule parse error at byte {offset}: {message}")]
    RuleParse { offset: usize, message: String },

    #[error("rule evaluation error in rule {rule_id}: {message}")]
    RuleEval { rule_id: String, message: String },

    #[error("ruleset error: {0}")]
    RuleSet(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("model artifact error: {0}")]
    Artifact(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("query service error: {0}")]
    Query(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier for machine-readable CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::MessageInvalid(_) => "message_invalid",
            Error::RuleParse { .. } => "rule_parse",
            Error::RuleEval { .. } => "rule_eval",
            Error::RuleSet(_) => "ruleset",
            Error::Encoding(_) => "encoding",
            Error::Model(_) => "model",
            Error::Artifact(_) => "artifact",
            Error::Selection(_) => "selection",
            Error::Pipeline(_) => "pipeline",
            Error::Stats(_) => "stats",
            Error::Experiment(_) => "experiment",
            Error::Query(_) => "query",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
