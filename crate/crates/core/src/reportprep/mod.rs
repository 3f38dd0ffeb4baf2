//! Pathology-report cleaning through a chat-completion service (or a
//! deterministic offline mock) and keyword-token matching for manifests.

mod client;
mod keywords;
mod prompt;

pub use client::{
    digest, CleaningRecord, DigestCache, Endpoint, LiveProvider, MockProvider, Provider, ReportCleaner, RetryPolicy,
    AUTH_TOKEN_ENV,
};
pub use keywords::find_keyword_tokens;
pub use prompt::CleaningPrompt;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("empty report text")]
    EmptyReport,
    #[error("keyword list is empty")]
    NoKeywords,
    #[error("token list is empty")]
    NoTokens,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("service returned unusable content: {0}")]
    Content(String),
    #[error("auth token missing: set {0}")]
    MissingToken(&'static str),
    #[error("cache {path}: {message}")]
    Cache { path: std::path::PathBuf, message: String },
}
