//! Text-completion client used by the generation stages, with an on-disk
//! replay store so that every LLM-dependent step can run offline and
//! deterministically.

mod client;
mod prompt;
mod replay;

pub use client::{CompletionMode, LiveConfig, LlmClient};
pub use prompt::{builtin_prompt, render_prompt, Bindings, PromptSpec, BUILTIN_PROMPTS};
pub use replay::{request_hash, Exchange, ReplayStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unbound placeholder {{{0}}}")]
    Unbound(String),
    #[error("unknown prompt {0:?}")]
    UnknownPrompt(String),
    #[error("invalid prompt file: {0}")]
    InvalidPrompt(String),
    #[error("replay cache miss for request {hash} (prompt {name:?})")]
    ReplayMiss { hash: String, name: String },
    #[error("replay store {path}: {source}")]
    Store {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt replay record {path}: {message}")]
    CorruptRecord { path: String, message: String },
    #[error("live mode needs an API key in ${0}")]
    MissingApiKey(String),
    #[error("live mode is not configured")]
    NotConfigured,
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected completion response: {0}")]
    BadResponse(String),
}
