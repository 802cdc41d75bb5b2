//! Meta-context dialogue pipeline: corpus cleaning, topic/query/entity
//! mining, special-token instance assembly, BPE tokenization, a small
//! from-scratch transformer LM, and text-generation metrics.

pub mod assemble;
pub mod bpe;
pub mod corpus;
pub mod entity;
pub mod eval;
pub mod lexicon;
pub mod lm;
pub mod query;
pub mod stem;
pub mod text;
pub mod topic;

use thiserror::Error;

/// Unified error type for the pipeline crates.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input at {location}: {message}")]
    Malformed { location: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing artifact `{artifact}`; run `{producer}` first")]
    MissingArtifact { artifact: String, producer: String },
}

impl Error {
    pub fn malformed(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed { location: location.into(), message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// The five reserved serialization markers, in canonical order.
pub const MARKERS: [&str; 5] = ["[eos]", "[eoc]", "[eoq]", "[eot]", "[sep]"];

pub const EOS: &str = "[eos]";
pub const EOC: &str = "[eoc]";
pub const EOQ: &str = "[eoq]";
pub const EOT: &str = "[eot]";
pub const SEP: &str = "[sep]";

/// Placeholder substituted for bad-word tokens during cleaning.
pub const BW_PLACEHOLDER: &str = "<bw>";
