use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokens::FramedPayload;

/// Embedding method of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "WS")]
    Ws,
    #[serde(rename = "ZW")]
    Zw,
    #[serde(rename = "HG")]
    Hg,
    #[serde(rename = "LM")]
    Lm,
}

impl Method {
    pub const SYMBOLIC: [Method; 3] = [Method::Ws, Method::Zw, Method::Hg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ws => "WS",
            Method::Zw => "ZW",
            Method::Hg => "HG",
            Method::Lm => "LM",
        }
    }

    pub fn is_symbolic(self) -> bool {
        self != Method::Lm
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WS" => Ok(Method::Ws),
            "ZW" => Ok(Method::Zw),
            "HG" => Ok(Method::Hg),
            "LM" => Ok(Method::Lm),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Uniform interface shared by every embedding method.
///
/// `encode` returns `None` when the text cannot carry the payload and
/// `decode` returns `None` when no well-formed frame is present. Generative
/// layers ignore the `text` argument of `encode`.
pub trait EmbeddingLayer {
    fn method(&self) -> Method;

    fn encode(&self, text: &str, payload: &FramedPayload) -> Option<String>;

    fn decode(&self, text: &str) -> Option<Vec<u8>>;

    fn strip_encoding(&self, text: &str) -> String;

    /// Maximum payload bytes (frame header excluded) that `text` can carry.
    fn capacity(&self, text: &str) -> usize;
}
