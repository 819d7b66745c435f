//! Steganographic canary tokens for plaintext documents.
//!
//! Identifiers derived from an organization key are framed and embedded
//! through one or more independent layers (whitespace substitution,
//! zero-width insertion, homoglyph substitution, generated cover text).
//! The scanner recovers and verifies them at an ingestion boundary.

pub mod corpus;
pub mod error;
pub mod experiments;
pub mod layer;
pub mod linguistic;
pub mod scanner;
pub mod stack;
pub mod symbolic;
pub mod tokens;
pub mod transport;

pub use error::{Error, Result};
pub use layer::{EmbeddingLayer, Method};
pub use linguistic::{canonicalize, default_model, lm_decode, lm_encode, LmParams, RefModel};
pub use tokens::{FramedPayload, OrgKey, ScanIdentity, Scheme, TokenRegistry};
pub use transport::{apply_chain, apply_transform, ChainId, TransformId, TransportChain, TransportConfig};
