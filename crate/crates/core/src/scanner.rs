//! Ingestion-side detection: symbolic decoders with strip-and-retry, then
//! the LM decoder on what is left, all verified against a registry.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::layer::{EmbeddingLayer, Method};
use crate::linguistic::{canonicalize, lm_decode, LmParams, RefModel};
use crate::symbolic::{HomoglyphCodec, WhitespaceCodec, ZeroWidthCodec};
use crate::tokens::{verify, ScanIdentity, Scheme, TokenRegistry};

pub const DEFAULT_REGION_DELIMITERS: (&str, &str) = ("<<<DOC>>>", "<<<END>>>");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanPolicy {
    pub max_strip_depth: usize,
    pub early_terminate: bool,
    pub scheme: Scheme,
    pub region_delimiters: Option<(String, String)>,
}

impl Default for ScanPolicy {
    fn default() -> Self {
        ScanPolicy {
            max_strip_depth: 2,
            early_terminate: true,
            scheme: Scheme::Hmac,
            region_delimiters: None,
        }
    }
}

impl ScanPolicy {
    pub fn with_scheme(scheme: Scheme) -> Self {
        ScanPolicy {
            scheme,
            ..ScanPolicy::default()
        }
    }
}

/// One decoder invocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DecoderRun {
    pub layer: Method,
    pub region: usize,
    pub depth: usize,
    pub candidate: bool,
    pub verified: bool,
    pub micros: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScanVerdict {
    pub matched: bool,
    pub identity: Option<ScanIdentity>,
    pub layer: Option<Method>,
    pub runs: Vec<DecoderRun>,
    pub micros: u64,
}

impl ScanVerdict {
    fn no_match() -> Self {
        ScanVerdict {
            matched: false,
            identity: None,
            layer: None,
            runs: Vec::new(),
            micros: 0,
        }
    }

    pub fn candidates(&self, layer: Method) -> usize {
        self.runs.iter().filter(|r| r.layer == layer && r.candidate).count()
    }
}

/// Delimited spans of `text`, or the whole text when no delimiters are
/// configured or none are present.
pub fn extract_regions<'a>(text: &'a str, policy: &ScanPolicy) -> Vec<&'a str> {
    let Some((open, close)) = &policy.region_delimiters else {
        return vec![text];
    };
    let mut regions = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(open.as_str()) {
        let after = &rest[start + open.len()..];
        let Some(end) = after.find(close.as_str()) else {
            break;
        };
        regions.push(&after[..end]);
        rest = &after[end + close.len()..];
    }
    if regions.is_empty() {
        regions.push(text);
    }
    regions
}

/// A scan engine bound to a registry snapshot and model.
#[derive(Clone, Debug)]
pub struct Scanner {
    registry: Arc<TokenRegistry>,
    model: Arc<RefModel>,
    lm: LmParams,
    policy: ScanPolicy,
}

impl Scanner {
    pub fn new(registry: Arc<TokenRegistry>, model: Arc<RefModel>, lm: LmParams, policy: ScanPolicy) -> Self {
        Scanner {
            registry,
            model,
            lm,
            policy,
        }
    }

    /// Embedded model with default LM parameters.
    pub fn with_default_model(registry: Arc<TokenRegistry>, policy: ScanPolicy) -> Self {
        Self::new(registry, crate::linguistic::default_model(), LmParams::default(), policy)
    }

    pub fn policy(&self) -> &ScanPolicy {
        &self.policy
    }

    pub fn registry(&self) -> &Arc<TokenRegistry> {
        &self.registry
    }

    pub fn scan(&self, text: &str) -> ScanVerdict {
        let started = Instant::now();
        let mut verdict = ScanVerdict::no_match();
        for (i, region) in extract_regions(text, &self.policy).into_iter().enumerate() {
            if self.scan_region(i, region, &mut verdict) {
                break;
            }
        }
        verdict.micros = started.elapsed().as_micros() as u64;
        verdict
    }

    fn record(&self, verdict: &mut ScanVerdict, run: DecoderRun, candidate: Option<Vec<u8>>) -> bool {
        let identity = candidate.and_then(|c| verify(&c, &self.registry, self.policy.scheme));
        let run = DecoderRun {
            candidate: run.candidate,
            verified: identity.is_some(),
            ..run
        };
        let layer = run.layer;
        verdict.runs.push(run);
        if let Some(id) = identity {
            if !verdict.matched {
                verdict.matched = true;
                verdict.identity = Some(id);
                verdict.layer = Some(layer);
            }
            return self.policy.early_terminate;
        }
        false
    }

    /// Returns true when scanning should stop.
    fn scan_region(&self, region: usize, text: &str, verdict: &mut ScanVerdict) -> bool {
        let codecs: [&dyn EmbeddingLayer; 3] = [&WhitespaceCodec, &ZeroWidthCodec, &HomoglyphCodec];
        let mut current = text.to_string();
        for depth in 1..=self.policy.max_strip_depth.max(1) {
            let before = current.clone();
            for codec in codecs {
                let t = Instant::now();
                let candidate = codec.decode(&current);
                let run = DecoderRun {
                    layer: codec.method(),
                    region,
                    depth,
                    candidate: candidate.is_some(),
                    verified: false,
                    micros: t.elapsed().as_micros() as u64,
                };
                if self.record(verdict, run, candidate) {
                    return true;
                }
                current = codec.strip_encoding(&current);
            }
            if current == before {
                break;
            }
        }
        let t = Instant::now();
        let candidate = lm_decode(&canonicalize(&current), &self.model, &self.lm);
        let run = DecoderRun {
            layer: Method::Lm,
            region,
            depth: 0,
            candidate: candidate.is_some(),
            verified: false,
            micros: t.elapsed().as_micros() as u64,
        };
        self.record(verdict, run, candidate)
    }
}

/// One-shot scan with the embedded model.
pub fn scan(text: &str, registry: Arc<TokenRegistry>, policy: ScanPolicy) -> ScanVerdict {
    Scanner::with_default_model(registry, policy).scan(text)
}
