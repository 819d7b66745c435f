//! Generative cover text: arithmetic coding over a word model.
//!
//! The encoder reads the framed payload as a binary fraction and walks the
//! model, at each step emitting the token whose subinterval contains it.
//! The decoder replays the same walk from the observed tokens.

pub mod coder;
pub mod model;

use std::sync::{Arc, OnceLock};

use crate::layer::{EmbeddingLayer, Method};
use crate::symbolic::{hg, zw};
use crate::tokens::{frame, FramedPayload, Scheme};
use crate::transport::collapse_whitespace;

pub use coder::CoderState;
pub use model::{RefModel, SurfaceStats, TokenId, Truncation};

use coder::{locate, Interval};

pub const DEFAULT_CONTEXT: &str = "the";
pub const DEFAULT_MAX_TOKENS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmParams {
    pub context_string: String,
    pub max_tokens: usize,
    pub min_cover_chars: usize,
    /// Zero-pad the frame to this many bytes; smaller values mean no padding.
    pub pad_to_bytes: usize,
    pub truncation_min_k: usize,
    pub truncation_max_k: usize,
    pub mass_permille: u64,
}

impl Default for LmParams {
    fn default() -> Self {
        LmParams {
            context_string: DEFAULT_CONTEXT.to_string(),
            max_tokens: DEFAULT_MAX_TOKENS,
            min_cover_chars: 0,
            pad_to_bytes: 0,
            truncation_min_k: 2,
            truncation_max_k: 16,
            mass_permille: 900,
        }
    }
}

impl LmParams {
    /// Padding default for a scheme: twice the frame for HMAC, 1.3 times
    /// (rounded up) for EdDSA.
    pub fn for_scheme(scheme: Scheme) -> Self {
        let framed = scheme.token_len() + crate::tokens::FRAME_HEADER_LEN;
        let pad_to_bytes = match scheme {
            Scheme::Hmac => 2 * framed,
            Scheme::Eddsa => (framed * 13).div_ceil(10),
        };
        LmParams {
            pad_to_bytes,
            ..LmParams::default()
        }
    }

    fn truncation(&self) -> Truncation {
        Truncation {
            min_k: self.truncation_min_k.max(2),
            max_k: self.truncation_max_k.max(self.truncation_min_k.max(2)),
            mass_permille: self.mass_permille,
        }
    }
}

/// The model built from the embedded corpus, shared process-wide.
pub fn default_model() -> Arc<RefModel> {
    static MODEL: OnceLock<Arc<RefModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            Arc::new(
                RefModel::build(&crate::corpus::embedded_text())
                    .expect("embedded corpus is large enough"),
            )
        })
        .clone()
}

/// Strips ZW symbols and homoglyphs, collapses whitespace runs to single
/// spaces and trims.
pub fn canonicalize(text: &str) -> String {
    collapse_whitespace(&hg::strip(&zw::strip(text)))
        .trim_matches(' ')
        .to_string()
}

fn initial_context(model: &RefModel, context: &str) -> (TokenId, TokenId) {
    let ids: Vec<TokenId> = context
        .split_whitespace()
        .filter_map(model::normalize_word)
        .filter_map(|t| model.id(&t))
        .collect();
    match ids.as_slice() {
        [] => (model.bos(), model.bos()),
        [b] => (model.bos(), *b),
        [.., a, b] => (*a, *b),
    }
}

struct MessageBits {
    bytes: Vec<u8>,
}

impl MessageBits {
    fn bit(&self, i: usize) -> bool {
        self.bytes
            .get(i / 8)
            .is_some_and(|b| b & (0x80 >> (i % 8)) != 0)
    }

    fn len(&self) -> usize {
        self.bytes.len() * 8
    }

    fn window(&self, start: usize) -> u64 {
        (0..64).fold(0u64, |acc, i| (acc << 1) | self.bit(start + i) as u64)
    }
}

/// Cover text plus the coder state after every emitted token.
#[derive(Clone, Debug)]
pub struct LmEncoding {
    pub text: String,
    pub tokens: usize,
    pub message_bits: usize,
    pub trace: Vec<CoderState>,
}

impl LmEncoding {
    pub fn bits_per_token(&self) -> f64 {
        self.message_bits as f64 / self.tokens.max(1) as f64
    }
}

pub fn lm_encode(payload: &[u8], model: &RefModel, params: &LmParams) -> Option<String> {
    lm_encode_traced(payload, model, params).map(|e| e.text)
}

pub fn lm_encode_traced(
    payload: &[u8],
    model: &RefModel,
    params: &LmParams,
) -> Option<LmEncoding> {
    let mut bytes = frame(payload).ok()?;
    if bytes.len() < params.pad_to_bytes {
        bytes.resize(params.pad_to_bytes, 0);
    }
    let msg = MessageBits { bytes };
    let trunc = params.truncation();

    let mut iv = Interval::full();
    let mut pos = 0usize;
    let mut value = msg.window(0);
    let (mut a, mut b) = initial_context(model, &params.context_string);
    let mut text = String::new();
    let mut tokens = 0usize;
    let mut trace = Vec::new();

    while pos < msg.len() || text.len() < params.min_cover_chars {
        if tokens == params.max_tokens {
            return None;
        }
        let dist = model.truncated(a, b, iv.width(), &trunc);
        let scores: Vec<u64> = dist.iter().map(|e| e.1).collect();
        let bounds = iv.partition(&scores);
        let i = locate(&bounds, (value - iv.low()) as u128);
        iv.narrow(bounds[i], bounds[i + 1]);
        iv.renormalize(|bit| {
            debug_assert_eq!(bit, msg.bit(pos));
            value = (value << 1) | msg.bit(pos + 64) as u64;
            pos += 1;
        });
        trace.push(iv.state(pos));

        let w = dist[i].0;
        if tokens > 0 {
            text.push(' ');
        }
        text.push_str(model.token(w));
        tokens += 1;
        (a, b) = (b, w);
    }
    Some(LmEncoding {
        text,
        tokens,
        message_bits: msg.len(),
        trace,
    })
}

/// Walks the observed tokens through the model, calling `on_step` with the
/// bits settled so far after each one. Stops early when `on_step` returns
/// false; returns `None` if a token is outside the truncated distribution.
fn replay(
    text: &str,
    model: &RefModel,
    params: &LmParams,
    mut on_step: impl FnMut(&[bool], CoderState) -> bool,
) -> Option<()> {
    let canonical = canonicalize(text);
    let trunc = params.truncation();
    let mut iv = Interval::full();
    let (mut a, mut b) = initial_context(model, &params.context_string);
    let mut bits: Vec<bool> = Vec::new();
    for tok in canonical.split(' ').filter(|t| !t.is_empty()) {
        let w = model.id(tok)?;
        let dist = model.truncated(a, b, iv.width(), &trunc);
        let i = dist.iter().position(|e| e.0 == w)?;
        let scores: Vec<u64> = dist.iter().map(|e| e.1).collect();
        let bounds = iv.partition(&scores);
        iv.narrow(bounds[i], bounds[i + 1]);
        iv.renormalize(|bit| bits.push(bit));
        if !on_step(&bits, iv.state(bits.len())) {
            return Some(());
        }
        (a, b) = (b, w);
    }
    Some(())
}

/// Recovers the frame, then keeps replaying through the zero padding (as
/// far as the text reaches) and rejects any padding bit that is set.
///
/// The padding check matters: after the frame's last 1-bit the message
/// value sits on a dyadic boundary, so that bit can stay unsettled for many
/// tokens. A token lost in that stretch only puts one bit at risk; the
/// garbage it causes in the padding does not go unnoticed.
pub fn lm_decode(text: &str, model: &RefModel, params: &LmParams) -> Option<Vec<u8>> {
    let mut frame_bits = None;
    let mut settled = Vec::new();
    replay(text, model, params, |bits, _| {
        if bits.len() < 16 {
            return true;
        }
        let n = bits[..16]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let frame = 16 + 8 * n;
        frame_bits = Some(frame);
        settled = bits.to_vec();
        n > 0 && bits.len() < frame.max(8 * params.pad_to_bytes)
    })?;
    let frame = frame_bits?;
    if frame == 16 || settled.len() < frame {
        return None;
    }
    let padded = frame.max(8 * params.pad_to_bytes);
    if settled[frame..settled.len().min(padded)].iter().any(|&b| b) {
        return None;
    }
    Some(crate::symbolic::from_bits(&settled[16..frame]))
}

/// Coder states for every token of `text`, for checking that encoder and
/// decoder stay in lockstep.
pub fn lm_replay_trace(text: &str, model: &RefModel, params: &LmParams) -> Option<Vec<CoderState>> {
    let mut trace = Vec::new();
    replay(text, model, params, |_, s| {
        trace.push(s);
        true
    })?;
    Some(trace)
}

/// LM as a stack layer. Generative: the input text is ignored on encode.
#[derive(Clone, Debug)]
pub struct LinguisticCodec {
    model: Arc<RefModel>,
    params: LmParams,
}

impl LinguisticCodec {
    pub fn new(model: Arc<RefModel>, params: LmParams) -> Self {
        LinguisticCodec { model, params }
    }

    pub fn model(&self) -> &Arc<RefModel> {
        &self.model
    }

    pub fn params(&self) -> &LmParams {
        &self.params
    }
}

impl EmbeddingLayer for LinguisticCodec {
    fn method(&self) -> Method {
        Method::Lm
    }

    fn encode(&self, _text: &str, payload: &FramedPayload) -> Option<String> {
        lm_encode(payload.body(), &self.model, &self.params)
    }

    fn decode(&self, text: &str) -> Option<Vec<u8>> {
        lm_decode(text, &self.model, &self.params)
    }

    fn strip_encoding(&self, text: &str) -> String {
        text.to_string()
    }

    /// Worst case of one bit per token.
    fn capacity(&self, _text: &str) -> usize {
        (self.params.max_tokens / 8).saturating_sub(crate::tokens::FRAME_HEADER_LEN)
    }
}
