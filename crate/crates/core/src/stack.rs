//! Layer composition: named configurations M1–M7, encode in declared order,
//! decode in reverse with strip between layers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layer::{EmbeddingLayer, Method};
use crate::linguistic::{LinguisticCodec, LmParams, RefModel};
use crate::symbolic::{HomoglyphCodec, WhitespaceCodec, ZeroWidthCodec};
use crate::tokens::{verify, FramedPayload, ScanIdentity, Scheme, TokenRegistry, FRAME_HEADER_LEN};

/// Retries of a generative encode with a longer cover when a downstream
/// layer runs out of room.
pub const GENERATIVE_RETRIES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Symbolic layers on a supplied cover.
    A,
    /// Generated cover, then symbolic layers on it.
    B,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub name: String,
    pub layers: Vec<Method>,
    pub mode: Mode,
}

impl StackConfig {
    pub const NAMES: [&'static str; 7] = ["M1", "M2", "M3", "M4", "M5", "M6", "M7"];

    pub fn named(name: &str) -> Option<Self> {
        use Method::*;
        let (layers, mode) = match name.to_ascii_uppercase().as_str() {
            "M1" => (vec![Ws], Mode::None),
            "M2" => (vec![Zw], Mode::None),
            "M3" => (vec![Hg], Mode::None),
            "M4" => (vec![Lm], Mode::None),
            "M5" => (vec![Ws, Zw, Hg], Mode::A),
            "M6" => (vec![Lm, Zw, Hg], Mode::B),
            "M7" => (vec![Lm, Ws, Zw, Hg], Mode::None),
            _ => return None,
        };
        Some(StackConfig {
            name: name.to_ascii_uppercase(),
            layers,
            mode,
        })
    }

    pub fn all() -> Vec<Self> {
        Self::NAMES.iter().filter_map(|n| Self::named(n)).collect()
    }

    /// An ad hoc layer list. LM may only come first and no method repeats.
    pub fn custom(layers: Vec<Method>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("empty layer list"));
        }
        if layers.iter().skip(1).any(|&m| m == Method::Lm) {
            return Err(Error::invalid("LM generates its cover and must be the first layer"));
        }
        for (i, m) in layers.iter().enumerate() {
            if layers[..i].contains(m) {
                return Err(Error::invalid(format!("{m} appears twice")));
            }
        }
        let mode = match (layers.len(), layers[0]) {
            (1, _) => Mode::None,
            (_, Method::Lm) => Mode::B,
            _ => Mode::A,
        };
        let name = layers.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        Ok(StackConfig { name, layers, mode })
    }

    /// The first layer generates the cover.
    pub fn is_generative(&self) -> bool {
        self.layers.first() == Some(&Method::Lm)
    }

    pub fn decode_order(&self) -> impl Iterator<Item = Method> + '_ {
        self.layers.iter().rev().copied()
    }
}

impl fmt::Display for StackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for StackConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(c) = Self::named(s.trim()) {
            return Ok(c);
        }
        let layers = s
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<Method>>>()?;
        Self::custom(layers)
    }
}

/// Warnings for compositions with known cross-layer interference.
pub fn validate_composition(config: &StackConfig) -> Vec<String> {
    let lm = config.layers.iter().position(|&m| m == Method::Lm);
    let ws = config.layers.iter().position(|&m| m == Method::Ws);
    match (lm, ws) {
        (Some(l), Some(w)) if w > l => vec![format!(
            "{}: WS is stacked above LM; deleting non-ASCII characters removes the \
             substituted spaces, merges adjacent LM tokens and loses the LM layer",
            config.name
        )],
        _ => Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerOutcome {
    pub layer: Method,
    pub candidate: Option<Vec<u8>>,
    pub identity: Option<ScanIdentity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StackResult {
    /// In encode order.
    pub per_layer: Vec<LayerOutcome>,
    pub any: bool,
    pub verified_identity: Option<ScanIdentity>,
    /// Text left after every symbolic layer was stripped.
    pub restored: String,
}

impl StackResult {
    pub fn layer(&self, m: Method) -> Option<&LayerOutcome> {
        self.per_layer.iter().find(|o| o.layer == m)
    }

    pub fn verified(&self, m: Method) -> bool {
        self.layer(m).is_some_and(|o| o.identity.is_some())
    }
}

/// Encoder and decoder for stacked configurations.
#[derive(Clone, Debug)]
pub struct Stack {
    model: Arc<RefModel>,
    lm: LmParams,
}

impl Stack {
    pub fn new(model: Arc<RefModel>, lm: LmParams) -> Self {
        Stack { model, lm }
    }

    /// Embedded reference model with the scheme's padding default.
    pub fn for_scheme(scheme: Scheme) -> Self {
        Self::new(crate::linguistic::default_model(), LmParams::for_scheme(scheme))
    }

    pub fn model(&self) -> &Arc<RefModel> {
        &self.model
    }

    pub fn lm_params(&self) -> &LmParams {
        &self.lm
    }

    fn codec(&self, m: Method, lm: &LmParams) -> Box<dyn EmbeddingLayer> {
        match m {
            Method::Ws => Box::new(WhitespaceCodec),
            Method::Zw => Box::new(ZeroWidthCodec),
            Method::Hg => Box::new(HomoglyphCodec),
            Method::Lm => Box::new(LinguisticCodec::new(self.model.clone(), lm.clone())),
        }
    }

    /// Cover length the generated text needs so that the symbolic layers
    /// after LM can hold a frame of `frame_len` bytes, from the model's mean
    /// token length and homoglyph density, plus 25%.
    pub fn derived_min_cover_chars(&self, config: &StackConfig, frame_len: usize) -> usize {
        let stats = self.model.surface_stats();
        let (chars, tokens) = stats.token_chars;
        let (eligible, _) = stats.eligible_chars;
        // characters per token including the joining space
        let span = (chars + tokens) as usize;
        let tokens = tokens as usize;
        let need = config
            .layers
            .iter()
            .skip_while(|&&m| m == Method::Lm)
            .map(|m| match m {
                Method::Ws => (4 * frame_len + 1) * span / tokens + 1,
                Method::Zw => 4 * frame_len + 1,
                Method::Hg => (8 * frame_len * span).div_ceil(eligible.max(1) as usize),
                Method::Lm => 0,
            })
            .max()
            .unwrap_or(0);
        need * 5 / 4
    }

    /// Embeds `payload` through every layer of `config`.
    ///
    /// Non-generative configurations need a `cover`; generative ones ignore
    /// it. Fails with [`Error::InsufficientCapacity`] naming the first layer
    /// that could not hold the frame.
    pub fn encode(&self, config: &StackConfig, payload: &[u8], cover: Option<&str>) -> Result<String> {
        let mut stages = self.encode_stages(config, payload, cover)?;
        Ok(stages.pop().unwrap_or_default())
    }

    /// Like [`encode`](Self::encode) but returns the text after each layer.
    pub fn encode_stages(
        &self,
        config: &StackConfig,
        payload: &[u8],
        cover: Option<&str>,
    ) -> Result<Vec<String>> {
        let framed = FramedPayload::new(payload)?;
        if !config.is_generative() {
            let cover = cover.ok_or_else(|| {
                Error::invalid(format!("{} embeds into an existing cover; none given", config.name))
            })?;
            return self.encode_layers(config, &framed, cover, &self.lm);
        }
        let mut lm = self.lm.clone();
        lm.min_cover_chars = lm
            .min_cover_chars
            .max(self.derived_min_cover_chars(config, framed.len()));
        let mut attempt = 0;
        loop {
            match self.encode_layers(config, &framed, "", &lm) {
                Err(Error::InsufficientCapacity { layer, .. })
                    if layer != Method::Lm && attempt < GENERATIVE_RETRIES =>
                {
                    attempt += 1;
                    lm.min_cover_chars = lm.min_cover_chars * 3 / 2 + 1;
                }
                other => return other,
            }
        }
    }

    fn encode_layers(
        &self,
        config: &StackConfig,
        framed: &FramedPayload,
        cover: &str,
        lm: &LmParams,
    ) -> Result<Vec<String>> {
        let needed = framed.len() - FRAME_HEADER_LEN;
        let mut text = cover.to_string();
        let mut stages = Vec::with_capacity(config.layers.len());
        for &m in &config.layers {
            let codec = self.codec(m, lm);
            let available = codec.capacity(&text);
            let short = || Error::InsufficientCapacity {
                layer: m,
                available,
                needed,
            };
            if available < needed {
                return Err(short());
            }
            text = codec.encode(&text, framed).ok_or_else(short)?;
            stages.push(text.clone());
        }
        Ok(stages)
    }

    /// Decodes every layer in reverse order, stripping each one before the
    /// next, and verifies each candidate against `registry`.
    pub fn decode(
        &self,
        config: &StackConfig,
        text: &str,
        registry: &TokenRegistry,
        scheme: Scheme,
    ) -> StackResult {
        let mut current = text.to_string();
        let mut per_layer = Vec::with_capacity(config.layers.len());
        for m in config.decode_order() {
            let codec = self.codec(m, &self.lm);
            let candidate = codec.decode(&current);
            let identity = candidate.as_deref().and_then(|c| verify(c, registry, scheme));
            per_layer.push(LayerOutcome {
                layer: m,
                candidate,
                identity,
            });
            current = codec.strip_encoding(&current);
        }
        per_layer.reverse();
        let verified_identity = per_layer.iter().find_map(|o| o.identity.clone());
        StackResult {
            any: verified_identity.is_some(),
            per_layer,
            verified_identity,
            restored: current,
        }
    }
}

/// [`Stack::encode`] with capacity failures mapped to `None`.
pub fn stack_encode(
    stack: &Stack,
    config: &StackConfig,
    payload: &[u8],
    cover: Option<&str>,
) -> Result<Option<String>> {
    match stack.encode(config, payload, cover) {
        Ok(t) => Ok(Some(t)),
        Err(Error::InsufficientCapacity { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::{derive_hmac_token, OrgKey};

    fn setup() -> (Stack, TokenRegistry, Vec<u8>) {
        let key = OrgKey::new(b"stack-test-key-0123456789".to_vec()).unwrap();
        let token = derive_hmac_token(&key, "doc-1").unwrap();
        let mut reg = TokenRegistry::new();
        reg.insert_token(token);
        (Stack::for_scheme(Scheme::Hmac), reg, token.as_bytes().to_vec())
    }

    #[test]
    fn named_configs() {
        let all = StackConfig::all();
        assert_eq!(all.len(), 7);
        assert_eq!(all[4].layers, vec![Method::Ws, Method::Zw, Method::Hg]);
        assert_eq!(all[4].mode, Mode::A);
        assert_eq!(all[5].mode, Mode::B);
        assert_eq!(all[6].layers[..2], [Method::Lm, Method::Ws]);
        assert_eq!("m6".parse::<StackConfig>().unwrap(), all[5]);
        let c: StackConfig = "HG,ZW".parse().unwrap();
        assert_eq!(c.layers, vec![Method::Hg, Method::Zw]);
        assert_eq!(c.decode_order().collect::<Vec<_>>(), vec![Method::Zw, Method::Hg]);
        assert!("ZW,LM".parse::<StackConfig>().is_err());
        assert!("ZW,ZW".parse::<StackConfig>().is_err());
        assert!("QQ".parse::<StackConfig>().is_err());
    }

    #[test]
    fn composition_warnings() {
        let m = |n| StackConfig::named(n).unwrap();
        assert!(validate_composition(&m("M5")).is_empty());
        assert!(validate_composition(&m("M6")).is_empty());
        assert_eq!(validate_composition(&m("M7")).len(), 1);
    }

    #[test]
    fn mode_a_needs_cover_and_capacity() {
        let (stack, _, token) = setup();
        let m5 = StackConfig::named("M5").unwrap();
        assert!(matches!(
            stack.encode(&m5, &token, None),
            Err(Error::InvalidArgument(_))
        ));
        let no_spaces = "Abcdefghijklmnopqrstuvwxyz".repeat(20);
        assert!(matches!(
            stack.encode(&m5, &token, Some(&no_spaces)),
            Err(Error::InsufficientCapacity { layer: Method::Ws, .. })
        ));
        assert_eq!(stack_encode(&stack, &m5, &token, Some(&no_spaces)).unwrap(), None);
    }

    #[test]
    fn every_config_round_trips_at_tier0() {
        let (stack, reg, token) = setup();
        let cover = &crate::corpus::embedded()[0].text;
        for config in StackConfig::all() {
            let text = stack.encode(&config, &token, Some(cover)).unwrap();
            let result = stack.decode(&config, &text, &reg, Scheme::Hmac);
            assert!(result.any, "{config}");
            for m in &config.layers {
                assert!(result.verified(*m), "{config} {m}");
            }
        }
    }

    #[test]
    fn generative_stack_restores_lm_cover() {
        let (stack, reg, token) = setup();
        let m7 = StackConfig::named("M7").unwrap();
        let text = stack.encode(&m7, &token, None).unwrap();
        let stages = stack.encode_stages(&m7, &token, None).unwrap();
        assert_eq!(stages.len(), 4);
        assert_eq!(stages[3], text);
        let result = stack.decode(&m7, &text, &reg, Scheme::Hmac);
        assert_eq!(result.restored, stages[0]);
        let lm = stack.encode(&StackConfig::named("M4").unwrap(), &token, None).unwrap();
        assert!(result.restored.starts_with(&lm));
    }
}
