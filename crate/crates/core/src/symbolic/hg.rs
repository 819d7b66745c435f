use crate::layer::{EmbeddingLayer, Method};
use crate::tokens::FramedPayload;

use super::{body_of, bytes_for_units, from_bits, to_bits};

/// Latin letters and their Cyrillic confusables (7 lowercase, 11 uppercase).
pub const HOMOGLYPH_PAIRS: [(char, char); 18] = [
    ('a', '\u{0430}'),
    ('c', '\u{0441}'),
    ('e', '\u{0435}'),
    ('o', '\u{043E}'),
    ('p', '\u{0440}'),
    ('x', '\u{0445}'),
    ('y', '\u{0443}'),
    ('A', '\u{0410}'),
    ('B', '\u{0412}'),
    ('C', '\u{0421}'),
    ('E', '\u{0415}'),
    ('H', '\u{041D}'),
    ('K', '\u{041A}'),
    ('M', '\u{041C}'),
    ('O', '\u{041E}'),
    ('P', '\u{0420}'),
    ('T', '\u{0422}'),
    ('X', '\u{0425}'),
];

pub fn to_cyrillic(c: char) -> Option<char> {
    HOMOGLYPH_PAIRS
        .iter()
        .find(|(l, _)| *l == c)
        .map(|&(_, cy)| cy)
}

pub fn to_latin(c: char) -> Option<char> {
    HOMOGLYPH_PAIRS
        .iter()
        .find(|(_, cy)| *cy == c)
        .map(|&(l, _)| l)
}

pub fn is_cyrillic_twin(c: char) -> bool {
    to_latin(c).is_some()
}

/// Either side of any pair.
pub fn is_eligible(c: char) -> bool {
    to_cyrillic(c).is_some() || is_cyrillic_twin(c)
}

pub fn capacity(text: &str) -> usize {
    bytes_for_units(text.chars().filter(|&c| is_eligible(c)).count(), 8)
}

/// Normalizes every Cyrillic twin to Latin, then sets the first
/// `8·len(frame)` eligible letters from the payload bits.
pub fn encode(text: &str, payload: &FramedPayload) -> Option<String> {
    let cover = strip(text);
    let bits = to_bits(payload.as_bytes());
    if cover.chars().filter(|&c| is_eligible(c)).count() < bits.len() {
        return None;
    }
    let mut bits = bits.into_iter();
    Some(
        cover
            .chars()
            .map(|c| match to_cyrillic(c) {
                Some(cy) => match bits.next() {
                    Some(true) => cy,
                    _ => c,
                },
                None => c,
            })
            .collect(),
    )
}

pub fn decode(text: &str) -> Option<Vec<u8>> {
    let bits: Vec<bool> = text
        .chars()
        .filter(|&c| is_eligible(c))
        .map(is_cyrillic_twin)
        .collect();
    body_of(&from_bits(&bits))
}

pub fn strip(text: &str) -> String {
    text.chars().map(|c| to_latin(c).unwrap_or(c)).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HomoglyphCodec;

impl EmbeddingLayer for HomoglyphCodec {
    fn method(&self) -> Method {
        Method::Hg
    }

    fn encode(&self, text: &str, payload: &FramedPayload) -> Option<String> {
        encode(text, payload)
    }

    fn decode(&self, text: &str) -> Option<Vec<u8>> {
        decode(text)
    }

    fn strip_encoding(&self, text: &str) -> String {
        strip(text)
    }

    fn capacity(&self, text: &str) -> usize {
        capacity(text)
    }
}
