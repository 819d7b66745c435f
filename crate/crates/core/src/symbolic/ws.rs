use crate::layer::{EmbeddingLayer, Method};
use crate::tokens::FramedPayload;

use super::{body_of, bytes_for_units, from_base4, to_base4};

/// Punctuation space, thin space, narrow no-break space, medium mathematical
/// space. Index is the digit value.
pub const WS_ALPHABET: [char; 4] = ['\u{2008}', '\u{2009}', '\u{202F}', '\u{205F}'];

fn digit_of(c: char) -> Option<u8> {
    WS_ALPHABET.iter().position(|&a| a == c).map(|d| d as u8)
}

pub fn is_ws_symbol(c: char) -> bool {
    digit_of(c).is_some()
}

/// Counts ASCII spaces plus existing symbols, which encode turns back into
/// spaces first.
pub fn capacity(text: &str) -> usize {
    bytes_for_units(text.chars().filter(|&c| c == ' ' || is_ws_symbol(c)).count(), 4)
}

/// Replaces the first `4·len(frame)` ASCII spaces with alphabet symbols.
pub fn encode(text: &str, payload: &FramedPayload) -> Option<String> {
    let cover = strip(text);
    let digits = to_base4(payload.as_bytes());
    if cover.chars().filter(|&c| c == ' ').count() < digits.len() {
        return None;
    }
    let mut digits = digits.into_iter();
    Some(
        cover
            .chars()
            .map(|c| match c {
                ' ' => digits.next().map_or(' ', |d| WS_ALPHABET[d as usize]),
                other => other,
            })
            .collect(),
    )
}

pub fn decode(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text.chars().filter_map(digit_of).collect();
    if digits.is_empty() {
        return None;
    }
    body_of(&from_base4(&digits))
}

pub fn strip(text: &str) -> String {
    text.chars()
        .map(|c| if is_ws_symbol(c) { ' ' } else { c })
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceCodec;

impl EmbeddingLayer for WhitespaceCodec {
    fn method(&self) -> Method {
        Method::Ws
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
