use crate::layer::{EmbeddingLayer, Method};
use crate::tokens::FramedPayload;

use super::{body_of, bytes_for_units, from_base4, to_base4};

/// Zero-width space, non-joiner, joiner and no-break space (BOM).
pub const ZW_ALPHABET: [char; 4] = ['\u{200B}', '\u{200C}', '\u{200D}', '\u{FEFF}'];

fn digit_of(c: char) -> Option<u8> {
    ZW_ALPHABET.iter().position(|&a| a == c).map(|d| d as u8)
}

pub fn is_zw_symbol(c: char) -> bool {
    digit_of(c).is_some()
}

fn is_line_break(c: char) -> bool {
    c == '\n' || c == '\r'
}

/// Gaps between consecutive characters where neither side is a line break.
/// Gap `k` sits right after the returned char index.
fn gap_positions(chars: &[char]) -> Vec<usize> {
    chars
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !is_line_break(w[0]) && !is_line_break(w[1]))
        .map(|(i, _)| i)
        .collect()
}

pub fn eligible_gaps(text: &str) -> usize {
    let chars: Vec<char> = text.chars().filter(|&c| !is_zw_symbol(c)).collect();
    gap_positions(&chars).len()
}

/// `⌊gaps/4⌋ − 2`. On single-line text `gaps = visible − 1`.
pub fn capacity(text: &str) -> usize {
    bytes_for_units(eligible_gaps(text), 4)
}

/// Inserts digit `i` of `n` into gap `⌊i·m/n⌋` of the `m` eligible gaps.
pub fn encode(text: &str, payload: &FramedPayload) -> Option<String> {
    let chars: Vec<char> = text.chars().filter(|&c| !is_zw_symbol(c)).collect();
    let gaps = gap_positions(&chars);
    let digits = to_base4(payload.as_bytes());
    let (n, m) = (digits.len(), gaps.len());
    if m < n {
        return None;
    }
    // insert_after[j] = digit placed right after char j
    let mut insert_after: Vec<Option<u8>> = vec![None; chars.len()];
    for (i, &d) in digits.iter().enumerate() {
        insert_after[gaps[i * m / n]] = Some(d);
    }
    let mut out = String::with_capacity(text.len() + 3 * n);
    for (c, extra) in chars.iter().zip(insert_after) {
        out.push(*c);
        if let Some(d) = extra {
            out.push(ZW_ALPHABET[d as usize]);
        }
    }
    Some(out)
}

pub fn decode(text: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = text.chars().filter_map(digit_of).collect();
    if digits.is_empty() {
        return None;
    }
    body_of(&from_base4(&digits))
}

pub fn strip(text: &str) -> String {
    text.chars().filter(|&c| !is_zw_symbol(c)).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroWidthCodec;

impl EmbeddingLayer for ZeroWidthCodec {
    fn method(&self) -> Method {
        Method::Zw
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
