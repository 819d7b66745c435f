//! Character-level codecs on disjoint Unicode surfaces.
//!
//! | codec | surface                         | symbol            | order        |
//! |-------|---------------------------------|-------------------|--------------|
//! | WS    | existing U+0020 spaces          | base-4 substitute | head-first   |
//! | ZW    | gaps between visible characters | base-4 insert     | stride       |
//! | HG    | Latin letters with a Cyrillic twin | 1-bit substitute | head-first |
//!
//! WS and ZW emit base-4 digits LSB-first within each byte; HG emits bits
//! MSB-first. All three operate on the full framed payload.

pub mod hg;
pub mod ws;
pub mod zw;

pub use hg::{HomoglyphCodec, HOMOGLYPH_PAIRS};
pub use ws::{WhitespaceCodec, WS_ALPHABET};
pub use zw::{ZeroWidthCodec, ZW_ALPHABET};

use crate::tokens::unframe;

/// Base-4 digits of `bytes`, four per byte, least significant first.
pub(crate) fn to_base4(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..4).map(move |i| (b >> (2 * i)) & 0b11))
        .collect()
}

/// Inverse of [`to_base4`]; an incomplete trailing group is dropped.
pub(crate) fn from_base4(digits: &[u8]) -> Vec<u8> {
    digits
        .chunks_exact(4)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &d)| acc | ((d & 0b11) << (2 * i)))
        })
        .collect()
}

/// Bits of `bytes`, most significant first.
pub(crate) fn to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| b & (1 << i) != 0))
        .collect()
}

pub(crate) fn from_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks_exact(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
        .collect()
}

pub(crate) fn body_of(raw: &[u8]) -> Option<Vec<u8>> {
    unframe(raw).ok().map(<[u8]>::to_vec)
}

/// `⌊units / per_byte⌋ − 2`, clamped at zero.
pub(crate) fn bytes_for_units(units: usize, per_byte: usize) -> usize {
    (units / per_byte).saturating_sub(crate::tokens::FRAME_HEADER_LEN)
}
