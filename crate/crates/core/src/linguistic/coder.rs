//! Fixed-point interval arithmetic shared by the LM encoder and decoder.

use serde::Serialize;

/// Interval bounds after one token, plus the number of message bits
/// settled so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoderState {
    pub low: u64,
    pub high: u64,
    pub bits: usize,
}

/// `[low, high]`, both inclusive.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Interval {
    low: u64,
    high: u64,
}

impl Interval {
    pub fn full() -> Self {
        Interval {
            low: 0,
            high: u64::MAX,
        }
    }

    pub fn low(&self) -> u64 {
        self.low
    }

    pub fn width(&self) -> u128 {
        (self.high - self.low) as u128 + 1
    }

    /// Offsets (relative to `low`) of the `K + 1` subinterval boundaries.
    /// Token `i` owns `[b[i], b[i+1])` and every token owns at least one
    /// unit, so `scores.len()` must not exceed the width.
    pub fn partition(&self, scores: &[u64]) -> Vec<u128> {
        let w = self.width();
        let k = scores.len() as u128;
        debug_assert!(k >= 1 && k <= w);
        let total: u128 = scores.iter().map(|&s| s as u128).sum();
        let spare = w - k;
        let mut bounds = Vec::with_capacity(scores.len() + 1);
        let mut cum = 0u128;
        for (i, &s) in scores.iter().enumerate() {
            bounds.push(i as u128 + spare * cum / total);
            cum += s as u128;
        }
        bounds.push(w);
        bounds
    }

    /// Narrows to offsets `[start, end)`.
    pub fn narrow(&mut self, start: u128, end: u128) {
        let low = self.low as u128;
        self.high = (low + end - 1) as u64;
        self.low = (low + start) as u64;
    }

    /// Shifts out settled leading bits until the top bits of `low` and
    /// `high` differ, which leaves a width of at least two.
    pub fn renormalize(&mut self, mut settled: impl FnMut(bool)) {
        while (self.low ^ self.high) >> 63 == 0 {
            settled(self.low >> 63 == 1);
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    pub fn state(&self, bits: usize) -> CoderState {
        CoderState {
            low: self.low,
            high: self.high,
            bits,
        }
    }
}

/// Index of the subinterval containing `offset`.
pub(crate) fn locate(bounds: &[u128], offset: u128) -> usize {
    bounds.partition_point(|&b| b <= offset) - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_covers_interval_without_empty_slots() {
        let iv = Interval::full();
        let b = iv.partition(&[1000, 1, 1, 50]);
        assert_eq!(b[0], 0);
        assert_eq!(*b.last().unwrap(), iv.width());
        assert!(b.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tiny_interval_still_gives_each_token_a_unit() {
        let mut iv = Interval::full();
        iv.narrow(0, 3);
        assert_eq!(iv.width(), 3);
        let b = iv.partition(&[u64::MAX / 4, 1, 1]);
        assert_eq!(b, vec![0, 1, 2, 3]);
    }

    #[test]
    fn locate_is_half_open() {
        let b = [0u128, 5, 9, 20];
        assert_eq!(locate(&b, 0), 0);
        assert_eq!(locate(&b, 4), 0);
        assert_eq!(locate(&b, 5), 1);
        assert_eq!(locate(&b, 19), 2);
    }

    #[test]
    fn renormalization_emits_common_prefix() {
        let mut iv = Interval::full();
        // [0b1010..., 0b1011...]: prefix 101 is settled
        iv.narrow(0xA000_0000_0000_0000, 0xC000_0000_0000_0000);
        let mut bits = Vec::new();
        iv.renormalize(|b| bits.push(b));
        assert_eq!(bits, vec![true, false, true]);
        assert_eq!(iv.low(), 0);
        assert_eq!(iv.width(), 1u128 << 64);
    }
}
