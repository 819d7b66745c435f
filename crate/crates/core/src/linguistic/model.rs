//! Order-2 word model with exact integer next-token scores.
//!
//! The score of `w` after context `(a, b)` is
//!
//! ```text
//! 1 + c1(w) + BIGRAM_WEIGHT·c2(b, w) + TRIGRAM_WEIGHT·c3(a, b, w)
//! ```
//!
//! i.e. add-one smoothing over an integer interpolation of trigram, bigram
//! and unigram counts. Every quantity is an integer, so two machines holding
//! the same model bytes compute identical distributions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAX_VOCAB: usize = 4096;
pub const MIN_CORPUS_WORDS: usize = 10_000;
pub const BIGRAM_WEIGHT: u64 = 64;
pub const TRIGRAM_WEIGHT: u64 = 1024;
pub const FORMAT_HEADER: &str = "stegcanary-refmodel 1";

pub type TokenId = u32;

/// Vocabulary tokens use only characters that survive every transform up
/// to T10: lowercase ASCII letters, digits and `.`.
pub fn is_vocab_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '.')
        && !tok.contains("..")
}

/// Lowercases a corpus word and trims surrounding punctuation (a trailing
/// period is kept). Returns `None` if the result is not a vocabulary token.
pub fn normalize_word(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let trimmed = lower
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_end_matches(|c: char| !(c.is_alphanumeric() || c == '.'));
    is_vocab_token(trimmed).then(|| trimmed.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefModel {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    /// (a, b) → followers sorted by id
    trigram: HashMap<(TokenId, TokenId), Vec<(TokenId, u64)>>,
    trigram_total: HashMap<(TokenId, TokenId), u64>,
    bigram: HashMap<TokenId, Vec<(TokenId, u64)>>,
    bigram_total: HashMap<TokenId, u64>,
    unigram: Vec<u64>,
    unigram_total: u64,
    /// ids ordered by (unigram count desc, id asc)
    by_unigram: Vec<TokenId>,
}

/// Truncation settings for [`RefModel::truncated`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub min_k: usize,
    pub max_k: usize,
    /// Keep the smallest head whose score mass reaches this share (per mille)
    /// of the full distribution.
    pub mass_permille: u64,
}

impl RefModel {
    /// Builds a model from raw prose.
    pub fn build(corpus: &str) -> Result<Self> {
        let words = corpus.split_whitespace().count();
        if words < MIN_CORPUS_WORDS {
            return Err(Error::invalid(format!(
                "corpus has {words} words, need at least {MIN_CORPUS_WORDS}"
            )));
        }
        let stream: Vec<String> = corpus.split_whitespace().filter_map(normalize_word).collect();

        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in &stream {
            *freq.entry(t.as_str()).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(MAX_VOCAB);
        let mut vocab: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        vocab.sort();
        let index: HashMap<&str, TokenId> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as TokenId))
            .collect();

        let bos = vocab.len() as TokenId;
        let mut counts: BTreeMap<(TokenId, TokenId, TokenId), u64> = BTreeMap::new();
        let (mut a, mut b) = (bos, bos);
        for t in &stream {
            let Some(&w) = index.get(t.as_str()) else {
                continue;
            };
            *counts.entry((a, b, w)).or_default() += 1;
            (a, b) = (b, w);
        }
        Ok(Self::from_counts(vocab, counts))
    }

    fn from_counts(vocab: Vec<String>, counts: BTreeMap<(TokenId, TokenId, TokenId), u64>) -> Self {
        let v = vocab.len();
        let mut trigram: HashMap<(TokenId, TokenId), Vec<(TokenId, u64)>> = HashMap::new();
        let mut trigram_total: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut bigram_map: BTreeMap<(TokenId, TokenId), u64> = BTreeMap::new();
        let mut unigram = vec![0u64; v];
        for (&(a, b, w), &c) in &counts {
            trigram.entry((a, b)).or_default().push((w, c));
            *trigram_total.entry((a, b)).or_default() += c;
            *bigram_map.entry((b, w)).or_default() += c;
            unigram[w as usize] += c;
        }
        let mut bigram: HashMap<TokenId, Vec<(TokenId, u64)>> = HashMap::new();
        let mut bigram_total: HashMap<TokenId, u64> = HashMap::new();
        for ((b, w), c) in bigram_map {
            bigram.entry(b).or_default().push((w, c));
            *bigram_total.entry(b).or_default() += c;
        }
        let mut by_unigram: Vec<TokenId> = (0..v as TokenId).collect();
        by_unigram.sort_by(|&x, &y| unigram[y as usize].cmp(&unigram[x as usize]).then(x.cmp(&y)));
        let unigram_total = unigram.iter().sum();
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        RefModel {
            vocab,
            index,
            trigram,
            trigram_total,
            bigram,
            bigram_total,
            unigram,
            unigram_total,
            by_unigram,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Context-only sentinel marking the start of a stream.
    pub fn bos(&self) -> TokenId {
        self.vocab.len() as TokenId
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.vocab[id as usize]
    }

    fn lookup(list: Option<&Vec<(TokenId, u64)>>, w: TokenId) -> u64 {
        list.and_then(|l| l.binary_search_by_key(&w, |e| e.0).ok().map(|i| l[i].1))
            .unwrap_or(0)
    }

    /// Score of `w` after `(a, b)`.
    pub fn score(&self, a: TokenId, b: TokenId, w: TokenId) -> u64 {
        1 + self.unigram[w as usize]
            + BIGRAM_WEIGHT * Self::lookup(self.bigram.get(&b), w)
            + TRIGRAM_WEIGHT * Self::lookup(self.trigram.get(&(a, b)), w)
    }

    /// Sum of [`score`](Self::score) over the whole vocabulary.
    pub fn total_score(&self, a: TokenId, b: TokenId) -> u64 {
        self.vocab.len() as u64
            + self.unigram_total
            + BIGRAM_WEIGHT * self.bigram_total.get(&b).copied().unwrap_or(0)
            + TRIGRAM_WEIGHT * self.trigram_total.get(&(a, b)).copied().unwrap_or(0)
    }

    /// The full distribution after `(a, b)`, ordered by (score desc, id asc).
    pub fn ranked(&self, a: TokenId, b: TokenId) -> Vec<(TokenId, u64)> {
        let mut all: Vec<(TokenId, u64)> = (0..self.vocab.len() as TokenId)
            .map(|w| (w, self.score(a, b, w)))
            .collect();
        all.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        all
    }

    /// The top `max_k` entries of [`ranked`](Self::ranked) without scoring
    /// the whole vocabulary: any token outside the trigram and bigram
    /// followers scores `1 + c1`, so the unigram head bounds it.
    pub fn head(&self, a: TokenId, b: TokenId, max_k: usize) -> Vec<(TokenId, u64)> {
        let mut ids: Vec<TokenId> = Vec::new();
        if let Some(l) = self.trigram.get(&(a, b)) {
            ids.extend(l.iter().map(|e| e.0));
        }
        if let Some(l) = self.bigram.get(&b) {
            ids.extend(l.iter().map(|e| e.0));
        }
        ids.extend(self.by_unigram.iter().take(max_k));
        ids.sort_unstable();
        ids.dedup();
        let mut scored: Vec<(TokenId, u64)> =
            ids.into_iter().map(|w| (w, self.score(a, b, w))).collect();
        scored.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        scored.truncate(max_k);
        scored
    }

    /// Truncated next-token distribution for an interval of `width` units.
    ///
    /// K is the smallest head reaching the mass threshold, clamped to
    /// `[min_k, max_k]`, then lowered to at most `width` so every kept token
    /// owns at least one unit of the interval.
    pub fn truncated(
        &self,
        a: TokenId,
        b: TokenId,
        width: u128,
        t: &Truncation,
    ) -> Vec<(TokenId, u64)> {
        let mut head = self.head(a, b, t.max_k.max(1));
        let total = self.total_score(a, b) as u128;
        let mut cum = 0u128;
        let mut k = head.len();
        for (i, &(_, s)) in head.iter().enumerate() {
            cum += s as u128;
            if cum * 1000 >= total * t.mass_permille as u128 {
                k = i + 1;
                break;
            }
        }
        let k = k.max(t.min_k).min(head.len());
        let k = (k as u128).min(width).max(1) as usize;
        head.truncate(k);
        head
    }

    /// Line-oriented serialization with a version header and a trailing
    /// SHA-256 over everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = String::new();
        let _ = writeln!(body, "{FORMAT_HEADER}");
        let _ = writeln!(body, "vocab {}", self.vocab.len());
        for t in &self.vocab {
            let _ = writeln!(body, "{t}");
        }
        let mut keys: Vec<&(TokenId, TokenId)> = self.trigram.keys().collect();
        keys.sort();
        let n: usize = self.trigram.values().map(Vec::len).sum();
        let _ = writeln!(body, "trigrams {n}");
        for k in keys {
            for &(w, c) in &self.trigram[k] {
                let _ = writeln!(body, "{} {} {} {}", k.0, k.1, w, c);
            }
        }
        let hash = hex::encode(Sha256::digest(body.as_bytes()));
        let _ = writeln!(body, "sha256 {hash}");
        body.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
        let (body, trailer) = text
            .trim_end_matches('\n')
            .rsplit_once('\n')
            .ok_or_else(|| bad("truncated"))?;
        let body = format!("{body}\n");
        let expected = trailer
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad("missing content hash"))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != expected {
            return Err(bad("content hash mismatch"));
        }
        let mut lines = body.lines();
        match lines.next() {
            Some(FORMAT_HEADER) => {}
            Some(other) => return Err(bad(&format!("unsupported format {other:?}"))),
            None => return Err(bad("empty")),
        }
        let count = |line: Option<&str>, key: &str| -> Result<usize> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected `{key} <n>`")))
        };
        let v = count(lines.next(), "vocab ")?;
        let vocab: Vec<String> = lines.by_ref().take(v).map(str::to_string).collect();
        if vocab.len() != v || !vocab.iter().all(|t| is_vocab_token(t)) {
            return Err(bad("bad vocabulary"));
        }
        let n = count(lines.next(), "trigrams ")?;
        let mut counts = BTreeMap::new();
        for line in lines.by_ref().take(n) {
            let f: Vec<u64> = line
                .split(' ')
                .map(|x| x.parse().map_err(|_| bad("bad trigram line")))
                .collect::<Result<_>>()?;
            if f.len() != 4 || f[2] >= v as u64 || f[0] > v as u64 || f[1] > v as u64 {
                return Err(bad("bad trigram line"));
            }
            counts.insert((f[0] as TokenId, f[1] as TokenId, f[2] as TokenId), f[3]);
        }
        if counts.len() != n || lines.next().is_some() {
            return Err(bad("trigram count mismatch"));
        }
        Ok(Self::from_counts(vocab, counts))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Mean characters per token and share of homoglyph-eligible
    /// characters, both under the unigram distribution, as exact ratios
    /// `(numerator, denominator)`.
    pub fn surface_stats(&self) -> SurfaceStats {
        let mut chars = 0u64;
        let mut eligible = 0u64;
        for (t, &c) in self.vocab.iter().zip(&self.unigram) {
            chars += c * t.len() as u64;
            eligible += c * t.chars().filter(|&ch| crate::symbolic::hg::is_eligible(ch)).count() as u64;
        }
        SurfaceStats {
            token_chars: (chars, self.unigram_total.max(1)),
            eligible_chars: (eligible, chars.max(1)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SurfaceStats {
    pub token_chars: (u64, u64),
    pub eligible_chars: (u64, u64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_corpus() -> String {
        let base = "The cat sat on the mat. The dog sat on the log. A cat and a dog met on the mat. ";
        base.repeat(MIN_CORPUS_WORDS / 20 + 1)
    }

    #[test]
    fn word_normalization() {
        assert_eq!(normalize_word("Hello,").as_deref(), Some("hello"));
        assert_eq!(normalize_word("end.").as_deref(), Some("end."));
        assert_eq!(normalize_word("(etc.)").as_deref(), Some("etc."));
        assert_eq!(normalize_word("café"), None);
        assert_eq!(normalize_word("don't"), None);
        assert_eq!(normalize_word("well-known"), None);
        assert_eq!(normalize_word("...").as_deref(), None);
        assert_eq!(normalize_word("1990s").as_deref(), Some("1990s"));
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        assert!(matches!(
            RefModel::build("tiny corpus"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_ascii_words_are_excluded() {
        let corpus = format!("{} café café café", small_corpus());
        let m = RefModel::build(&corpus).unwrap();
        assert!(m.id("café").is_none());
        assert!(m.vocab().iter().all(|t| is_vocab_token(t)));
    }

    #[test]
    fn head_agrees_with_full_ranking() {
        let m = RefModel::build(&small_corpus()).unwrap();
        let bos = m.bos();
        let the = m.id("the").unwrap();
        let contexts = [(bos, bos), (bos, the), (the, m.id("cat").unwrap()), (the, the)];
        for (a, b) in contexts {
            let full = m.ranked(a, b);
            assert_eq!(m.head(a, b, 5), full[..5].to_vec());
            assert_eq!(full.iter().map(|e| e.1).sum::<u64>(), m.total_score(a, b));
        }
    }

    #[test]
    fn truncation_respects_bounds() {
        let m = RefModel::build(&small_corpus()).unwrap();
        let t = Truncation {
            min_k: 2,
            max_k: 8,
            mass_permille: 900,
        };
        let (a, b) = (m.bos(), m.bos());
        let d = m.truncated(a, b, 1 << 40, &t);
        assert!((2..=8).contains(&d.len()));
        assert_eq!(m.truncated(a, b, 2, &t).len(), 2);
    }

    #[test]
    fn serialization_round_trip_and_tamper_detection() {
        let m = RefModel::build(&small_corpus()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(RefModel::from_bytes(&bytes).unwrap(), m);

        let mut tampered = bytes.clone();
        let pos = tampered.iter().position(|&b| b == b'c').unwrap();
        tampered[pos] = b'k';
        assert!(RefModel::from_bytes(&tampered).is_err());

        let text = String::from_utf8(bytes).unwrap();
        let body = text.replace(FORMAT_HEADER, "stegcanary-refmodel 9");
        let (body, _) = body.trim_end().rsplit_once('\n').unwrap();
        let body = format!("{body}\n");
        let rehashed = format!("{body}sha256 {}\n", hex::encode(Sha256::digest(body.as_bytes())));
        let err = RefModel::from_bytes(rehashed.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unsupported format"));
    }

    #[test]
    fn identical_corpora_give_identical_models() {
        let a = RefModel::build(&small_corpus()).unwrap();
        let b = RefModel::build(&small_corpus()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
