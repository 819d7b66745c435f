//! Prose used as cover text, as the reference model's training text, and
//! (recombined) as unmarked negatives.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_MIN_CHARS: usize = 3000;

const EMBEDDED: [(&str, &str); 20] = [
    ("01_harbor.txt", include_str!("../corpus/01_harbor.txt")),
    ("02_bread.txt", include_str!("../corpus/02_bread.txt")),
    ("03_lighthouse.txt", include_str!("../corpus/03_lighthouse.txt")),
    ("04_garden.txt", include_str!("../corpus/04_garden.txt")),
    ("05_railway.txt", include_str!("../corpus/05_railway.txt")),
    ("06_bees.txt", include_str!("../corpus/06_bees.txt")),
    ("07_library.txt", include_str!("../corpus/07_library.txt")),
    ("08_river.txt", include_str!("../corpus/08_river.txt")),
    ("09_clock.txt", include_str!("../corpus/09_clock.txt")),
    ("10_mountain.txt", include_str!("../corpus/10_mountain.txt")),
    ("11_market.txt", include_str!("../corpus/11_market.txt")),
    ("12_snow.txt", include_str!("../corpus/12_snow.txt")),
    ("13_letters.txt", include_str!("../corpus/13_letters.txt")),
    ("14_ferry.txt", include_str!("../corpus/14_ferry.txt")),
    ("15_kitchen.txt", include_str!("../corpus/15_kitchen.txt")),
    ("16_stars.txt", include_str!("../corpus/16_stars.txt")),
    ("17_bicycle.txt", include_str!("../corpus/17_bicycle.txt")),
    ("18_weaver.txt", include_str!("../corpus/18_weaver.txt")),
    ("19_forest.txt", include_str!("../corpus/19_forest.txt")),
    ("20_bridge.txt", include_str!("../corpus/20_bridge.txt")),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub name: String,
    pub text: String,
}

pub fn embedded() -> Vec<Document> {
    EMBEDDED
        .iter()
        .map(|(name, text)| Document {
            name: name.to_string(),
            text: text.to_string(),
        })
        .collect()
}

/// All embedded documents, blank-line separated.
pub fn embedded_text() -> String {
    EMBEDDED
        .iter()
        .map(|(_, t)| t.trim_end())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Reads every `*.txt` file in `dir`, sorted by name. Files shorter than
/// `min_chars` characters are an error.
pub fn load_dir(dir: impl AsRef<Path>, min_chars: usize) -> Result<Vec<Document>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let n = text.chars().count();
        if n < min_chars {
            return Err(Error::invalid(format!(
                "{} has {n} characters, need at least {min_chars}",
                p.display()
            )));
        }
        docs.push(Document {
            name: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            text,
        });
    }
    if docs.is_empty() {
        return Err(Error::invalid(format!("no .txt files in {}", dir.display())));
    }
    Ok(docs)
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for para in text.split("\n\n") {
        let mut start = 0;
        let bytes = para.as_bytes();
        for i in 0..bytes.len() {
            let end_mark = matches!(bytes[i], b'.' | b'!' | b'?');
            let boundary = bytes.get(i + 1).map_or(true, |b| b.is_ascii_whitespace())
                || (bytes.get(i + 1) == Some(&b'"')
                    && bytes.get(i + 2).map_or(true, |b| b.is_ascii_whitespace()));
            if end_mark && boundary {
                let stop = if bytes.get(i + 1) == Some(&b'"') { i + 2 } else { i + 1 };
                let s = para[start..stop].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = stop;
            }
        }
    }
    out
}

/// Unmarked prose generated by shuffling sentences of `source` into new
/// documents of at least `min_chars` characters. Deterministic in `seed`.
pub fn recombined(source: &[Document], count: usize, min_chars: usize, seed: u64) -> Vec<Document> {
    let pool: Vec<&str> = source.iter().flat_map(|d| sentences(&d.text)).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut text = String::new();
            let mut in_para = 0;
            let mut para_len = rng.gen_range(3..=7);
            while text.chars().count() < min_chars {
                let s = pool.choose(&mut rng).expect("pool is not empty");
                if in_para == para_len {
                    text.push_str("\n\n");
                    in_para = 0;
                    para_len = rng.gen_range(3..=7);
                } else if in_para > 0 {
                    text.push(' ');
                }
                text.push_str(s);
                in_para += 1;
            }
            text.push('\n');
            Document {
                name: format!("unmarked_{i:03}.txt"),
                text,
            }
        })
        .collect()
}

/// The default negative set: 100 recombined documents.
pub fn unmarked() -> Vec<Document> {
    recombined(&embedded(), 100, DEFAULT_MIN_CHARS, 0x5eed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_files_meet_minimum_length() {
        let docs = embedded();
        assert_eq!(docs.len(), 20);
        for d in &docs {
            assert!(d.text.chars().count() >= DEFAULT_MIN_CHARS, "{}", d.name);
        }
        assert!(embedded_text().split_whitespace().count() >= 10_000);
    }

    #[test]
    fn sentence_split() {
        let s = sentences("One. \"Two!\" Three? Four\n\nFive.");
        // a trailing fragment without an end mark is dropped
        assert_eq!(s, vec!["One.", "\"Two!\"", "Three?", "Five."]);
    }

    #[test]
    fn recombination_is_deterministic_and_distinct() {
        let a = unmarked();
        let b = unmarked();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let originals: Vec<String> = embedded().into_iter().map(|d| d.text).collect();
        for d in &a {
            assert!(d.text.chars().count() >= DEFAULT_MIN_CHARS);
            assert!(!originals.contains(&d.text));
        }
        assert_ne!(a[0].text, a[1].text);
    }

    #[test]
    fn load_dir_enforces_minimum() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "x".repeat(50)).unwrap();
        std::fs::write(dir.path().join("skip.md"), "ignored").unwrap();
        assert_eq!(load_dir(dir.path(), 10).unwrap().len(), 1);
        assert!(load_dir(dir.path(), 100).is_err());
    }
}
