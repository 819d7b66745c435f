//! Deterministic transport transforms (T00–T12) and the composite chains
//! used as experimental variables.

use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;

use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::symbolic::{hg, zw};

pub const REFLOW_WIDTH: usize = 80;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformId {
    T00,
    T01,
    T02,
    T03,
    T04,
    T05,
    T06,
    T07,
    T08,
    T09,
    T10,
    T11,
    T12,
}

impl TransformId {
    pub const ALL: [TransformId; 13] = [
        TransformId::T00,
        TransformId::T01,
        TransformId::T02,
        TransformId::T03,
        TransformId::T04,
        TransformId::T05,
        TransformId::T06,
        TransformId::T07,
        TransformId::T08,
        TransformId::T09,
        TransformId::T10,
        TransformId::T11,
        TransformId::T12,
    ];

    pub fn tier(self) -> u8 {
        use TransformId::*;
        match self {
            T00 => 0,
            T01 | T02 | T03 | T04 => 1,
            T05 | T06 | T07 => 2,
            T08 | T09 | T10 => 3,
            T11 | T12 => 4,
        }
    }

    pub fn label(self) -> &'static str {
        use TransformId::*;
        match self {
            T00 => "passthrough",
            T01 => "copy-paste normalization",
            T02 => "line reflow",
            T03 => "smart quotes",
            T04 => "trailing whitespace strip",
            T05 => "NFKC normalization",
            T06 => "whitespace collapse",
            T07 => "format character strip",
            T08 => "zero-width strip",
            T09 => "homoglyph normalization",
            T10 => "non-ASCII strip",
            T11 => "punctuation and case strip",
            T12 => "external paraphrase",
        }
    }
}

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TransformId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformId::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown transform {s:?}")))
    }
}

/// Runtime configuration for transforms that need it (only T12).
#[derive(Clone, Debug, Default)]
pub struct TransportConfig {
    /// Shell command that reads text on stdin and writes the paraphrase to
    /// stdout. Configuration key `paraphrase_cmd`.
    pub paraphrase_cmd: Option<String>,
}

impl TransportConfig {
    pub fn has(&self, id: TransformId) -> bool {
        id != TransformId::T12 || self.paraphrase_cmd.is_some()
    }
}

pub fn apply_transform(id: TransformId, text: &str, config: &TransportConfig) -> Result<String> {
    use TransformId::*;
    Ok(match id {
        T00 => text.to_string(),
        T01 => copy_paste(text),
        T02 => reflow(text, REFLOW_WIDTH),
        T03 => smart_quotes(text),
        T04 => strip_trailing_whitespace(text),
        T05 => text.nfkc().collect(),
        T06 => collapse_whitespace(text),
        T07 => text
            .chars()
            .filter(|&c| get_general_category(c) != GeneralCategory::Format)
            .collect(),
        T08 => zw::strip(text),
        T09 => hg::strip(text),
        T10 => text.chars().filter(char::is_ascii).collect(),
        T11 => text
            .chars()
            .filter(|c| !c.is_ascii_punctuation())
            .flat_map(char::to_lowercase)
            .collect(),
        T12 => paraphrase(text, config)?,
    })
}

/// CRLF and lone CR become LF; a leading byte-order mark is dropped.
fn copy_paste(text: &str) -> String {
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(text);
    text.replace("\r\n", "\n").replace('\r', "\n")
}

fn is_blank(line: &str) -> bool {
    line.chars().all(|c| c == ' ' || c == '\t' || c == '\r')
}

/// Joins the lines of each blank-line separated paragraph with spaces and
/// re-wraps greedily at `width` columns. Only ASCII spaces become breaks.
fn reflow(text: &str, width: usize) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut para: Vec<&str> = Vec::new();
    let flush = |para: &mut Vec<&str>, out: &mut Vec<String>| {
        if !para.is_empty() {
            out.push(wrap(&para.join(" "), width));
            para.clear();
        }
    };
    for line in text.split('\n') {
        if is_blank(line) {
            flush(&mut para, &mut out);
            out.push(line.to_string());
        } else {
            para.push(line);
        }
    }
    flush(&mut para, &mut out);
    out.join("\n")
}

fn wrap(line: &str, width: usize) -> String {
    let mut chars: Vec<char> = line.chars().collect();
    let mut line_start = 0usize;
    let mut last_space: Option<usize> = None;
    let mut i = 0usize;
    while i < chars.len() {
        if chars[i] == ' ' {
            last_space = Some(i);
        }
        if i - line_start >= width {
            if let Some(sp) = last_space.filter(|&sp| sp > line_start) {
                chars[sp] = '\n';
                line_start = sp + 1;
                last_space = None;
                i = sp + 1;
                continue;
            }
        }
        i += 1;
    }
    chars.into_iter().collect()
}

fn smart_quotes(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    for c in text.chars() {
        let opening = match prev {
            None => true,
            Some(p) => p.is_whitespace() || matches!(p, '(' | '[' | '{' | '\u{2014}' | '-'),
        };
        let q = match (c, opening) {
            ('\'', true) => '\u{2018}',
            ('\'', false) => '\u{2019}',
            ('"', true) => '\u{201C}',
            ('"', false) => '\u{201D}',
            (other, _) => other,
        };
        out.push(q);
        prev = Some(c);
    }
    out
}

fn strip_trailing_whitespace(text: &str) -> String {
    text.split('\n')
        .map(|l| l.trim_end_matches([' ', '\t']))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_run = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}

fn paraphrase(text: &str, config: &TransportConfig) -> Result<String> {
    let cmd = config
        .paraphrase_cmd
        .as_deref()
        .ok_or_else(|| Error::TransformUnavailable("T12 requires paraphrase_cmd".into()))?;
    let unavailable = |e: std::io::Error| Error::TransformUnavailable(format!("{cmd}: {e}"));
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(unavailable)?;
    child
        .stdin
        .take()
        .expect("stdin is piped")
        .write_all(text.as_bytes())
        .map_err(unavailable)?;
    let output = child.wait_with_output().map_err(unavailable)?;
    if !output.status.success() {
        return Err(Error::TransformUnavailable(format!(
            "{cmd} exited with {}",
            output.status
        )));
    }
    String::from_utf8(output.stdout)
        .map_err(|_| Error::TransformUnavailable(format!("{cmd} produced non-UTF-8 output")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChainId {
    Tier0,
    Tier1,
    Tier2,
    Tier3,
    Tier12,
    Tier123,
    Tier4,
}

impl ChainId {
    pub const ALL: [ChainId; 7] = [
        ChainId::Tier0,
        ChainId::Tier1,
        ChainId::Tier2,
        ChainId::Tier3,
        ChainId::Tier12,
        ChainId::Tier123,
        ChainId::Tier4,
    ];

    /// The six composite chains of the stacking grid.
    pub const COMPOSITE: [ChainId; 6] = [
        ChainId::Tier1,
        ChainId::Tier2,
        ChainId::Tier3,
        ChainId::Tier12,
        ChainId::Tier123,
        ChainId::Tier4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChainId::Tier0 => "Tier-0",
            ChainId::Tier1 => "Tier-1",
            ChainId::Tier2 => "Tier-2",
            ChainId::Tier3 => "Tier-3",
            ChainId::Tier12 => "Tier-1+2",
            ChainId::Tier123 => "Tier-1+2+3",
            ChainId::Tier4 => "Tier-4",
        }
    }

    pub fn steps(self) -> Vec<TransformId> {
        use TransformId::*;
        const T1: [TransformId; 4] = [T01, T02, T03, T04];
        const T2: [TransformId; 3] = [T05, T06, T07];
        const T3: [TransformId; 3] = [T08, T09, T10];
        match self {
            ChainId::Tier0 => vec![T00],
            ChainId::Tier1 => T1.to_vec(),
            ChainId::Tier2 => T2.to_vec(),
            ChainId::Tier3 => T3.to_vec(),
            ChainId::Tier12 => [&T1[..], &T2[..]].concat(),
            ChainId::Tier123 => [&T1[..], &T2[..], &T3[..]].concat(),
            ChainId::Tier4 => vec![T12],
        }
    }

    pub fn chain(self) -> TransportChain {
        TransportChain {
            name: self.name().to_string(),
            steps: self.steps(),
        }
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        ChainId::ALL
            .into_iter()
            .find(|c| c.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown chain {s:?}")))
    }
}

/// An ordered list of transforms applied as a left fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportChain {
    pub name: String,
    pub steps: Vec<TransformId>,
}

impl TransportChain {
    pub fn single(id: TransformId) -> Self {
        TransportChain {
            name: id.to_string(),
            steps: vec![id],
        }
    }

    pub fn is_available(&self, config: &TransportConfig) -> bool {
        self.steps.iter().all(|&s| config.has(s))
    }

    pub fn apply(&self, text: &str, config: &TransportConfig) -> Result<String> {
        apply_chain(self, text, config)
    }
}

impl FromStr for TransportChain {
    type Err = Error;

    /// Accepts a chain name (`Tier-1+2`), a single transform id (`T05`), or
    /// an arrow/comma separated list of ids (`T05,T10`).
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(c) = s.parse::<ChainId>() {
            return Ok(c.chain());
        }
        let steps = s
            .split([',', '>'])
            .map(|p| p.trim().trim_end_matches('-'))
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<TransformId>>>()?;
        if steps.is_empty() {
            return Err(Error::invalid("empty transform chain"));
        }
        Ok(TransportChain {
            name: s.trim().to_string(),
            steps,
        })
    }
}

pub fn apply_chain(chain: &TransportChain, text: &str, config: &TransportConfig) -> Result<String> {
    chain
        .steps
        .iter()
        .try_fold(text.to_string(), |acc, &id| apply_transform(id, &acc, config))
}
