//! Reproducible evaluation grids: per-transform heatmap, layered stacking,
//! false-positive rejection and timing. Every aggregate comes with the raw
//! per-file records it was computed from.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::layer::Method;
use crate::scanner::{ScanPolicy, Scanner};
use crate::stack::{Stack, StackConfig};
use crate::tokens::{OrgKey, Scheme, TokenRegistry};
use crate::transport::{ChainId, TransformId, TransportChain, TransportConfig};

/// Key used to issue experiment tokens. Experiments never touch real keys.
pub const EXPERIMENT_KEY: &[u8] = b"stegcanary-experiment-key-v1";
pub const EXPERIMENT_ORG: &str = "experiment-org";

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub configs: Vec<StackConfig>,
    pub chains: Vec<TransportChain>,
    pub corpus: Vec<Document>,
    pub scheme: Scheme,
    /// Files per cell. Covers cycle through the corpus.
    pub trials: usize,
    pub transport: TransportConfig,
}

impl ExperimentSpec {
    /// M1–M4 against every single transform.
    pub fn heatmap(corpus: Vec<Document>, scheme: Scheme) -> Self {
        let configs = ["M1", "M2", "M3", "M4"]
            .iter()
            .filter_map(|n| StackConfig::named(n))
            .collect();
        ExperimentSpec {
            configs,
            chains: TransformId::ALL.iter().map(|&t| TransportChain::single(t)).collect(),
            trials: corpus.len(),
            corpus,
            scheme,
            transport: TransportConfig::default(),
        }
    }

    /// M1–M7 against the composite chains.
    pub fn stacking(corpus: Vec<Document>, scheme: Scheme) -> Self {
        ExperimentSpec {
            configs: StackConfig::all(),
            chains: ChainId::COMPOSITE.iter().map(|c| c.chain()).collect(),
            trials: corpus.len(),
            corpus,
            scheme,
            transport: TransportConfig::default(),
        }
    }
}

/// The experiment key, the issued payload for each trial and a registry
/// that verifies them.
pub struct Issuer {
    key: OrgKey,
    scheme: Scheme,
    registry: Arc<TokenRegistry>,
    payloads: Vec<Vec<u8>>,
}

impl Issuer {
    pub fn new(scheme: Scheme, trials: usize) -> Result<Self> {
        let key = OrgKey::new(EXPERIMENT_KEY.to_vec())?;
        let mut registry = TokenRegistry::with_token_capacity(trials);
        let mut payloads = Vec::with_capacity(trials);
        for i in 0..trials {
            let p = scheme.derive(&key, &file_id(i))?;
            if scheme == Scheme::Hmac {
                registry.insert_token(crate::tokens::HmacToken(p.as_slice().try_into().expect("16 bytes")));
            }
            payloads.push(p);
        }
        registry.insert_public_key(EXPERIMENT_ORG, key.public_key());
        Ok(Issuer {
            key,
            scheme,
            registry: Arc::new(registry),
            payloads,
        })
    }

    pub fn registry(&self) -> &Arc<TokenRegistry> {
        &self.registry
    }

    pub fn payload(&self, trial: usize) -> &[u8] {
        &self.payloads[trial]
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn key(&self) -> &OrgKey {
        &self.key
    }
}

pub fn file_id(trial: usize) -> String {
    format!("experiment/file-{trial:04}.txt")
}

/// One decoder outcome for one file in one cell. `layer` is a method name
/// or `ANY`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileOutcome {
    pub config: String,
    pub chain: String,
    pub file: usize,
    pub layer: String,
    pub encoded: bool,
    pub recovered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub config: String,
    pub chain: String,
    pub layer: String,
    pub files: usize,
    pub recovered: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub raw: Vec<FileOutcome>,
    /// Chains that could not run (T12 without a paraphrase command).
    pub skipped: Vec<String>,
}

impl RecoveryReport {
    pub fn rate(&self, config: &str, chain: &str, layer: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.chain == chain && r.layer == layer)
            .map(|r| r.rate)
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<()> {
        write_csv(csv_path, &self.rows)?;
        write_csv(raw_path, &self.raw)
    }
}

/// Aggregates raw outcomes into (config, chain, layer) cells, keeping the
/// order in which cells first appear.
pub fn aggregate(raw: &[FileOutcome]) -> Vec<RecoveryRow> {
    let mut rows: Vec<RecoveryRow> = Vec::new();
    for o in raw {
        let row = match rows
            .iter_mut()
            .find(|r| r.config == o.config && r.chain == o.chain && r.layer == o.layer)
        {
            Some(r) => r,
            None => {
                rows.push(RecoveryRow {
                    config: o.config.clone(),
                    chain: o.chain.clone(),
                    layer: o.layer.clone(),
                    files: 0,
                    recovered: 0,
                    rate: 0.0,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.files += 1;
        row.recovered += o.recovered as usize;
    }
    for r in &mut rows {
        r.rate = 100.0 * r.recovered as f64 / r.files.max(1) as f64;
    }
    rows
}

/// Encodes `trials` files per config once, then decodes them under every
/// chain.
pub fn run_recovery(spec: &ExperimentSpec, stack: &Stack) -> Result<RecoveryReport> {
    if spec.corpus.is_empty() && spec.configs.iter().any(|c| !c.is_generative()) {
        return Err(Error::invalid("cover configurations need a corpus"));
    }
    let issuer = Issuer::new(spec.scheme, spec.trials)?;
    let mut report = RecoveryReport::default();
    let runnable: Vec<&TransportChain> = spec
        .chains
        .iter()
        .filter(|c| {
            let ok = c.is_available(&spec.transport);
            if !ok {
                report.skipped.push(c.name.clone());
            }
            ok
        })
        .collect();

    for config in &spec.configs {
        let encoded: Vec<Option<String>> = (0..spec.trials)
            .map(|i| {
                let cover = spec.corpus.get(i % spec.corpus.len().max(1)).map(|d| d.text.as_str());
                crate::stack::stack_encode(stack, config, issuer.payload(i), cover)
            })
            .collect::<Result<_>>()?;
        for chain in &runnable {
            for (i, text) in encoded.iter().enumerate() {
                let result = match text {
                    Some(t) => {
                        let moved = chain.apply(t, &spec.transport)?;
                        Some(stack.decode(config, &moved, issuer.registry(), spec.scheme))
                    }
                    None => None,
                };
                let mut push = |layer: String, recovered: bool| {
                    report.raw.push(FileOutcome {
                        config: config.name.clone(),
                        chain: chain.name.clone(),
                        file: i,
                        layer,
                        encoded: text.is_some(),
                        recovered,
                    })
                };
                for m in &config.layers {
                    push(m.name().to_string(), result.as_ref().is_some_and(|r| r.verified(*m)));
                }
                if config.layers.len() > 1 {
                    push("ANY".to_string(), result.as_ref().is_some_and(|r| r.any));
                }
            }
        }
    }
    report.rows = aggregate(&report.raw);
    Ok(report)
}

pub fn run_heatmap(spec: &ExperimentSpec, stack: &Stack) -> Result<RecoveryReport> {
    run_recovery(spec, stack)
}

pub fn run_stacking(spec: &ExperimentSpec, stack: &Stack) -> Result<RecoveryReport> {
    run_recovery(spec, stack)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FpRow {
    pub source: String,
    pub scheme: Scheme,
    pub decoder: Method,
    pub inputs: usize,
    pub candidates: usize,
    pub verified: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FpReport {
    pub rows: Vec<FpRow>,
}

impl FpReport {
    pub fn verified_total(&self) -> usize {
        self.rows.iter().map(|r| r.verified).sum()
    }

    pub fn candidates(&self, source: &str, scheme: Scheme, decoder: Method) -> usize {
        self.rows
            .iter()
            .filter(|r| r.source == source && r.scheme == scheme && r.decoder == decoder)
            .map(|r| r.candidates)
            .sum()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

/// `n` strings decoded lossily from uniformly random bytes.
pub fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        })
        .collect()
}

/// Runs all four decoders over every input under both schemes, with the
/// experiment tokens and key registered, and counts candidates and
/// verified matches per decoder.
pub fn run_fp(sources: &[(&str, Vec<String>)], issued: usize) -> Result<FpReport> {
    let mut report = FpReport::default();
    for scheme in [Scheme::Hmac, Scheme::Eddsa] {
        let issuer = Issuer::new(scheme, issued)?;
        let scanner = Scanner::with_default_model(
            issuer.registry().clone(),
            ScanPolicy {
                early_terminate: false,
                max_strip_depth: 1,
                ..ScanPolicy::with_scheme(scheme)
            },
        );
        for (source, inputs) in sources {
            let mut rows: Vec<FpRow> = [Method::Ws, Method::Zw, Method::Hg, Method::Lm]
                .iter()
                .map(|&decoder| FpRow {
                    source: source.to_string(),
                    scheme,
                    decoder,
                    inputs: inputs.len(),
                    candidates: 0,
                    verified: 0,
                })
                .collect();
            for text in inputs {
                let v = scanner.scan(text);
                for run in &v.runs {
                    let row = rows.iter_mut().find(|r| r.decoder == run.layer).expect("known decoder");
                    row.candidates += run.candidate as usize;
                    row.verified += run.verified as usize;
                }
            }
            report.rows.extend(rows);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub config: String,
    pub op: String,
    pub files: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub max_ms: f64,
}

fn summarize(config: &str, op: &str, samples: &[f64]) -> TimingRow {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    TimingRow {
        config: config.to_string(),
        op: op.to_string(),
        files: samples.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        max_ms: samples.iter().copied().fold(0.0, f64::max),
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Per config: stack encode, stack decode and a full scan, timed per file.
pub fn run_timing(spec: &ExperimentSpec, stack: &Stack) -> Result<Vec<TimingRow>> {
    let issuer = Issuer::new(spec.scheme, spec.trials)?;
    let scanner = Scanner::new(
        issuer.registry().clone(),
        stack.model().clone(),
        stack.lm_params().clone(),
        ScanPolicy::with_scheme(spec.scheme),
    );
    let mut rows = Vec::new();
    for config in &spec.configs {
        let (mut enc, mut dec, mut scan) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..spec.trials {
            let cover = spec.corpus.get(i % spec.corpus.len().max(1)).map(|d| d.text.as_str());
            let t = Instant::now();
            let text = crate::stack::stack_encode(stack, config, issuer.payload(i), cover)?;
            enc.push(millis(t));
            let Some(text) = text else { continue };
            let t = Instant::now();
            let _ = stack.decode(config, &text, issuer.registry(), spec.scheme);
            dec.push(millis(t));
            let t = Instant::now();
            let _ = scanner.scan(&text);
            scan.push(millis(t));
        }
        rows.push(summarize(&config.name, "encode", &enc));
        rows.push(summarize(&config.name, "decode", &dec));
        rows.push(summarize(&config.name, "scan", &scan));
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
