use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use canary_core::corpus::{self, Document, DEFAULT_MIN_CHARS};
use canary_core::experiments::{self, ExperimentSpec};
use canary_core::scanner::{ScanPolicy, Scanner, DEFAULT_REGION_DELIMITERS};
use canary_core::stack::{validate_composition, Stack, StackConfig};
use canary_core::tokens::{append_registry_line, file_uuid, KEY_FILE_ENV};
use canary_core::{OrgKey, Scheme, TokenRegistry, TransportChain, TransportConfig};
use canary_proxy::{ProxyConfig, ProxyState, ResponseMode};
use clap::{Args, Parser, Subcommand};

/// Exit status of `scan` when a canary is found.
const EXIT_MATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "stegcanary", version, about = "Steganographic canary files for LLM ingestion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a canary token into a cover file, or generate a cover.
    Encode(EncodeArgs),
    /// Scan a file; exit 0 on no match, 3 on a verified match.
    Scan(ScanArgs),
    /// Apply a transform or chain to a file.
    Transform(TransformArgs),
    /// Recovery of M1-M4 under every single transform.
    Heatmap(GridArgs),
    /// Recovery of M1-M7 under the composite chains.
    Stacking(GridArgs),
    /// False-positive counts on unmarked and random inputs.
    Fp(FpArgs),
    /// Per-config encode, decode and scan latency.
    Timing(GridArgs),
    /// Run the scanning reverse proxy.
    Proxy(ProxyArgs),
    /// Scripted lockdown scenario against an in-process stub upstream.
    E2e,
}

#[derive(Args)]
struct EncodeArgs {
    /// M1..M7 or a comma list of methods (WS,ZW,HG,LM).
    #[arg(long, default_value = "M5")]
    config: StackConfig,
    #[arg(long, default_value = "hmac")]
    scheme: Scheme,
    #[arg(long)]
    file_id: String,
    /// Cover text; required unless the config starts with LM.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// File holding the raw organization key.
    #[arg(long, env = KEY_FILE_ENV)]
    key_file: PathBuf,
    /// Appends `file_id<TAB>scheme<TAB>digest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Appends the token (HMAC) or the public key (EdDSA).
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    org_id: String,
}

#[derive(Args)]
struct ScanArgs {
    /// File to scan; `-` reads standard input.
    input: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    scheme: Option<Scheme>,
    /// JSON scan policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Scan only text between the default region delimiters.
    #[arg(long)]
    regions: bool,
}

#[derive(Args)]
struct TransformArgs {
    /// Chain name (Tier-1+2), transform id (T05) or list (T05,T10).
    #[arg(long)]
    chain: TransportChain,
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    paraphrase_cmd: Option<String>,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory of `.txt` covers; the embedded corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_CHARS)]
    min_chars: usize,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<Document>> {
        match &self.corpus {
            Some(dir) => Ok(corpus::load_dir(dir, self.min_chars)?),
            None => Ok(corpus::embedded()),
        }
    }
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "hmac")]
    scheme: Scheme,
    /// Files per cell; defaults to the corpus size.
    #[arg(long)]
    trials: Option<usize>,
    /// Restrict to these configs (comma separated names).
    #[arg(long, value_delimiter = ',')]
    configs: Vec<String>,
    #[arg(long)]
    paraphrase_cmd: Option<String>,
    /// Aggregate CSV path.
    #[arg(long, short)]
    out: PathBuf,
    /// Raw per-file outcome CSV; next to `out` when omitted.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct FpArgs {
    /// Unmarked directory; recombined embedded prose when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_CHARS)]
    min_chars: usize,
    /// Number of random-byte inputs.
    #[arg(long, default_value_t = 10_000)]
    random: usize,
    #[arg(long, default_value_t = 256)]
    random_len: usize,
    /// Tokens issued into the registry.
    #[arg(long, default_value_t = 100)]
    issued: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long, env = "CANARY_LISTEN", default_value = "127.0.0.1:8088")]
    listen: SocketAddr,
    #[arg(long, env = "CANARY_UPSTREAM")]
    upstream: String,
    #[arg(long, env = "CANARY_REGISTRY")]
    registry: PathBuf,
    #[arg(long, env = "CANARY_POLICY")]
    policy: Option<PathBuf>,
    #[arg(long, default_value = "block")]
    mode: ResponseMode,
    #[arg(long)]
    no_lockdown: bool,
    /// File holding the admin reset token.
    #[arg(long, env = "CANARY_ADMIN_TOKEN_FILE")]
    admin_token_file: Option<PathBuf>,
    #[arg(long)]
    audit_log: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    scan_budget_ms: u64,
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_policy(path: Option<&Path>) -> Result<ScanPolicy> {
    match path {
        Some(p) => serde_json::from_str(&read_input(p)?).with_context(|| format!("parsing policy {}", p.display())),
        None => Ok(ScanPolicy::default()),
    }
}

fn encode(args: EncodeArgs) -> Result<ExitCode> {
    for w in validate_composition(&args.config) {
        eprintln!("warning: {w}");
    }
    let key = OrgKey::from_file(&args.key_file)?;
    let payload = args.scheme.derive(&key, &args.file_id)?;
    let cover = args.input.as_deref().map(read_input).transpose()?;
    let stack = Stack::for_scheme(args.scheme);
    let text = stack.encode(&args.config, &payload, cover.as_deref())?;
    std::fs::write(&args.output, &text).with_context(|| format!("writing {}", args.output.display()))?;

    let digest = match args.scheme {
        Scheme::Hmac => canary_core::tokens::HmacToken(payload.as_slice().try_into()?).digest(),
        Scheme::Eddsa => format!("{}:{}", args.org_id, hex::encode(file_uuid(&args.file_id))),
    };
    if let Some(m) = &args.manifest {
        append_registry_line(m, &format!("{}\t{}\t{digest}", args.file_id, args.scheme))?;
    }
    if let Some(r) = &args.registry {
        let line = match args.scheme {
            Scheme::Hmac => digest.clone(),
            Scheme::Eddsa => format!("{}\t{}", args.org_id, hex::encode(key.public_key().as_bytes())),
        };
        append_registry_line(r, &line)?;
    }
    eprintln!(
        "{}: {} chars, {} {}",
        args.output.display(),
        text.chars().count(),
        args.config,
        args.scheme
    );
    Ok(ExitCode::SUCCESS)
}

fn scan(args: ScanArgs) -> Result<ExitCode> {
    let registry = TokenRegistry::load(&args.registry)?;
    let mut policy = load_policy(args.policy.as_deref())?;
    if let Some(s) = args.scheme {
        policy.scheme = s;
    }
    if args.regions {
        policy.region_delimiters = Some((
            DEFAULT_REGION_DELIMITERS.0.to_string(),
            DEFAULT_REGION_DELIMITERS.1.to_string(),
        ));
    }
    let text = read_input(&args.input)?;
    let verdict = Scanner::with_default_model(Arc::new(registry), policy).scan(&text);
    // a closed pipe must not change the exit status
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&verdict)?);
    Ok(if verdict.matched {
        ExitCode::from(EXIT_MATCH)
    } else {
        ExitCode::SUCCESS
    })
}

fn transform(args: TransformArgs) -> Result<ExitCode> {
    let config = TransportConfig {
        paraphrase_cmd: args.paraphrase_cmd,
    };
    let out = args.chain.apply(&read_input(&args.input)?, &config)?;
    match args.output {
        Some(p) => std::fs::write(&p, out).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(out.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn grid_spec(args: &GridArgs, base: fn(Vec<Document>, Scheme) -> ExperimentSpec) -> Result<ExperimentSpec> {
    let mut spec = base(args.corpus.load()?, args.scheme);
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if !args.configs.is_empty() {
        spec.configs = args
            .configs
            .iter()
            .map(|c| c.parse::<StackConfig>())
            .collect::<Result<_, _>>()?;
    }
    spec.transport.paraphrase_cmd = args.paraphrase_cmd.clone();
    Ok(spec)
}

fn raw_path(args: &GridArgs) -> PathBuf {
    args.raw.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.out.with_file_name(format!("{stem}_raw.csv"))
    })
}

fn grid(args: GridArgs, stacking: bool) -> Result<ExitCode> {
    let spec = if stacking {
        grid_spec(&args, ExperimentSpec::stacking)?
    } else {
        grid_spec(&args, ExperimentSpec::heatmap)?
    };
    let stack = Stack::for_scheme(spec.scheme);
    let report = if stacking {
        experiments::run_stacking(&spec, &stack)?
    } else {
        experiments::run_heatmap(&spec, &stack)?
    };
    for s in &report.skipped {
        eprintln!("skipped {s}");
    }
    report.write(&args.out, raw_path(&args))?;
    eprintln!("{} rows written to {}", report.rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn fp(args: FpArgs) -> Result<ExitCode> {
    let unmarked: Vec<String> = match &args.corpus {
        Some(dir) => corpus::load_dir(dir, args.min_chars)?,
        None => corpus::unmarked(),
    }
    .into_iter()
    .map(|d| d.text)
    .collect();
    let mut sources = vec![("unmarked", unmarked)];
    if args.random > 0 {
        sources.push(("random", experiments::random_inputs(args.random, args.random_len, 0xf00d)));
    }
    let report = experiments::run_fp(&sources, args.issued)?;
    report.write(&args.out)?;
    eprintln!("verified matches: {}", report.verified_total());
    Ok(ExitCode::SUCCESS)
}

fn timing(args: GridArgs) -> Result<ExitCode> {
    let mut spec = grid_spec(&args, ExperimentSpec::stacking)?;
    spec.chains.clear();
    let rows = experiments::run_timing(&spec, &Stack::for_scheme(spec.scheme))?;
    experiments::write_csv(&args.out, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn proxy(args: ProxyArgs) -> Result<ExitCode> {
    let registry = TokenRegistry::load(&args.registry)?;
    let mut config = ProxyConfig::new(args.listen, args.upstream);
    config.policy = load_policy(args.policy.as_deref())?;
    config.response_mode = args.mode;
    config.lockdown_enabled = !args.no_lockdown;
    config.audit_log = args.audit_log;
    config.scan_budget = Duration::from_millis(args.scan_budget_ms);
    config.admin_token = match &args.admin_token_file {
        Some(p) => Some(read_input(p)?.trim().to_string()),
        None => None,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let state = ProxyState::with_registry(config, registry)?;
        let running = canary_proxy::spawn(state).await?;
        eprintln!("listening on {}", running.addr);
        running.handle.await??;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn e2e() -> Result<ExitCode> {
    let rt = tokio::runtime::Runtime::new()?;
    let scenario = rt.block_on(canary_proxy::e2e::run_lockdown_scenario())?;
    for s in &scenario.steps {
        println!(
            "{:<9} status {} (expected {}){}",
            s.label,
            s.status,
            s.expected,
            match s.byte_identical {
                Some(true) => ", forwarded byte-identical",
                Some(false) => ", forwarded MODIFIED",
                None => "",
            }
        );
    }
    println!("locked at end: {}  ({} ms)", scenario.locked_at_end, scenario.millis);
    if !scenario.passed() {
        bail!("scenario did not behave as expected");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Encode(a) => encode(a),
        Command::Scan(a) => scan(a),
        Command::Transform(a) => transform(a),
        Command::Heatmap(a) => grid(a, false),
        Command::Stacking(a) => grid(a, true),
        Command::Fp(a) => fp(a),
        Command::Timing(a) => timing(a),
        Command::Proxy(a) => proxy(a),
        Command::E2e => e2e(),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
