//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use vispell_core::errorgen::{ErrorClass, ErrorGenError, Corruptor};
use vispell_core::evalmetrics::{evaluate_corpus, evaluate_predictions, evaluate_testset, DocumentPredictions, EvalError};
use vispell_core::model::{load_checkpoint, CheckpointError, ModelError};
use vispell_core::textdata::{read_corpus, read_wiki_testset, TextDataError};
use vispell_core::train::{self, TrainError};

use crate::config::{Config, ConfigError};
use crate::service::{self, AppState, CorrectionRequest, DEFAULT_MAX_BODY_BYTES};

#[derive(Parser, Debug)]
#[command(name = "vispell", version, about = "Vietnamese spelling detection and correction")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace)
    #[arg(long, global = true, default_value = "info", env = "VISPELL_LOG")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Corrupt clean text into a JSONL training corpus
    GenData(GenDataArgs),
    /// Train a model on a generated corpus
    Train(TrainArgs),
    /// Score a model (or stored predictions) against a test set
    Eval(EvalArgs),
    /// Check one piece of text
    Correct(CorrectArgs),
    /// Run the HTTP correction service
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Clean UTF-8 text, one sentence per line
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides corruption.rng_seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides corruption.per_token_error_rate
    #[arg(long)]
    pub error_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSONL corpus from gen-data
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for checkpoints, state and metrics.jsonl
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.max_steps
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Overrides train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from OUT/state.bin when present
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Test set JSONL (one annotated document per line)
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub testset: Option<PathBuf>,
    /// Generated corpus JSONL, scored against its own masks
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Stored predictions JSONL ({"id", "tokens"} per document) instead of a model
    #[arg(long, requires = "testset")]
    pub predictions: Option<PathBuf>,
    /// Skip invalid test-set records instead of failing
    #[arg(long)]
    pub lenient: bool,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct CorrectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text to check; read from stdin when omitted
    pub text: Option<String>,
    #[arg(long, default_value_t = service::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Print the full response as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "VISPELL_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, env = "VISPELL_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Largest accepted request body
    #[arg(long, default_value_t = DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
}

/// Process exit status for a failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Usage = 1,
    Data = 2,
    Internal = 3,
}

/// Data and validation failures exit with 2, everything unrecognised with 3.
pub fn classify(err: &anyhow::Error) -> ExitStatus {
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteParams { .. } => ExitStatus::Internal,
                _ => ExitStatus::Data,
            };
        }
        if cause.is::<ConfigError>()
            || cause.is::<TextDataError>()
            || cause.is::<ErrorGenError>()
            || cause.is::<CheckpointError>()
            || cause.is::<EvalError>()
            || cause.is::<ModelError>()
            || cause.is::<io::Error>()
            || cause.is::<serde_json::Error>()
        {
            return ExitStatus::Data;
        }
    }
    ExitStatus::Internal
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Correct(a) => correct_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.corruption.rng_seed = seed;
    }
    if let Some(rate) = args.error_rate {
        config.corruption.per_token_error_rate = rate;
    }
    let corruptor = Corruptor::new(config.corruption)?;
    let input = File::open(&args.input).with_context(|| format!("cannot open input {}", args.input.display()))?;
    let output =
        File::create(&args.output).with_context(|| format!("cannot create output {}", args.output.display()))?;
    let mut w = BufWriter::new(output);
    let mut counts: BTreeMap<ErrorClass, u64> = ErrorClass::ALL.iter().map(|c| (*c, 0)).collect();
    let (mut sentences, mut tokens, mut errors) = (0u64, 0u64, 0u64);
    for sent in corruptor.stream(BufReader::new(input)) {
        let sent = sent?;
        for class in sent.classes.iter().flatten() {
            *counts.entry(*class).or_default() += 1;
        }
        sentences += 1;
        tokens += sent.clean.len() as u64;
        errors += sent.error_count() as u64;
        writeln!(w, "{}", sent.to_json_line()).with_context(|| format!("writing {}", args.output.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", args.output.display()))?;
    println!("sentences {sentences} tokens {tokens} errors {errors}");
    for (class, n) in counts {
        println!("{:<20} {n}", class.name());
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(steps) = args.max_steps {
        config.train.max_steps = steps;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let model = train::train(&args.corpus, config.model, config.train, &args.out, args.resume)?;
    println!("{} (step {}) -> {}", model.model_version, model.step, args.out.join("model.ckpt").display());
    Ok(())
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<DocumentPredictions>> {
    let file = File::open(path).with_context(|| format!("cannot open predictions {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(doc);
    }
    Ok(out)
}

fn eval_cmd(args: EvalArgs) -> anyhow::Result<()> {
    let report = match (&args.testset, &args.corpus) {
        (Some(testset), None) => {
            let set = read_wiki_testset(testset, !args.lenient)?;
            for issue in &set.skipped {
                log::warn!("{}:{}: skipped: {}", testset.display(), issue.line, issue.message);
            }
            match (&args.predictions, &args.checkpoint) {
                (Some(p), _) => evaluate_predictions(&set.documents, &read_predictions(p)?)?,
                (None, Some(c)) => evaluate_testset(&set.documents, &load_checkpoint(c)?)?,
                (None, None) => bail!(UsageError("either --checkpoint or --predictions is required".into())),
            }
        }
        (None, Some(corpus)) => {
            let Some(c) = &args.checkpoint else {
                bail!(UsageError("--corpus needs --checkpoint".into()));
            };
            evaluate_corpus(&read_corpus(corpus)?, &load_checkpoint(c)?)?
        }
        _ => bail!(UsageError("exactly one of --testset or --corpus is required".into())),
    };
    if args.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}

fn correct_cmd(args: CorrectArgs) -> anyhow::Result<()> {
    let text = match args.text {
        Some(t) => t,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("reading stdin")?;
            s
        }
    };
    let model = load_checkpoint(&args.checkpoint)?;
    let response = service::correct_text(&model, &CorrectionRequest { text, top_k: args.top_k });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&response)?);
        return Ok(());
    }
    for t in &response.tokens {
        if t.is_error {
            let suggestions: Vec<String> =
                t.suggestions.iter().map(|s| format!("{} ({:.3})", s.word, s.prob)).collect();
            println!("{}\tERROR\t{:.3}\t{}", t.token, t.p_error, suggestions.join(", "));
        } else {
            println!("{}\tok\t{:.3}", t.token, t.p_error);
        }
    }
    if response.truncated {
        println!("(input truncated to {} tokens)", model.config.n_max);
    }
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let state = AppState::loading();
    let loader_state = state.clone();
    let checkpoint = args.checkpoint.clone();
    runtime.block_on(async move {
        let loader = tokio::task::spawn_blocking(move || {
            let model = load_checkpoint(&checkpoint)?;
            log::info!("loaded {}", model.model_version);
            loader_state.set_model(model);
            Ok::<_, CheckpointError>(())
        });
        let addr = SocketAddr::new(args.host, args.port);
        let server = service::serve(state, addr, args.max_body_bytes);
        tokio::pin!(server);
        tokio::select! {
            loaded = loader => {
                loaded.map_err(|e| anyhow!(e))??;
                server.await.with_context(|| format!("serving on {addr}"))
            }
            served = &mut server => served.with_context(|| format!("serving on {addr}")),
        }
    })
}

/// A request that is syntactically valid but semantically incomplete.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn exit_status(err: &anyhow::Error) -> ExitStatus {
    if err.chain().any(|c| c.is::<UsageError>()) {
        ExitStatus::Usage
    } else {
        classify(err)
    }
}
