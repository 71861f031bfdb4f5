//! `pgmhd` command-line tool.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 input parse
//! failure, 5 invalid or corrupt model, 6 unknown node, 7 other query error.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use pgmhd::eval::{evaluate, parse_pairs};
use pgmhd::ingest::train_sharded;
use pgmhd::persist::{self, PersistError};
use pgmhd::scoring::{classify, related};
use pgmhd::synth::{generate_synthetic, SynthConfig, SynthError};
use pgmhd::{IngestConfig, IngestError, InputFormat, Model, ModelError, ModelSchema, NodeRef, ScoreError, StatsReport};

#[derive(Parser)]
#[command(name = "pgmhd", version, about = "Train and query leveled frequency graphs over hierarchical data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Paths,
    Userlog,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a path file or a user search log.
    Train {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "paths")]
        format: Format,
        /// Comma-separated level names, top level first.
        #[arg(long, default_value = "class,term")]
        levels: String,
        /// Drop terms used by fewer distinct users (user logs only).
        #[arg(long = "min-users", default_value_t = 10)]
        min_users: u64,
        #[arg(long, default_value_t = 1)]
        shards: usize,
        #[arg(long)]
        out: PathBuf,
        /// Merge the new data into an existing model.
        #[arg(long = "continue-from")]
        continue_from: Option<PathBuf>,
        /// Stop at the first malformed line.
        #[arg(long = "fail-fast")]
        fail_fast: bool,
        /// Keep repeated (user, class, term) triples.
        #[arg(long = "no-dedupe")]
        no_dedupe: bool,
    },
    /// Merge models with identical schemas.
    Merge {
        #[arg(required = true, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the parents of a node.
    Classify {
        model: PathBuf,
        #[arg(long)]
        node: String,
        /// Level of the node (default: deepest level).
        #[arg(long)]
        level: Option<usize>,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        precise: bool,
    },
    /// List the nodes most similar to a term.
    Related {
        model: PathBuf,
        #[arg(long)]
        term: String,
        #[arg(long)]
        level: Option<usize>,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        precise: bool,
    },
    /// Print graph statistics.
    Stats {
        model: PathBuf,
        /// Highest-degree nodes listed per level.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Check a model file's invariants.
    Validate { model: PathBuf },
    /// Write a synthetic user log.
    Synth {
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 2000)]
        terms: usize,
        #[arg(long, default_value_t = 10000)]
        users: usize,
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "noise-terms")]
        noise_terms: Option<usize>,
        #[arg(long = "noise-rate")]
        noise_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision of shared-parent retrieval against labeled pairs.
    Eval {
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        level: Option<usize>,
        /// Count a pair as retrieved only if it is in the top-k related terms.
        #[arg(short)]
        k: Option<usize>,
        #[arg(long)]
        precise: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Args(String),
    Io(String),
    Parse(String),
    Model(String),
    UnknownNode(String),
    Query(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Args(_) => 2,
            CliError::Io(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Model(_) => 5,
            CliError::UnknownNode(_) => 6,
            CliError::Query(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Args(m)
            | CliError::Io(m)
            | CliError::Parse(m)
            | CliError::Model(m)
            | CliError::UnknownNode(m)
            | CliError::Query(m) => m,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(io) => CliError::Io(io.to_string()),
            IngestError::Parse(errors) => {
                CliError::Parse(errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))
            }
            IngestError::InvalidConfig(m) => CliError::Args(m),
            IngestError::Model(m) => CliError::Model(m.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::UnknownNode(_) => CliError::UnknownNode(e.to_string()),
            other => CliError::Query(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(io) => CliError::Io(io.to_string()),
            SynthError::InvalidParameter(m) => CliError::Args(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Train { input, format, levels, min_users, shards, out: dest, continue_from, fail_fast, no_dedupe } => {
            let schema = ModelSchema::new(levels.split(',').map(str::trim)).map_err(|e| CliError::Args(e.to_string()))?;
            let config = IngestConfig {
                format: match format {
                    Format::Paths => InputFormat::Paths,
                    Format::Userlog => InputFormat::UserLog,
                },
                min_distinct_users: min_users,
                shards,
                dedupe_user_term: !no_dedupe,
                fail_fast,
                threads: thread_cap()?,
            };
            let started = Instant::now();
            let base = continue_from.as_deref().map(persist::load_file).transpose()?;
            let mut model = train_sharded(&input, &config, schema)?;
            if let Some(mut base) = base {
                base.merge_from(&model)?;
                model = base;
            }
            persist::save_file(&model, &dest)?;
            let elapsed = started.elapsed();
            let report = StatsReport::compute(&model, 0);
            writeln!(out, "{} wall_ms={}", report.summary_line(), elapsed.as_millis())?;
            eprintln!(
                "trained {} nodes and {} arcs from {} observations in {:.3}s -> {}",
                model.node_count(),
                model.edge_count(),
                model.n(),
                elapsed.as_secs_f64(),
                dest.display()
            );
        }
        Command::Merge { models, out: dest } => {
            let mut iter = models.iter();
            let mut merged = persist::load_file(iter.next().expect("clap requires one model"))?;
            for path in iter {
                merged.merge_from(&persist::load_file(path)?)?;
            }
            persist::save_file(&merged, &dest)?;
            writeln!(out, "{}", StatsReport::compute(&merged, 0).summary_line())?;
        }
        Command::Classify { model, node, level, k, precise } => {
            let model = persist::load_file(&model)?;
            let level = resolve_level(&model, level)?;
            for r in classify(&model, &NodeRef::new(level, node), k)? {
                writeln!(out, "{}\t{}", r.label, format_score(r.score, precise))?;
            }
        }
        Command::Related { model, term, level, k, precise } => {
            let model = persist::load_file(&model)?;
            let level = resolve_level(&model, level)?;
            for r in related(&model, &NodeRef::new(level, term), k)? {
                writeln!(out, "{}\t{}", r.label, format_score(r.score, precise))?;
            }
        }
        Command::Stats { model, top } => {
            let model = persist::load_file(&model)?;
            write!(out, "{}", StatsReport::compute(&model, top).render())?;
        }
        Command::Validate { model } => {
            let bytes = fs::read(&model)?;
            return validate_file(&bytes, &mut out);
        }
        Command::Synth { classes, terms, users, zipf, seed, noise_terms, noise_rate, out: dest } => {
            let mut config = SynthConfig::new(classes, terms, users, zipf, seed);
            if let Some(t) = noise_terms {
                config.noise_terms = t;
            }
            if let Some(r) = noise_rate {
                config.noise_rate = r;
            }
            generate_synthetic(&config, fs::File::create(&dest)?)?;
            writeln!(out, "lines={users}")?;
        }
        Command::Eval { model, pairs, level, k, precise } => {
            let model = persist::load_file(&model)?;
            let level = resolve_level(&model, level)?;
            let text = fs::read_to_string(&pairs)?;
            let pairs = parse_pairs(&text).map_err(|e| CliError::Parse(e.to_string()))?;
            let report = evaluate(&model, level, &pairs, k);
            for v in &report.verdicts {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    v.pair.a,
                    v.pair.b,
                    v.pair.label.as_str(),
                    if v.retrieved { "retrieved" } else { "not-retrieved" },
                    v.score.map_or_else(|| "-".to_owned(), |s| format_score(s, precise))
                )?;
            }
            let precision = report.precision().map_or_else(|| "n/a".to_owned(), |p| format_score(p, precise));
            writeln!(out, "precision={precision} retrieved={} related={}", report.retrieved, report.retrieved_related)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate_file(bytes: &[u8], out: &mut impl Write) -> Result<ExitCode, CliError> {
    match persist::from_bytes(bytes) {
        Ok(model) => {
            writeln!(out, "ok {}", StatsReport::compute(&model, 0).summary_line())?;
            Ok(ExitCode::SUCCESS)
        }
        Err(PersistError::Inconsistent(violations)) => {
            for v in &violations {
                writeln!(out, "{v}")?;
            }
            Err(CliError::Model(format!("{} violation(s)", violations.len())))
        }
        Err(e) => Err(e.into()),
    }
}

fn resolve_level(model: &Model, level: Option<usize>) -> Result<usize, CliError> {
    let m = model.levels();
    match level {
        None => Ok(m),
        Some(l) if (1..=m).contains(&l) => Ok(l),
        Some(l) => Err(CliError::Args(format!("level {l} is outside 1..={m}"))),
    }
}

fn format_score(score: f64, precise: bool) -> String {
    if precise {
        format!("{score:?}")
    } else {
        format!("{score:.4}")
    }
}

/// `PGMHD_THREADS` caps shard worker parallelism.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("PGMHD_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Args(format!("PGMHD_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
