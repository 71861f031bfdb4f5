//! Training input: the tab-separated path format, the user-log format, and
//! the shard-train-merge executor.
//!
//! User logs go through three steps before training: expansion of each record
//! into (user, class, term) triples, removal of duplicate triples so that arc
//! frequencies count distinct users, and a global prefilter that drops any
//! term searched by fewer than `min_distinct_users` distinct users.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::graph::{Model, ModelError, ModelSchema, Observation, RootCounting};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("expected {expected} tab-separated fields, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("field {field} is empty")]
    EmptyLabel { field: usize },
    #[error("expected 3 tab-separated columns (user, class, terms), found {found}")]
    Columns { found: usize },
    #[error("user id is empty")]
    EmptyUser,
    #[error("classification is empty")]
    EmptyClass,
    #[error("no search terms")]
    EmptyTerms,
    #[error("line is not valid UTF-8")]
    InvalidUtf8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("{} parse error(s), first: {}", .0.len(), .0[0])]
    Parse(Vec<ParseError>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One observation per line, `m` tab-separated labels.
    Paths,
    /// `user_id<TAB>classification<TAB>term, term, ...` per line.
    UserLog,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub format: InputFormat,
    /// Terms used by fewer distinct users are dropped (user logs only).
    pub min_distinct_users: u64,
    pub shards: usize,
    pub dedupe_user_term: bool,
    /// Stop at the first malformed line instead of collecting every error.
    pub fail_fast: bool,
    /// Worker thread cap; `None` uses one thread per shard up to the core count.
    pub threads: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            format: InputFormat::Paths,
            min_distinct_users: 10,
            shards: 1,
            dedupe_user_term: true,
            fail_fast: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserLogRecord {
    pub user_id: String,
    pub classification: String,
    pub terms: Vec<String>,
}

/// One (user, class, term) triple; trains as the observation `(class, term)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserTerm {
    pub user_id: String,
    pub classification: String,
    pub term: String,
}

impl UserTerm {
    pub fn observation(&self) -> Observation {
        Observation::new([self.classification.as_str(), self.term.as_str()])
    }
}

/// Parses one path-format line into an observation of `levels` labels.
pub fn parse_paths(line: &str, line_no: usize, levels: usize) -> Result<Observation, ParseError> {
    split_path(line, line_no, levels).map(Observation::new)
}

fn split_path(line: &str, line_no: usize, levels: usize) -> Result<Vec<&str>, ParseError> {
    let fields: Vec<&str> = strip_eol(line).split('\t').collect();
    if fields.len() != levels {
        return Err(ParseError { line: line_no, kind: ParseErrorKind::Arity { expected: levels, found: fields.len() } });
    }
    if let Some(i) = fields.iter().position(|f| f.is_empty()) {
        return Err(ParseError { line: line_no, kind: ParseErrorKind::EmptyLabel { field: i + 1 } });
    }
    Ok(fields)
}

/// Formats an observation as a path-format line (no trailing newline).
pub fn format_path(obs: &Observation) -> String {
    obs.labels().join("\t")
}

/// Parses one user-log line. Terms are split on commas and trimmed; empty
/// terms are skipped.
pub fn parse_userlog(line: &str, line_no: usize) -> Result<UserLogRecord, ParseError> {
    let err = |kind| ParseError { line: line_no, kind };
    let fields: Vec<&str> = strip_eol(line).split('\t').collect();
    if fields.len() != 3 {
        return Err(err(ParseErrorKind::Columns { found: fields.len() }));
    }
    let user_id = fields[0].trim();
    let classification = fields[1].trim();
    if user_id.is_empty() {
        return Err(err(ParseErrorKind::EmptyUser));
    }
    if classification.is_empty() {
        return Err(err(ParseErrorKind::EmptyClass));
    }
    let terms: Vec<String> =
        fields[2].split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
    if terms.is_empty() {
        return Err(err(ParseErrorKind::EmptyTerms));
    }
    Ok(UserLogRecord { user_id: user_id.to_owned(), classification: classification.to_owned(), terms })
}

/// One triple per term of each record, duplicates included.
pub fn expand<'a, I>(records: I) -> Vec<UserTerm>
where
    I: IntoIterator<Item = &'a UserLogRecord>,
{
    records
        .into_iter()
        .flat_map(|r| {
            r.terms.iter().map(move |t| UserTerm {
                user_id: r.user_id.clone(),
                classification: r.classification.clone(),
                term: t.clone(),
            })
        })
        .collect()
}

/// Keeps the first occurrence of each distinct triple, preserving order.
pub fn dedupe(items: Vec<UserTerm>) -> Vec<UserTerm> {
    let mut seen = FxHashSet::default();
    items.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

pub fn expand_and_dedupe<'a, I>(records: I) -> Vec<UserTerm>
where
    I: IntoIterator<Item = &'a UserLogRecord>,
{
    dedupe(expand(records))
}

/// Drops every triple whose term has fewer than `min_distinct_users`
/// distinct users across all classes. Stable.
pub fn prefilter(items: &[UserTerm], min_distinct_users: u64) -> Vec<UserTerm> {
    let borrowed: Vec<Triple<'_>> =
        items.iter().map(|t| (t.user_id.as_str(), t.classification.as_str(), t.term.as_str())).collect();
    let keep = prefilter_triples(borrowed, min_distinct_users);
    keep.into_iter()
        .map(|(u, c, t)| UserTerm { user_id: u.to_owned(), classification: c.to_owned(), term: t.to_owned() })
        .collect()
}

/// Trains a model from a file.
pub fn train_sharded(input: &Path, config: &IngestConfig, schema: ModelSchema) -> Result<Model, IngestError> {
    train_source(&Source::File(input), config, schema)
}

/// Trains a model from an in-memory buffer.
pub fn train_bytes(input: &[u8], config: &IngestConfig, schema: ModelSchema) -> Result<Model, IngestError> {
    train_source(&Source::Bytes(input), config, schema)
}

type Triple<'a> = (&'a str, &'a str, &'a str);

enum Source<'a> {
    File(&'a Path),
    Bytes(&'a [u8]),
}

impl Source<'_> {
    fn len(&self) -> io::Result<u64> {
        match self {
            Source::File(p) => Ok(std::fs::metadata(p)?.len()),
            Source::Bytes(b) => Ok(b.len() as u64),
        }
    }

    fn open(&self, range: Range<u64>) -> io::Result<Box<dyn BufRead + '_>> {
        match self {
            Source::File(p) => {
                let mut f = File::open(p)?;
                f.seek(SeekFrom::Start(range.start))?;
                Ok(Box::new(BufReader::with_capacity(1 << 16, f.take(range.end - range.start))))
            }
            Source::Bytes(b) => Ok(Box::new(&b[range.start as usize..range.end as usize])),
        }
    }

    /// First line start at or after `pos`.
    fn align(&self, pos: u64, len: u64) -> io::Result<u64> {
        if pos == 0 || pos >= len {
            return Ok(pos.min(len));
        }
        let mut reader = self.open(pos - 1..len)?;
        let mut skipped = Vec::new();
        let read = reader.read_until(b'\n', &mut skipped)?;
        Ok(pos - 1 + read as u64)
    }

    /// Splits the input into `shards` contiguous byte ranges, each starting
    /// at a line start. Some ranges may be empty.
    fn ranges(&self, shards: usize) -> io::Result<Vec<Range<u64>>> {
        let len = self.len()?;
        let mut cuts = Vec::with_capacity(shards + 1);
        cuts.push(0);
        for i in 1..shards {
            let target = len * i as u64 / shards as u64;
            let aligned = self.align(target, len)?.max(*cuts.last().unwrap());
            cuts.push(aligned);
        }
        cuts.push(len);
        Ok(cuts.windows(2).map(|w| w[0]..w[1]).collect())
    }
}

/// A shard's result: its payload, line count, and errors with shard-local
/// line numbers.
struct ShardOutput<T> {
    value: T,
    lines: usize,
    errors: Vec<ParseError>,
}

fn train_source(source: &Source<'_>, config: &IngestConfig, schema: ModelSchema) -> Result<Model, IngestError> {
    if config.shards == 0 {
        return Err(IngestError::InvalidConfig("shards must be at least 1".into()));
    }
    let threads = config.threads.unwrap_or(usize::MAX).max(1).min(config.shards);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| IngestError::InvalidConfig(e.to_string()))?;
    let ranges = source.ranges(config.shards)?;
    match config.format {
        InputFormat::Paths => pool.install(|| train_paths(source, &ranges, config, schema)),
        InputFormat::UserLog => pool.install(|| train_userlog(source, &ranges, config, schema)),
    }
}

fn for_each_line<F>(mut reader: Box<dyn BufRead + '_>, fail_fast: bool, mut f: F) -> io::Result<(usize, Vec<ParseError>)>
where
    F: FnMut(&str, usize) -> Result<(), ParseError>,
{
    let mut buf = Vec::new();
    let mut line_no = 0;
    let mut errors = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        if fail_fast && !errors.is_empty() {
            continue;
        }
        let result = match std::str::from_utf8(&buf) {
            Ok(line) if strip_eol(line).is_empty() => Ok(()),
            Ok(line) => f(line, line_no),
            Err(_) => Err(ParseError { line: line_no, kind: ParseErrorKind::InvalidUtf8 }),
        };
        if let Err(e) = result {
            errors.push(e);
        }
    }
    Ok((line_no, errors))
}

/// Converts shard-local line numbers to global ones and fails if any shard
/// reported errors.
fn collect_errors<T>(outputs: &mut [ShardOutput<T>], fail_fast: bool) -> Result<(), IngestError> {
    let mut offset = 0;
    let mut all = Vec::new();
    for out in outputs.iter_mut() {
        for mut e in out.errors.drain(..) {
            e.line += offset;
            all.push(e);
        }
        offset += out.lines;
    }
    if all.is_empty() {
        return Ok(());
    }
    if fail_fast {
        all.truncate(1);
    }
    Err(IngestError::Parse(all))
}

fn train_paths(
    source: &Source<'_>,
    ranges: &[Range<u64>],
    config: &IngestConfig,
    schema: ModelSchema,
) -> Result<Model, IngestError> {
    let levels = schema.levels();
    let shards: Vec<io::Result<ShardOutput<Model>>> = ranges
        .par_iter()
        .map(|range| {
            let mut model = Model::new(schema.clone());
            let (lines, errors) = for_each_line(source.open(range.clone())?, config.fail_fast, |line, no| {
                let fields = split_path(line, no, levels)?;
                model.ingest_path(&fields).expect("arity and labels checked");
                Ok(())
            })?;
            Ok(ShardOutput { value: model, lines, errors })
        })
        .collect();
    let mut shards = shards.into_iter().collect::<io::Result<Vec<_>>>()?;
    collect_errors(&mut shards, config.fail_fast)?;
    let mut iter = shards.into_iter().map(|s| s.value);
    let mut model = iter.next().unwrap_or_else(|| Model::new(schema));
    for partial in iter {
        model.merge_from(&partial)?;
    }
    Ok(model)
}

fn train_userlog(
    source: &Source<'_>,
    ranges: &[Range<u64>],
    config: &IngestConfig,
    schema: ModelSchema,
) -> Result<Model, IngestError> {
    if schema.levels() != 2 {
        return Err(IngestError::InvalidConfig(format!(
            "user logs train a 2-level model, schema has {} levels",
            schema.levels()
        )));
    }
    let parsed: Vec<io::Result<ShardOutput<Vec<UserLogRecord>>>> = ranges
        .par_iter()
        .map(|range| {
            let mut records = Vec::new();
            let (lines, errors) = for_each_line(source.open(range.clone())?, config.fail_fast, |line, no| {
                records.push(parse_userlog(line, no)?);
                Ok(())
            })?;
            Ok(ShardOutput { value: records, lines, errors })
        })
        .collect();
    let mut parsed = parsed.into_iter().collect::<io::Result<Vec<_>>>()?;
    collect_errors(&mut parsed, config.fail_fast)?;

    let triples = parsed.iter().flat_map(|s| s.value.iter()).flat_map(|r| {
        r.terms.iter().map(move |t| (r.user_id.as_str(), r.classification.as_str(), t.as_str()))
    });
    let triples: Vec<Triple<'_>> = if config.dedupe_user_term {
        let mut seen = FxHashSet::default();
        triples.filter(|t| seen.insert(*t)).collect()
    } else {
        triples.collect()
    };
    let triples = prefilter_triples(triples, config.min_distinct_users);

    // A class's root arc counts each user once: only the first surviving
    // triple of every (user, class) pair bumps it.
    let mut users = FxHashSet::default();
    let items: Vec<(Triple<'_>, bool)> = triples.into_iter().map(|t| (t, users.insert((t.0, t.1)))).collect();

    let chunk = items.len().div_ceil(config.shards).max(1);
    let partials: Vec<Result<Model, ModelError>> = (0..config.shards)
        .into_par_iter()
        .map(|i| {
            let start = (i * chunk).min(items.len());
            let end = ((i + 1) * chunk).min(items.len());
            let mut model = Model::with_root_counting(schema.clone(), RootCounting::DistinctUsers)?;
            for &((_, class, term), first) in &items[start..end] {
                model.ingest_path_with_root(&[class, term], first)?;
            }
            Ok(model)
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut model = iter.next().expect("shards >= 1")?;
    for partial in iter {
        model.merge_from(&partial?)?;
    }
    Ok(model)
}

fn prefilter_triples(triples: Vec<Triple<'_>>, min_distinct_users: u64) -> Vec<Triple<'_>> {
    if min_distinct_users == 0 {
        return triples;
    }
    let mut user_terms = FxHashSet::default();
    let mut users_per_term: FxHashMap<&str, u64> = FxHashMap::default();
    for &(user, _, term) in &triples {
        if user_terms.insert((user, term)) {
            *users_per_term.entry(term).or_default() += 1;
        }
    }
    triples.into_iter().filter(|(_, _, term)| users_per_term[term] >= min_distinct_users).collect()
}

fn strip_eol(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}
