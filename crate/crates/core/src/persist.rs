//! Canonical text model files.
//!
//! ```text
//! PGMHD<TAB>1
//! levels<TAB>2<TAB>class<TAB>term
//! counting<TAB>distinct-users
//! n<TAB>19
//! nodes<TAB>20
//! edges<TAB>21
//! node<TAB>0<TAB>ROOT<TAB>0<TAB>5
//! ...
//! edge<TAB>0<TAB>ROOT<TAB>Java Developer<TAB>2
//! ...
//! ```
//!
//! Every line ends in `\n`. Node records are sorted by `(level, label)`,
//! edge records by `(parent level, parent label, child label)`; the child of
//! an edge record always lives one level below its parent. Labels escape
//! `\` as `\\`, tab as `\t`, newline as `\n` and carriage return as `\r`.
//! The full layout is documented in `docs/model-format.md`.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::{Edge, Model, ModelError, ModelSchema, NodeRef, NodeStat, RootCounting, Violation, FORMAT_VERSION};

pub const MAGIC: &str = "PGMHD";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("refusing to save an invalid model ({} violation(s), first: {})", .0.len(), .0[0])]
    InvalidModel(Vec<Violation>),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("header declares {declared} {what}, file holds {found}")]
    CountMismatch { what: &'static str, declared: usize, found: usize },
    #[error("line {line}: records out of canonical order")]
    Unsorted { line: usize },
    #[error("referential integrity: {0}")]
    Reference(ModelError),
    #[error("loaded model is inconsistent ({} violation(s), first: {})", .0.len(), .0[0])]
    Inconsistent(Vec<Violation>),
}

pub fn save<W: Write>(model: &Model, out: W) -> Result<(), PersistError> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(PersistError::InvalidModel(violations));
    }
    let mut out = BufWriter::new(out);
    let nodes = model.nodes();
    let edges = model.edges();
    writeln!(out, "{MAGIC}\t{}", model.format_version())?;
    write!(out, "levels\t{}", model.levels())?;
    for name in model.schema().level_names() {
        write!(out, "\t{}", escape(name))?;
    }
    writeln!(out)?;
    writeln!(out, "counting\t{}", model.root_counting())?;
    writeln!(out, "n\t{}", model.n())?;
    writeln!(out, "nodes\t{}", nodes.len())?;
    writeln!(out, "edges\t{}", edges.len())?;
    for (node, stat) in &nodes {
        writeln!(out, "node\t{}\t{}\t{}\t{}", node.level, escape(&node.label), stat.in_total, stat.out_total)?;
    }
    for e in &edges {
        writeln!(out, "edge\t{}\t{}\t{}\t{}", e.parent.level, escape(&e.parent.label), escape(&e.child.label), e.freq)?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>, PersistError> {
    let mut buf = Vec::new();
    save(model, &mut buf)?;
    Ok(buf)
}

pub fn save_file(model: &Model, path: &Path) -> Result<(), PersistError> {
    // Validate before truncating the destination.
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load<R: Read>(mut input: R) -> Result<Model, PersistError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn load_file(path: &Path) -> Result<Model, PersistError> {
    load(File::open(path)?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, PersistError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PersistError::Malformed {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    // A trailing fragment without its newline is a truncated record.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, magic) = lines.next().ok_or(PersistError::BadMagic)?;
    let fields: Vec<&str> = magic.split('\t').collect();
    if fields.first() != Some(&MAGIC) || fields.len() != 2 {
        return Err(PersistError::BadMagic);
    }
    if fields[1] != FORMAT_VERSION.to_string() {
        return Err(PersistError::UnsupportedVersion(fields[1].to_owned()));
    }

    let mut header = |key: &str| -> Result<(usize, Vec<&str>), PersistError> {
        let (no, line) = lines.next().ok_or(PersistError::Malformed { line: 0, message: format!("missing {key} header") })?;
        let mut parts = line.split('\t');
        if parts.next() != Some(key) {
            return Err(PersistError::Malformed { line: no, message: format!("expected {key} header") });
        }
        Ok((no, parts.collect()))
    };

    let (no, level_fields) = header("levels")?;
    let m: usize = parse_num(level_fields.first().copied().unwrap_or(""), no)?;
    if level_fields.len() != m + 1 {
        return Err(PersistError::Malformed { line: no, message: format!("expected {m} level names") });
    }
    let names = level_fields[1..].iter().map(|n| unescape(n, no)).collect::<Result<Vec<_>, _>>()?;
    let schema = ModelSchema::new(names).map_err(|e| PersistError::Malformed { line: no, message: e.to_string() })?;

    let (no, counting) = header("counting")?;
    let counting = match counting.as_slice() {
        [c] => RootCounting::parse(c),
        _ => None,
    }
    .ok_or_else(|| PersistError::Malformed { line: no, message: "unknown root counting".into() })?;
    let (no, n) = header("n")?;
    let n: u64 = parse_single(&n, no)?;
    let (no, node_count) = header("nodes")?;
    let node_count: usize = parse_single(&node_count, no)?;
    let (no, edge_count) = header("edges")?;
    let edge_count: usize = parse_single(&edge_count, no)?;

    let mut nodes: Vec<(NodeRef, NodeStat)> = Vec::with_capacity(node_count);
    let mut edges: Vec<Edge> = Vec::with_capacity(edge_count);
    for (no, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        match f.first().copied() {
            Some("node") if f.len() == 5 => {
                if !edges.is_empty() {
                    return Err(PersistError::Unsorted { line: no });
                }
                let node = NodeRef::new(parse_num(f[1], no)?, unescape(f[2], no)?);
                let stat = NodeStat { in_total: parse_num(f[3], no)?, out_total: parse_num(f[4], no)? };
                if nodes.last().is_some_and(|(prev, _)| (prev.level, prev.label.as_bytes()) >= (node.level, node.label.as_bytes())) {
                    return Err(PersistError::Unsorted { line: no });
                }
                nodes.push((node, stat));
            }
            Some("edge") if f.len() == 5 => {
                let level: usize = parse_num(f[1], no)?;
                let parent = NodeRef::new(level, unescape(f[2], no)?);
                let child = NodeRef::new(level + 1, unescape(f[3], no)?);
                let freq = parse_num(f[4], no)?;
                if edges.last().is_some_and(|prev: &Edge| {
                    (prev.parent.level, prev.parent.label.as_bytes(), prev.child.label.as_bytes())
                        >= (parent.level, parent.label.as_bytes(), child.label.as_bytes())
                }) {
                    return Err(PersistError::Unsorted { line: no });
                }
                edges.push(Edge { parent, child, freq });
            }
            _ => return Err(PersistError::Malformed { line: no, message: "unrecognized record".into() }),
        }
    }
    if nodes.len() != node_count {
        return Err(PersistError::CountMismatch { what: "nodes", declared: node_count, found: nodes.len() });
    }
    if edges.len() != edge_count {
        return Err(PersistError::CountMismatch { what: "edges", declared: edge_count, found: edges.len() });
    }
    let model = Model::from_parts(schema, counting, n, nodes, edges).map_err(PersistError::Reference)?;
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(PersistError::Inconsistent(violations));
    }
    Ok(model)
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, PersistError> {
    // Canonical decimal only: no sign, no leading zeros.
    let canonical = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    match s.parse() {
        Ok(v) if canonical => Ok(v),
        _ => Err(PersistError::Malformed { line, message: format!("bad number {s:?}") }),
    }
}

fn parse_single<T: std::str::FromStr>(fields: &[&str], line: usize) -> Result<T, PersistError> {
    match fields {
        [v] => parse_num(v, line),
        _ => Err(PersistError::Malformed { line, message: "expected one value".into() }),
    }
}

pub fn escape(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for ch in label.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(field: &str, line: usize) -> Result<String, PersistError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(PersistError::Malformed { line, message: format!("bad escape \\{}", other.unwrap_or(' ')) })
            }
        }
    }
    Ok(out)
}
