//! Pre-trained word vector tables and mean-pooled caption embeddings.
//!
//! Binary layout: an ASCII header `"<vocab_size> <dim>\n"`, then per word the
//! token bytes, one space, `dim` little-endian `f32`s and an optional `\n`.
//! The text layout has the same header line followed by one
//! `token v1 ... vdim` line per word.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Binary,
    Text,
}

/// What to do with token bytes that are not valid UTF-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Utf8Policy {
    #[default]
    Reject,
    Replace,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Keep only these words. The whole file is still read and validated.
    pub vocab_filter: Option<HashSet<String>>,
    pub utf8: Utf8Policy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSource {
    pub path: PathBuf,
    pub format: TableFormat,
    /// Vocabulary size from the file header.
    pub declared_vocab: usize,
    /// Whether binary entries were newline-terminated.
    pub newline_after_vector: bool,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
    source: TableSource,
}

impl EmbeddingTable {
    /// In-memory table; the first occurrence of a repeated word wins lookups.
    pub fn from_entries<S: Into<String>>(
        dim: usize,
        entries: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = EmbeddingTable::empty(
            dim,
            TableSource {
                path: PathBuf::new(),
                format: TableFormat::Binary,
                declared_vocab: 0,
                newline_after_vector: true,
            },
        )?;
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector of length {} in a dim-{dim} table", v.len())));
            }
            table.push(word.into(), &v)?;
        }
        table.source.declared_vocab = table.len();
        Ok(table)
    }

    fn empty(dim: usize, source: TableSource) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
            source,
        })
    }

    fn push(&mut self, word: String, v: &[f64]) -> Result<()> {
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "word {} ({word:?}) has a non-finite component at {bad}",
                self.words.len()
            )));
        }
        self.index.entry(word.clone()).or_insert(self.words.len());
        self.words.push(word);
        self.vectors.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source(&self) -> &TableSource {
        &self.source
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vector(i))
    }

    fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words
            .iter()
            .enumerate()
            .map(move |(i, w)| (w.as_str(), self.vector(i)))
    }
}

pub fn load_word2vec_binary(path: &Path, opts: &LoadOptions) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = read_word2vec_binary(&mut BufReader::new(file), opts)?;
    table.source.path = path.to_path_buf();
    Ok(table)
}

pub fn read_word2vec_binary<R: BufRead>(reader: &mut R, opts: &LoadOptions) -> Result<EmbeddingTable> {
    let io = |e: std::io::Error| Error::Format(format!("read failed: {e}"));
    let mut header = Vec::new();
    reader.read_until(b'\n', &mut header).map_err(io)?;
    let (vocab, dim) = parse_header(&String::from_utf8_lossy(&header))?;
    let mut table = EmbeddingTable::empty(
        dim,
        TableSource {
            path: PathBuf::new(),
            format: TableFormat::Binary,
            declared_vocab: vocab,
            newline_after_vector: true,
        },
    )?;

    let mut raw = vec![0u8; dim * 4];
    let mut vector = vec![0.0f64; dim];
    let mut token = Vec::new();
    for i in 0..vocab {
        skip_newlines(reader).map_err(io)?;
        token.clear();
        reader.read_until(b' ', &mut token).map_err(io)?;
        if token.pop() != Some(b' ') {
            return Err(Error::Format(format!(
                "truncated file: word {i} of {vocab} has no token"
            )));
        }
        if token.is_empty() {
            return Err(Error::Format(format!("word {i} has an empty token")));
        }
        let word = decode_token(&token, i, opts.utf8)?;
        reader.read_exact(&mut raw).map_err(|_| {
            Error::Format(format!("truncated file: vector of word {i} ({word:?}) is incomplete"))
        })?;
        if i == 0 {
            table.source.newline_after_vector = reader.fill_buf().map_err(io)?.first() == Some(&b'\n');
        }
        if keep(opts, &word) {
            for (dst, b) in vector.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            }
            table.push(word, &vector)?;
        }
    }

    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(io)?;
    if rest.iter().any(|b| !b.is_ascii_whitespace()) {
        return Err(Error::Format(format!(
            "header declares {vocab} words but {} trailing bytes follow the last one",
            rest.len()
        )));
    }
    Ok(table)
}

fn skip_newlines<R: BufRead>(reader: &mut R) -> std::io::Result<()> {
    loop {
        let buf = reader.fill_buf()?;
        let n = buf.iter().take_while(|&&b| b == b'\n' || b == b'\r').count();
        if n == 0 {
            return Ok(());
        }
        reader.consume(n);
    }
}

fn decode_token(bytes: &[u8], i: usize, policy: Utf8Policy) -> Result<String> {
    match (std::str::from_utf8(bytes), policy) {
        (Ok(s), _) => Ok(s.to_string()),
        (Err(_), Utf8Policy::Replace) => Ok(String::from_utf8_lossy(bytes).into_owned()),
        (Err(e), Utf8Policy::Reject) => Err(Error::Format(format!("word {i} is not valid UTF-8: {e}"))),
    }
}

fn keep(opts: &LoadOptions, word: &str) -> bool {
    opts.vocab_filter.as_ref().is_none_or(|f| f.contains(word))
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut parts = line.split_whitespace();
    let bad = || Error::Format(format!("bad header {:?}, expected \"<vocab_size> <dim>\"", line.trim_end()));
    let vocab = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let dim = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((vocab, dim))
}

pub fn write_word2vec_binary<W: Write>(table: &EmbeddingTable, w: &mut W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    writeln!(w, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (word, v) in table.iter() {
        w.write_all(word.as_bytes()).map_err(io)?;
        w.write_all(b" ").map_err(io)?;
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
        if table.source.newline_after_vector {
            w.write_all(b"\n").map_err(io)?;
        }
    }
    Ok(())
}

pub fn save_word2vec_binary(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_word2vec_binary(table, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_word2vec_text(path: &Path, opts: &LoadOptions) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = read_word2vec_text(BufReader::new(file), opts)?;
    table.source.path = path.to_path_buf();
    Ok(table)
}

pub fn read_word2vec_text<R: BufRead>(reader: R, opts: &LoadOptions) -> Result<EmbeddingTable> {
    let mut lines = reader.split(b'\n').enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::Format(format!("read failed: {e}")))?,
        None => return Err(Error::Format("empty embedding file".into())),
    };
    let (vocab, dim) = parse_header(&String::from_utf8_lossy(&header))?;
    let mut table = EmbeddingTable::empty(
        dim,
        TableSource {
            path: PathBuf::new(),
            format: TableFormat::Text,
            declared_vocab: vocab,
            newline_after_vector: true,
        },
    )?;
    let mut vector = Vec::with_capacity(dim);
    let mut seen = 0usize;
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Format(format!("read failed: {e}")))?;
        let line = decode_token(&line, seen, opts.utf8)
            .map_err(|_| Error::Format(format!("line {line_no} is not valid UTF-8")))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        if seen == vocab {
            return Err(Error::Format(format!(
                "line {line_no}: more entries than the {vocab} declared in the header"
            )));
        }
        vector.clear();
        for f in fields {
            let x: f32 = f
                .parse()
                .map_err(|_| Error::Format(format!("line {line_no}: bad number {f:?}")))?;
            vector.push(f64::from(x));
        }
        if vector.len() != dim {
            return Err(Error::Format(format!(
                "line {line_no}: {} components, expected {dim}",
                vector.len()
            )));
        }
        if keep(opts, word) {
            table.push(word.to_string(), &vector)?;
        }
        seen += 1;
    }
    if seen != vocab {
        return Err(Error::Format(format!(
            "header declares {vocab} words but the file has {seen}"
        )));
    }
    Ok(table)
}

pub fn write_word2vec_text<W: Write>(table: &EmbeddingTable, w: &mut W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    writeln!(w, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (word, v) in table.iter() {
        w.write_all(word.as_bytes()).map_err(io)?;
        for &x in v {
            write!(w, " {}", x as f32).map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

/// Loads either format.
pub fn load_table(path: &Path, format: TableFormat, opts: &LoadOptions) -> Result<EmbeddingTable> {
    match format {
        TableFormat::Binary => load_word2vec_binary(path, opts),
        TableFormat::Text => load_word2vec_text(path, opts),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEmbedding {
    pub vector: Vec<f64>,
    /// In-vocabulary tokens.
    pub covered: usize,
    pub total: usize,
}

impl CaptionEmbedding {
    pub fn is_all_oov(&self) -> bool {
        self.covered == 0
    }
}

/// Mean of the in-vocabulary token vectors; out-of-vocabulary tokens are
/// skipped and a caption with none left maps to the zero vector.
///
/// Vectors are summed in table order, so the result is bit-identical under
/// any permutation of `tokens`.
pub fn caption_embedding<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> CaptionEmbedding {
    let mut hits: Vec<usize> = tokens
        .iter()
        .filter_map(|t| table.index.get(t.as_ref()).copied())
        .collect();
    hits.sort_unstable();
    let mut vector = vec![0.0; table.dim];
    for &i in &hits {
        for (acc, x) in vector.iter_mut().zip(table.vector(i)) {
            *acc += x;
        }
    }
    if !hits.is_empty() {
        let n = hits.len() as f64;
        vector.iter_mut().for_each(|x| *x /= n);
    }
    CaptionEmbedding {
        vector,
        covered: hits.len(),
        total: tokens.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub captions: usize,
    pub all_oov_captions: usize,
    /// Fraction of captions with no in-vocabulary token.
    pub all_oov_fraction: f64,
    pub tokens: usize,
    pub covered_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusEmbedding {
    /// `captions x dim`
    pub matrix: Matrix,
    pub coverage: Coverage,
    pub all_oov: Vec<bool>,
}

pub fn embed_corpus<S: AsRef<str> + Sync>(captions: &[Vec<S>], table: &EmbeddingTable) -> CorpusEmbedding {
    let rows: Vec<CaptionEmbedding> = captions
        .par_iter()
        .map(|tokens| caption_embedding(tokens, table))
        .collect();
    let mut data = Vec::with_capacity(rows.len() * table.dim);
    let mut coverage = Coverage {
        captions: rows.len(),
        all_oov_captions: 0,
        all_oov_fraction: 0.0,
        tokens: 0,
        covered_tokens: 0,
    };
    let mut all_oov = Vec::with_capacity(rows.len());
    for row in &rows {
        data.extend_from_slice(&row.vector);
        coverage.tokens += row.total;
        coverage.covered_tokens += row.covered;
        coverage.all_oov_captions += usize::from(row.is_all_oov());
        all_oov.push(row.is_all_oov());
    }
    if !rows.is_empty() {
        coverage.all_oov_fraction = coverage.all_oov_captions as f64 / rows.len() as f64;
    }
    CorpusEmbedding {
        matrix: Matrix::from_vec(rows.len(), table.dim, data).expect("rows have table width"),
        coverage,
        all_oov,
    }
}
