//! Dataset ingestion, label normalization, stratified splitting and
//! minority-class upsampling.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Version of the in-memory record layout and the canonical CSV written by
/// [`write_dataset_csv`].
pub const SCHEMA_VERSION: u32 = 1;

/// Three-way sentiment with fixed class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Sentiment> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        normalize_label(s)
    }
}

/// Maps 3-level and 5-level raw labels onto [`Sentiment`], case-insensitively.
pub fn normalize_label(raw: &str) -> Result<Sentiment> {
    let key = raw.trim().to_ascii_lowercase();
    match key.as_str() {
        "positive" | "very_positive" => Ok(Sentiment::Positive),
        "negative" | "very_negative" => Ok(Sentiment::Negative),
        "neutral" => Ok(Sentiment::Neutral),
        "" => Err(Error::Data("empty label".into())),
        _ => Err(Error::Data(format!("unrecognized label {raw:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemeRecord {
    pub id: String,
    pub caption: String,
    pub image_path: Option<PathBuf>,
    pub label: Option<Sentiment>,
}

/// Column names to read from an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: String,
    pub caption: String,
    /// `None` loads the file as unlabeled.
    pub label: Option<String>,
    pub image: Option<String>,
}

impl Default for Schema {
    /// The canonical column names written by [`write_dataset_csv`].
    fn default() -> Self {
        Schema {
            id: "id".into(),
            caption: "caption".into(),
            label: Some("label".into()),
            image: Some("image".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source: PathBuf,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<MemeRecord>,
    provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, rejecting empty or duplicate ids.
    pub fn new(records: Vec<MemeRecord>, source: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(Error::Data(format!("record {i} has an empty id")));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate id {:?} at record {i}", r.id)));
            }
        }
        Ok(Dataset {
            records,
            provenance: Provenance {
                source: source.into(),
                schema_version: SCHEMA_VERSION,
            },
        })
    }

    pub fn records(&self) -> &[MemeRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All labels, failing on the first unlabeled record.
    pub fn labels(&self) -> Result<Vec<Sentiment>> {
        self.records
            .iter()
            .map(|r| {
                r.label
                    .ok_or_else(|| Error::Data(format!("record {:?} is unlabeled", r.id)))
            })
            .collect()
    }

    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.caption.as_str())
    }

    /// Sub-dataset of the given record indices, in the order given.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    fn class_indices(&self) -> Result<[Vec<usize>; 3]> {
        let mut by_class: [Vec<usize>; 3] = Default::default();
        for (i, label) in self.labels()?.into_iter().enumerate() {
            by_class[label.index()].push(i);
        }
        Ok(by_class)
    }
}

/// Reads a UTF-8, comma-delimited CSV with a header row.
///
/// Every row with an unparseable label is reported, not only the first.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Data(format!("{}: empty file or missing header row", path.display())));
    }
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
    };
    let id_col = column(&schema.id)?;
    let caption_col = column(&schema.caption)?;
    let label_col = schema.label.as_deref().map(column).transpose()?;
    let image_col = schema.image.as_deref().map(column).transpose()?;

    let mut records = Vec::new();
    let mut bad_labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| csv_error(path, e))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let label = match label_col {
            Some(c) => match normalize_label(field(c)) {
                Ok(l) => Some(l),
                Err(_) => {
                    bad_labels.push(format!("row {line}: {:?}", field(c)));
                    None
                }
            },
            None => None,
        };
        let image_path = image_col
            .map(field)
            .filter(|s| !s.trim().is_empty())
            .map(PathBuf::from);
        records.push(MemeRecord {
            id: field(id_col).trim().to_string(),
            caption: field(caption_col).to_string(),
            image_path,
            label,
        });
    }
    if !bad_labels.is_empty() {
        return Err(Error::Data(format!(
            "{}: unparseable labels at {}",
            path.display(),
            bad_labels.join(", ")
        )));
    }
    Dataset::new(records, path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), strip_prefix(&e))))
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Data(m) => m.clone(),
        other => other.to_string(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Format(format!("{}: {e}", path.display())),
        _ => Error::Format(format!("{}: malformed CSV: {e}", path.display())),
    }
}

/// Writes the canonical `id,caption,image,label` CSV that [`Schema::default`] reads back.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["id", "caption", "image", "label"]).map_err(io)?;
    for r in &ds.records {
        let image = r
            .image_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        let label = r.label.map(Sentiment::as_str).unwrap_or("");
        w.write_record([r.id.as_str(), r.caption.as_str(), image.as_str(), label])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Indexed by [`Sentiment::index`].
    pub counts: [usize; 3],
    pub percentages: [f64; 3],
    pub total: usize,
}

impl ClassStats {
    pub fn count(&self, s: Sentiment) -> usize {
        self.counts[s.index()]
    }

    pub fn fraction(&self, s: Sentiment) -> f64 {
        self.percentages[s.index()]
    }

    pub fn majority(&self) -> Sentiment {
        // ties go to the lower class index
        let mut best = Sentiment::Negative;
        for s in Sentiment::ALL {
            if self.counts[s.index()] > self.counts[best.index()] {
                best = s;
            }
        }
        best
    }
}

pub fn class_stats(ds: &Dataset) -> Result<ClassStats> {
    class_stats_of(&ds.labels()?)
}

pub fn class_stats_of(labels: &[Sentiment]) -> Result<ClassStats> {
    if labels.is_empty() {
        return Err(Error::Data("class statistics of an empty dataset".into()));
    }
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let total = labels.len();
    let percentages = counts.map(|c| c as f64 / total as f64);
    Ok(ClassStats {
        counts,
        percentages,
        total,
    })
}

/// Per-class shuffled split. Each class contributes `floor((1 - f) * n_c)`
/// records to the validation part and the rest to training; both parts keep
/// the original record order.
pub fn stratified_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut train = Vec::with_capacity(ds.len());
    let mut val = Vec::new();
    for mut idx in ds.class_indices()? {
        idx.shuffle(&mut rng);
        let n_val = validation_count(idx.len(), train_fraction);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

fn validation_count(n: usize, train_fraction: f64) -> usize {
    // 1 - 0.8 is 0.19999999999999996; the nudge keeps exact products exact
    let raw = n as f64 * (1.0 - train_fraction);
    ((raw + 1e-9).floor() as usize).min(n)
}

/// Duplicates minority-class records, drawn uniformly with replacement,
/// until every present class matches the majority count.
///
/// Copies keep caption, image and label; their ids get a `~upN` suffix so
/// ids stay unique. Originals come first, unchanged and in order.
pub fn upsample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Data("cannot upsample an empty dataset".into()));
    }
    let by_class = ds.class_indices()?;
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = rng::stream(seed, Stream::Upsample);
    let mut records = ds.records.clone();
    let mut taken: HashSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let mut serial = 0usize;
    for idx in by_class.iter().filter(|v| !v.is_empty()) {
        for _ in idx.len()..target {
            let src = &ds.records[idx[rng.random_range(0..idx.len())]];
            let id = loop {
                serial += 1;
                let candidate = format!("{}~up{serial}", src.id);
                if !taken.contains(&candidate) {
                    break candidate;
                }
            };
            taken.insert(id.clone());
            records.push(MemeRecord {
                id,
                ..src.clone()
            });
        }
    }
    Ok(Dataset {
        records,
        provenance: ds.provenance.clone(),
    })
}
