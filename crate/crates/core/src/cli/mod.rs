//! The `memotion` command line.

mod config;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{
    BowSection, CnnSection, EmbeddingsSection, NbSection, NetSection, PrepSection, RunConfig, SchemaSection, StabilitySection,
    StackerSection, TrainSection,
};

use crate::corpus::{class_stats, load_dataset, stratified_split, upsample, write_dataset_csv, ClassStats, Dataset, Schema, Sentiment};
use crate::embeddings::{load_table, Coverage, EmbeddingTable, LoadOptions};
use crate::error::{Error, Result};
use crate::eval::{self, compare_report, config_hash, majority_baseline, EvalReport, RunMeta, StabilityConfig};
use crate::models::ProbDist3;
use crate::pipeline::{train_model, ModelType, Prediction, Resources, Trained};
use crate::textprep::{preprocess, PrepConfig};

#[derive(Debug, Parser)]
#[command(name = "memotion", version, about = "Meme caption sentiment classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and normalize a dataset, report class balance, write the canonical CSV.
    Prepare(Common),
    /// Train a model and score it on a held-out split.
    Train(Common),
    /// Write predictions (id, label, p_neg, p_neu, p_pos) for a dataset.
    Predict(PredictArgs),
    /// Score a predictions CSV against gold labels.
    Eval(EvalArgs),
    /// Train and score one model per seed and summarize the spread.
    Stability(StabilityArgs),
    /// Rank evaluation reports by macro-F1.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model kind: nb, ffnn_w2v, ffnn_bow, cnn_hsv or fusion.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Word2vec table; the format comes from the config (binary by default).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Upsample minority classes in the training portion.
    #[arg(long)]
    pub upsample: bool,
    /// Training fraction of the labeled data (1 trains on everything).
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Overrides the embedding table path stored in the model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Supplies the input schema and embedding format.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Labeled dataset CSV.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Model name recorded in the report.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub modality: Option<String>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command; the caller maps errors to exit codes.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => cmd_prepare(&resolve(&c)?),
        Command::Train(c) => cmd_train(&resolve(&c)?).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Stability(a) => {
            let mut cfg = resolve(&a.common)?;
            if let Some(n) = a.runs {
                cfg.stability.runs = n;
            }
            cmd_stability(&cfg)
        }
        Command::Compare(a) => cmd_compare(&a),
    }
}

/// Config file (or defaults) with flags applied on top.
pub fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.model {
        cfg.model = m.parse()?;
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(e) = &c.embeddings {
        cfg.embeddings.path = Some(e.clone());
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if c.upsample {
        cfg.upsample = true;
    }
    if let Some(s) = c.split {
        cfg.split = s;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and stores the resolved config there.
/// Returns the config text hash.
fn persist_config(cfg: &RunConfig) -> Result<String> {
    create_out(&cfg.out)?;
    let text = cfg.to_toml();
    write(&cfg.out.join("config.toml"), &text)?;
    Ok(config_hash(&text))
}

/// `schema` with optional columns dropped when the file lacks them.
fn schema_for(path: &Path, schema: &Schema, require_label: bool) -> Result<Schema> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let headers: HashSet<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut s = schema.clone();
    if !require_label {
        s.label = s.label.filter(|l| headers.contains(l));
    }
    s.image = s.image.filter(|c| headers.contains(c));
    Ok(s)
}

fn load_with(cfg: &RunConfig, path: &Path, require_label: bool) -> Result<Dataset> {
    let schema = cfg.schema.to_schema();
    let schema = if fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false) {
        schema_for(path, &schema, require_label)?
    } else {
        schema
    };
    load_dataset(path, &schema)
}

/// Loads only the words that can occur in `datasets` after preprocessing.
fn load_embeddings(path: &Path, cfg: &RunConfig, prep: &PrepConfig, datasets: &[&Dataset]) -> Result<EmbeddingTable> {
    let vocab: HashSet<String> = datasets
        .iter()
        .flat_map(|d| d.captions())
        .flat_map(|c| preprocess(c, prep))
        .collect();
    let opts = LoadOptions {
        vocab_filter: Some(vocab),
        ..LoadOptions::default()
    };
    load_table(path, cfg.embeddings.format, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub labeled: bool,
    pub classes: Option<ClassStats>,
    /// Token-count bucket label to caption count, after preprocessing.
    pub caption_tokens: BTreeMap<String, usize>,
    pub mean_tokens: f64,
}

const BUCKETS: [(usize, usize, &str); 6] = [
    (0, 0, "00: 0"),
    (1, 4, "01: 1-4"),
    (5, 9, "02: 5-9"),
    (10, 19, "03: 10-19"),
    (20, 39, "04: 20-39"),
    (40, usize::MAX, "05: 40+"),
];

pub fn summarize(ds: &Dataset, prep: &PrepConfig) -> Result<DatasetSummary> {
    let labeled = ds.records().iter().all(|r| r.label.is_some());
    let lens: Vec<usize> = ds.captions().map(|c| preprocess(c, prep).len()).collect();
    let mut caption_tokens: BTreeMap<String, usize> = BUCKETS.iter().map(|b| (b.2.to_string(), 0)).collect();
    for &n in &lens {
        let b = BUCKETS.iter().find(|b| n >= b.0 && n <= b.1).expect("buckets cover all lengths");
        *caption_tokens.get_mut(b.2).expect("seeded") += 1;
    }
    Ok(DatasetSummary {
        records: ds.len(),
        labeled,
        classes: if labeled { Some(class_stats(ds)?) } else { None },
        caption_tokens,
        mean_tokens: lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64,
    })
}

impl DatasetSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!("records  {}\n", self.records);
        if let Some(c) = &self.classes {
            for k in Sentiment::ALL {
                let _ = writeln!(s, "{:<9}{:>6}  {:>5.1}%", k.as_str(), c.count(k), 100.0 * c.fraction(k));
            }
        } else {
            s.push_str("unlabeled\n");
        }
        let _ = writeln!(s, "\ntokens per caption (mean {:.2})", self.mean_tokens);
        for (k, v) in &self.caption_tokens {
            let _ = writeln!(s, "{:<8}{v:>6}", &k[4..]);
        }
        s
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let path = cfg.dataset()?;
    let prep = cfg.prep()?;
    prep.validate()?;
    let ds = load_with(cfg, path, false)?;
    persist_config(cfg)?;
    write_dataset_csv(&ds, &cfg.out.join("dataset.csv"))?;
    let summary = summarize(&ds, &prep)?;
    let text = summary.to_text();
    write(&cfg.out.join("stats.json"), &serde_json::to_string_pretty(&summary).expect("plain data"))?;
    write(&cfg.out.join("stats.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelType,
    pub seed: u64,
    pub config_hash: String,
    pub train_size: usize,
    pub validation_size: usize,
    pub epoch_losses: Vec<f64>,
    pub coverage: Option<Coverage>,
    pub validation: Option<EvalReport>,
    pub majority_baseline: Option<EvalReport>,
}

fn upsample_if(cfg: &RunConfig, train: Dataset, seed: u64) -> Result<Dataset> {
    if cfg.upsample {
        upsample(&train, seed)
    } else {
        Ok(train)
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate_for_training()?;
    let hyper = cfg.hyper()?;
    let ds = load_with(cfg, cfg.dataset()?, true)?;
    let (train, val) = if cfg.split < 1.0 {
        let (t, v) = stratified_split(&ds, cfg.split, cfg.seed)?;
        (t, Some(v))
    } else {
        (ds.clone(), None)
    };
    let train = upsample_if(cfg, train, cfg.seed)?;
    let hash = persist_config(cfg)?;
    let table = match &cfg.embeddings.path {
        Some(p) if cfg.model.needs_embeddings() => Some(load_embeddings(p, cfg, &hyper.prep, &[&ds])?),
        _ => None,
    };
    let image_root = cfg.image_root();
    let res = Resources {
        table: table.as_ref(),
        image_root: image_root.as_deref(),
    };
    let (model, log) = train_model(cfg.model, &hyper, &train, res)?;
    model.save(&cfg.out.join("model.bin"))?;

    let meta = RunMeta {
        model: Some(cfg.model.to_string()),
        modality: Some(cfg.model.modality().to_string()),
        seed: Some(cfg.seed),
        config_hash: Some(hash.clone()),
        ..RunMeta::now()
    };
    let (validation, baseline) = match &val {
        Some(v) => {
            let preds = model.predict(v, res)?;
            write_predictions(&cfg.out.join("validation_predictions.csv"), v, &preds)?;
            write_dataset_csv(v, &cfg.out.join("validation.csv"))?;
            let golds = v.labels()?;
            let labels: Vec<Sentiment> = preds.iter().map(|p| p.label).collect();
            let mut r = eval::macro_f1(&labels, &golds)?;
            r.meta = meta.clone();
            let mut b = majority_baseline(&train.labels()?, &golds)?;
            b.meta = RunMeta {
                model: Some("majority".into()),
                modality: Some("-".into()),
                ..meta.clone()
            };
            write(&cfg.out.join("eval.json"), &r.to_json())?;
            write(&cfg.out.join("eval.txt"), &r.to_text())?;
            write(&cfg.out.join("baseline.json"), &b.to_json())?;
            (Some(r), Some(b))
        }
        None => (None, None),
    };
    let report = TrainReport {
        model: cfg.model,
        seed: cfg.seed,
        config_hash: hash,
        train_size: train.len(),
        validation_size: val.as_ref().map_or(0, Dataset::len),
        epoch_losses: log.losses,
        coverage: log.coverage,
        validation,
        majority_baseline: baseline,
    };
    write(&cfg.out.join("train_report.json"), &serde_json::to_string_pretty(&report).expect("plain data"))?;
    print!("{}", train_summary(&report));
    Ok(report)
}

fn train_summary(r: &TrainReport) -> String {
    let mut s = format!("model {} seed {}: {} training examples\n", r.model, r.seed, r.train_size);
    for (i, l) in r.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "epoch {:>3}  loss {l:.6}", i + 1);
    }
    if let Some(c) = &r.coverage {
        let _ = writeln!(
            s,
            "embedding coverage: {}/{} tokens, {} captions with no known word",
            c.covered_tokens, c.tokens, c.all_oov_captions
        );
    }
    if let (Some(v), Some(b)) = (&r.validation, &r.majority_baseline) {
        let _ = writeln!(
            s,
            "validation macro-F1 {:.4} on {} examples (majority baseline {:.4})",
            v.macro_f1, r.validation_size, b.macro_f1
        );
    }
    s
}

pub fn write_predictions(path: &Path, ds: &Dataset, preds: &[Prediction]) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    w.write_record(["id", "label", "p_neg", "p_neu", "p_pos"]).map_err(fmt)?;
    for (r, p) in ds.records().iter().zip(preds) {
        let [a, b, c] = p.probs.0;
        w.write_record([r.id.clone(), p.label.to_string(), a.to_string(), b.to_string(), c.to_string()])
            .map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct PredRow {
    id: String,
    label: String,
    p_neg: f64,
    p_neu: f64,
    p_pos: f64,
}

/// Reads a predictions CSV back into `(id, label, probabilities)` rows.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Sentiment, ProbDist3)>> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(fmt)?;
    rdr.deserialize::<PredRow>()
        .map(|row| {
            let row = row.map_err(fmt)?;
            let label = row.label.parse::<Sentiment>()?;
            Ok((row.id, label, ProbDist3([row.p_neg, row.p_neu, row.p_pos])))
        })
        .collect()
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.dataset = Some(a.dataset.clone());
    cfg.out = a.out.clone();
    let model = Trained::load(&a.model)?;
    cfg.model = model.kind();
    let ds = load_with(&cfg, &a.dataset, false)?;
    let table = match &model {
        Trained::FfnnW2v(m) => {
            let path = a.embeddings.clone().unwrap_or_else(|| m.embedding.path.clone());
            cfg.embeddings.path = Some(path.clone());
            cfg.embeddings.format = m.embedding.format;
            Some(load_embeddings(&path, &cfg, &m.prep, &[&ds])?)
        }
        _ => None,
    };
    persist_config(&cfg)?;
    let image_root = cfg.image_root();
    let preds = model.predict(
        &ds,
        Resources {
            table: table.as_ref(),
            image_root: image_root.as_deref(),
        },
    )?;
    write_predictions(&cfg.out.join("predictions.csv"), &ds, &preds)?;
    let oov = preds.iter().filter(|p| p.all_oov).count();
    println!("{} predictions written to {}", preds.len(), cfg.out.join("predictions.csv").display());
    if oov > 0 {
        eprintln!("warning: {oov} captions had no word in the embedding table");
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.dataset = Some(a.gold.clone());
    cfg.out = a.out.clone();
    let gold = load_with(&cfg, &a.gold, true)?;
    let preds = read_predictions(&a.predictions)?;
    let mut by_id: HashMap<&str, Sentiment> = HashMap::with_capacity(preds.len());
    for (id, label, _) in &preds {
        if by_id.insert(id.as_str(), *label).is_some() {
            return Err(Error::Data(format!("prediction id {id:?} appears twice")));
        }
    }
    if preds.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold records",
            preds.len(),
            gold.len()
        )));
    }
    let mut p = Vec::with_capacity(gold.len());
    for r in gold.records() {
        p.push(
            *by_id
                .get(r.id.as_str())
                .ok_or_else(|| Error::Data(format!("no prediction for id {:?}", r.id)))?,
        );
    }
    let hash = persist_config(&cfg)?;
    let mut report = eval::macro_f1(&p, &gold.labels()?)?;
    report.meta = RunMeta {
        model: a.name.clone(),
        modality: a.modality.clone(),
        config_hash: Some(hash),
        ..RunMeta::now()
    };
    write(&cfg.out.join("eval.json"), &report.to_json())?;
    write(&cfg.out.join("eval.txt"), &report.to_text())?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn cmd_stability(cfg: &RunConfig) -> Result<()> {
    cfg.validate_for_training()?;
    if cfg.split >= 1.0 {
        return Err(Error::Config("a stability study needs a validation split (split < 1)".into()));
    }
    let hyper = cfg.hyper()?;
    let ds = load_with(cfg, cfg.dataset()?, true)?;
    persist_config(cfg)?;
    let table = match &cfg.embeddings.path {
        Some(p) if cfg.model.needs_embeddings() => Some(load_embeddings(p, cfg, &hyper.prep, &[&ds])?),
        _ => None,
    };
    let image_root = cfg.image_root();
    let res = Resources {
        table: table.as_ref(),
        image_root: image_root.as_deref(),
    };
    let study = StabilityConfig {
        seed0: cfg.seed,
        n_runs: cfg.stability.runs,
        train_fraction: cfg.split,
        resplit: cfg.stability.resplit,
    };
    let report = eval::stability_study(&ds, &study, |train, val, seed| {
        let train = upsample_if(cfg, train.clone(), seed)?;
        let (model, _) = train_model(cfg.model, &hyper.with_seed(seed), &train, res)?;
        Ok(model.predict(val, res)?.into_iter().map(|p| p.label).collect())
    })?;
    write(&cfg.out.join("stability.json"), &report.to_json())?;
    write(&cfg.out.join("stability.txt"), &report.to_text())?;
    report.write_runs_csv(&cfg.out.join("runs.csv"))?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let mut entries = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r = EvalReport::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let name = r
            .meta
            .model
            .clone()
            .unwrap_or_else(|| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()));
        let modality = r.meta.modality.clone().unwrap_or_else(|| "-".into());
        entries.push((name, modality, r));
    }
    let table = compare_report(&entries)?;
    create_out(&a.out)?;
    write(&a.out.join("compare.json"), &table.to_json())?;
    write(&a.out.join("compare.txt"), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}
