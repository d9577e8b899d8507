//! Scoring: confusion matrices, macro-F1, baselines, the multi-seed
//! stability study and model comparison tables.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{class_stats_of, stratified_split, Dataset, Sentiment};
use crate::error::{Error, Result};

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; 3]; 3]);

impl ConfusionMatrix {
    pub fn from_pairs(preds: &[Sentiment], golds: &[Sentiment]) -> Result<Self> {
        check_lengths(preds, golds)?;
        let mut m = [[0u64; 3]; 3];
        for (p, g) in preds.iter().zip(golds) {
            m[g.index()][p.index()] += 1;
        }
        Ok(ConfusionMatrix(m))
    }

    pub fn get(&self, gold: Sentiment, pred: Sentiment) -> u64 {
        self.0[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..3).all(|g| (0..3).all(|p| g == p || self.0[g][p] == 0))
    }

    /// Per-class precision, recall and F1 with every 0/0 taken as 0.
    pub fn class_scores(&self) -> [ClassScores; 3] {
        std::array::from_fn(|c| {
            let tp = self.0[c][c] as f64;
            let predicted: u64 = (0..3).map(|g| self.0[g][c]).sum();
            let support: u64 = self.0[c].iter().sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            ClassScores {
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support,
            }
        })
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check_lengths(preds: &[Sentiment], golds: &[Sentiment]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("nothing to score".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: Option<String>,
    pub modality: Option<String>,
    pub seed: Option<u64>,
    /// SHA-256 of the resolved configuration text.
    pub config_hash: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunMeta {
    pub fn now() -> Self {
        RunMeta {
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            ..RunMeta::default()
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Negative, neutral, positive.
    pub per_class: [ClassScores; 3],
    pub macro_f1: f64,
    pub n: u64,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, meta: RunMeta) -> Self {
        let per_class = confusion.class_scores();
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
        EvalReport {
            confusion,
            per_class,
            macro_f1,
            n: confusion.total(),
            meta,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("evaluation report: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(m) = &self.meta.model {
            let _ = writeln!(s, "model     {m}");
        }
        if let Some(seed) = self.meta.seed {
            let _ = writeln!(s, "seed      {seed}");
        }
        let _ = writeln!(s, "examples  {}", self.n);
        let _ = writeln!(s, "macro-F1  {:.4}\n", self.macro_f1);
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for (c, sc) in Sentiment::ALL.iter().zip(&self.per_class) {
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.as_str(),
                sc.precision,
                sc.recall,
                sc.f1,
                sc.support
            );
        }
        let _ = writeln!(s, "\nconfusion (rows gold, cols predicted)");
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8}", "", "negative", "neutral", "positive");
        for (c, row) in Sentiment::ALL.iter().zip(&self.confusion.0) {
            let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8}", c.as_str(), row[0], row[1], row[2]);
        }
        s
    }
}

/// Confusion-matrix scoring of `preds` against `golds`.
pub fn macro_f1(preds: &[Sentiment], golds: &[Sentiment]) -> Result<EvalReport> {
    Ok(EvalReport::from_confusion(
        ConfusionMatrix::from_pairs(preds, golds)?,
        RunMeta::default(),
    ))
}

/// Predicts the most frequent training class for every evaluation example.
pub fn majority_baseline(train_golds: &[Sentiment], eval_golds: &[Sentiment]) -> Result<EvalReport> {
    if train_golds.is_empty() {
        return Err(Error::Data("majority baseline needs training labels".into()));
    }
    let majority = class_stats_of(train_golds)?.majority();
    let mut r = macro_f1(&vec![majority; eval_golds.len()], eval_golds)?;
    r.meta.model = Some("majority".into());
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub seed: u64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Ordered by seed.
    pub runs: Vec<RunScore>,
    pub n_runs: usize,
    pub mean: f64,
    /// Divides by `n`.
    pub variance: f64,
    /// Divides by `n - 1`.
    pub sample_variance: f64,
    pub min: f64,
    pub max: f64,
    pub resplit: bool,
}

impl StabilityReport {
    pub fn from_runs(runs: Vec<RunScore>, resplit: bool) -> Result<Self> {
        let xs: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
        let n = xs.len();
        if n == 0 {
            return Err(Error::Data("no runs to summarize".into()));
        }
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (xs.iter().sum::<f64>() / n as f64).clamp(min, max);
        // pairwise form: exactly zero when all runs agree
        let mut pair = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                pair += (xs[i] - xs[j]).powi(2);
            }
        }
        let nf = n as f64;
        Ok(StabilityReport {
            runs,
            n_runs: n,
            mean,
            variance: pair / (nf * nf),
            sample_variance: if n > 1 { pair / (nf * (nf - 1.0)) } else { 0.0 },
            min,
            max,
            resplit,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn to_text(&self) -> String {
        format!(
            "runs             {}\nsplits           {}\nmean macro-F1    {:.4}\nvariance         {:.3e}\nsample variance  {:.3e}\nmin              {:.4}\nmax              {:.4}\n",
            self.n_runs,
            if self.resplit { "fresh per run" } else { "fixed" },
            self.mean,
            self.variance,
            self.sample_variance,
            self.min,
            self.max
        )
    }

    pub fn write_runs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["seed", "macro_f1"]).map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.runs {
            w.write_record([r.seed.to_string(), format!("{:.17}", r.macro_f1)])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub seed0: u64,
    pub n_runs: usize,
    pub train_fraction: f64,
    /// Draw a fresh split with each run's seed; otherwise split once with `seed0`.
    pub resplit: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            seed0: 0,
            n_runs: 50,
            train_fraction: 0.8,
            resplit: true,
        }
    }
}

/// Trains and scores one model per seed `seed0 .. seed0 + n_runs`.
///
/// `train_fn(train, validation, seed)` returns predictions for every
/// validation record. Runs execute in parallel; the first failing seed (in
/// seed order) is reported.
pub fn stability_study<F>(ds: &Dataset, cfg: &StabilityConfig, train_fn: F) -> Result<StabilityReport>
where
    F: Fn(&Dataset, &Dataset, u64) -> Result<Vec<Sentiment>> + Sync,
{
    if cfg.n_runs < 2 {
        return Err(Error::Config(format!("a stability study needs at least 2 runs, got {}", cfg.n_runs)));
    }
    let fixed = if cfg.resplit {
        None
    } else {
        Some(stratified_split(ds, cfg.train_fraction, cfg.seed0)?)
    };
    let seeds: Vec<u64> = (0..cfg.n_runs as u64).map(|k| cfg.seed0.wrapping_add(k)).collect();
    let one = |seed: u64| -> Result<RunScore> {
        let owned;
        let (train, val) = match &fixed {
            Some((t, v)) => (t, v),
            None => {
                owned = stratified_split(ds, cfg.train_fraction, seed)?;
                (&owned.0, &owned.1)
            }
        };
        let preds = train_fn(train, val, seed)?;
        let report = macro_f1(&preds, &val.labels()?)?;
        Ok(RunScore {
            seed,
            macro_f1: report.macro_f1,
        })
    };
    let results: Vec<Result<RunScore>> = seeds.par_iter().map(|&s| one(s)).collect();
    let mut runs = Vec::with_capacity(results.len());
    for (seed, r) in seeds.iter().zip(results) {
        runs.push(r.map_err(|e| Error::Run {
            seed: *seed,
            source: Box::new(e),
        })?);
    }
    StabilityReport::from_runs(runs, cfg.resplit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub modality: String,
    pub model: String,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Best first.
    pub rows: Vec<CompareRow>,
}

/// Ranks models by macro-F1 (descending; equal scores keep input order).
pub fn compare_report(entries: &[(String, String, EvalReport)]) -> Result<Comparison> {
    if entries.is_empty() {
        return Err(Error::Data("nothing to compare".into()));
    }
    let mut rows: Vec<CompareRow> = entries
        .iter()
        .map(|(model, modality, r)| CompareRow {
            modality: modality.clone(),
            model: model.clone(),
            macro_f1: r.macro_f1,
        })
        .collect();
    rows.sort_by(|a, b| b.macro_f1.total_cmp(&a.macro_f1));
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table is plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("comparison table: {e}")))
    }

    pub fn to_text(&self) -> String {
        let w_mod = self.rows.iter().map(|r| r.modality.len()).max().unwrap_or(0).max("modality".len());
        let w_name = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max("model".len());
        let mut s = format!("{:<w_mod$}  {:<w_name$}  {:>8}\n", "modality", "model", "macro-F1");
        for r in &self.rows {
            let _ = writeln!(s, "{:<w_mod$}  {:<w_name$}  {:>8.4}", r.modality, r.model, r.macro_f1);
        }
        s
    }
}
