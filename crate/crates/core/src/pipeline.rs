//! Train and predict any model kind on a [`Dataset`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sentiment};
use crate::embeddings::{Coverage, EmbeddingTable};
use crate::error::{Error, Result};
use crate::models::cnn::{cnn_train, CnnModel, CnnSpec};
use crate::models::ffnn::{ffnn_bow_train, ffnn_w2v_train, tokenize_all, FfnnBowModel, FfnnW2vModel};
use crate::models::fusion::{fusion_fit, FusionConfig, FusionModel, StackerConfig};
use crate::models::hsv::{load_hsv, HsvTensor};
use crate::models::nb::NbTextModel;
use crate::models::ProbDist3;
use crate::nn::{NetSpec, TrainConfig};
use crate::persist::{self, ModelKind};
use crate::textprep::PrepConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Nb,
    FfnnW2v,
    FfnnBow,
    CnnHsv,
    Fusion,
}

impl ModelType {
    pub const ALL: [ModelType; 5] = [
        ModelType::Nb,
        ModelType::FfnnW2v,
        ModelType::FfnnBow,
        ModelType::CnnHsv,
        ModelType::Fusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::Nb => "nb",
            ModelType::FfnnW2v => "ffnn_w2v",
            ModelType::FfnnBow => "ffnn_bow",
            ModelType::CnnHsv => "cnn_hsv",
            ModelType::Fusion => "fusion",
        }
    }

    pub fn modality(self) -> &'static str {
        match self {
            ModelType::CnnHsv => "image",
            ModelType::Fusion => "text+image",
            _ => "text",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self == ModelType::FfnnW2v
    }

    pub fn needs_images(self) -> bool {
        matches!(self, ModelType::CnnHsv | ModelType::Fusion)
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelType::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?} (expected nb, ffnn_w2v, ffnn_bow, cnn_hsv or fusion)")))
    }
}

/// Hyperparameters for every model kind; each kind reads its own fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub prep: PrepConfig,
    /// `input_dim` is filled in from the data.
    pub net: NetSpec,
    pub train: TrainConfig,
    pub nb_alpha: f64,
    pub bow_size: usize,
    pub cnn: CnnSpec,
    pub cnn_train: TrainConfig,
    pub stacker: StackerConfig,
    pub out_of_fold: bool,
    pub folds: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        let f = FusionConfig::default();
        Hyper {
            prep: PrepConfig::default(),
            net: NetSpec::new(0),
            train: TrainConfig::default(),
            nb_alpha: 1.0,
            bow_size: f.bow_size,
            cnn: f.cnn,
            cnn_train: f.cnn_train,
            stacker: f.stacker,
            out_of_fold: f.out_of_fold,
            folds: f.folds,
        }
    }
}

impl Hyper {
    /// Routes one run seed to every random component.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut h = self.clone();
        h.net.seed = seed;
        h.train.seed = seed;
        h.cnn.seed = seed;
        h.cnn_train.seed = seed;
        h.stacker.seed = seed;
        h
    }

    fn fusion(&self) -> FusionConfig {
        FusionConfig {
            bow_size: self.bow_size,
            text_spec: self.net.clone(),
            text_train: self.train,
            cnn: self.cnn,
            cnn_train: self.cnn_train,
            stacker: self.stacker,
            out_of_fold: self.out_of_fold,
            folds: self.folds,
        }
    }
}

/// External inputs some models need.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    pub table: Option<&'a EmbeddingTable>,
    /// Base for relative image paths.
    pub image_root: Option<&'a Path>,
}

impl<'a> Resources<'a> {
    fn table(&self) -> Result<&'a EmbeddingTable> {
        self.table
            .ok_or_else(|| Error::Config("ffnn_w2v needs an embedding table".into()))
    }
}

pub fn resolve_image(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

/// Decodes every record's image (in parallel, order preserved).
pub fn load_images(ds: &Dataset, root: Option<&Path>) -> Result<Vec<HsvTensor>> {
    ds.records()
        .par_iter()
        .map(|r| {
            let p = r
                .image_path
                .as_ref()
                .ok_or_else(|| Error::Data(format!("record {:?} has no image path", r.id)))?;
            load_hsv(&resolve_image(p, root))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Nb(NbTextModel),
    FfnnW2v(FfnnW2vModel),
    FfnnBow(FfnnBowModel),
    CnnHsv(CnnModel),
    Fusion(FusionModel),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch; empty for models without epochs.
    pub losses: Vec<f64>,
    pub coverage: Option<Coverage>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Sentiment,
    pub probs: ProbDist3,
    pub all_oov: bool,
}

impl Prediction {
    fn from_probs(probs: ProbDist3) -> Self {
        Prediction {
            label: probs.argmax(),
            probs,
            all_oov: false,
        }
    }
}

pub fn train_model(kind: ModelType, hyper: &Hyper, train: &Dataset, res: Resources) -> Result<(Trained, TrainLog)> {
    hyper.prep.validate()?;
    let labels = train.labels()?;
    let captions: Vec<&str> = train.captions().collect();
    let mut log = TrainLog::default();
    let model = match kind {
        ModelType::Nb => Trained::Nb(NbTextModel::train(&captions, &labels, hyper.nb_alpha, &hyper.prep)?),
        ModelType::FfnnW2v => {
            let table = res.table()?;
            let spec = NetSpec {
                input_dim: table.dim(),
                ..hyper.net.clone()
            };
            let (m, losses, cov) = ffnn_w2v_train(&captions, &labels, table, &spec, &hyper.train, &hyper.prep)?;
            log.losses = losses;
            log.coverage = Some(cov);
            Trained::FfnnW2v(m)
        }
        ModelType::FfnnBow => {
            let (m, losses) = ffnn_bow_train(&captions, &labels, hyper.bow_size, &hyper.net, &hyper.train, &hyper.prep)?;
            log.losses = losses;
            Trained::FfnnBow(m)
        }
        ModelType::CnnHsv => {
            let images = load_images(train, res.image_root)?;
            let (m, losses) = cnn_train(&images, &labels, &hyper.cnn, &hyper.cnn_train)?;
            log.losses = losses;
            Trained::CnnHsv(m)
        }
        ModelType::Fusion => {
            let images = load_images(train, res.image_root)?;
            let tokens = tokenize_all(&captions, &hyper.prep);
            Trained::Fusion(fusion_fit(&tokens, &images, &labels, &hyper.fusion(), &hyper.prep)?)
        }
    };
    Ok((model, log))
}

impl Trained {
    pub fn kind(&self) -> ModelType {
        match self {
            Trained::Nb(_) => ModelType::Nb,
            Trained::FfnnW2v(_) => ModelType::FfnnW2v,
            Trained::FfnnBow(_) => ModelType::FfnnBow,
            Trained::CnnHsv(_) => ModelType::CnnHsv,
            Trained::Fusion(_) => ModelType::Fusion,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Trained::Nb(m) => m.to_bytes(),
            Trained::FfnnW2v(m) => m.to_bytes(),
            Trained::FfnnBow(m) => m.to_bytes(),
            Trained::CnnHsv(m) => m.to_bytes(),
            Trained::Fusion(m) => m.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (kind, _) = persist::open(bytes)?;
        Ok(match kind {
            ModelKind::NaiveBayes => Trained::Nb(NbTextModel::from_bytes(bytes)?),
            ModelKind::FfnnW2v => Trained::FfnnW2v(FfnnW2vModel::from_bytes(bytes)?),
            ModelKind::FfnnBow => Trained::FfnnBow(FfnnBowModel::from_bytes(bytes)?),
            ModelKind::CnnHsv => Trained::CnnHsv(CnnModel::from_bytes(bytes)?),
            ModelKind::Fusion => Trained::Fusion(FusionModel::from_bytes(bytes)?),
            ModelKind::Mlp => {
                return Err(Error::Format(
                    "file holds a bare network, not a trained classifier".into(),
                ))
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Trained::from_bytes(&persist::read_file(path)?)
    }

    pub fn predict(&self, ds: &Dataset, res: Resources) -> Result<Vec<Prediction>> {
        let captions: Vec<&str> = ds.captions().collect();
        Ok(match self {
            Trained::Nb(m) => captions.par_iter().map(|c| Prediction::from_probs(m.predict(c))).collect(),
            Trained::FfnnW2v(m) => m
                .predict_many(res.table()?, &captions)?
                .into_iter()
                .map(|p| Prediction {
                    all_oov: p.all_oov,
                    ..Prediction::from_probs(p.probs)
                })
                .collect(),
            Trained::FfnnBow(m) => m.predict_many(&captions)?.into_iter().map(Prediction::from_probs).collect(),
            Trained::CnnHsv(m) => m
                .predict_many(&load_images(ds, res.image_root)?)
                .into_iter()
                .map(Prediction::from_probs)
                .collect(),
            Trained::Fusion(m) => {
                let tokens = tokenize_all(&captions, &m.text.prep);
                m.predict_tokens(&tokens, &load_images(ds, res.image_root)?)?
                    .into_iter()
                    .map(|p| Prediction {
                        label: p.label,
                        probs: p.probs,
                        all_oov: false,
                    })
                    .collect()
            }
        })
    }
}
