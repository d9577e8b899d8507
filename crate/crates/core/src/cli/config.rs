use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Schema;
use crate::embeddings::TableFormat;
use crate::error::{Error, Result};
use crate::models::cnn::CnnSpec;
use crate::models::fusion::StackerConfig;
use crate::nn::{Activation, AdamConfig, Init, NetSpec, TrainConfig, DEFAULT_HIDDEN};
use crate::pipeline::{Hyper, ModelType};
use crate::textprep::PrepConfig;

/// Everything a command needs, read from a TOML file and then overridden by
/// command-line flags. The resolved form is written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelType,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Base directory for relative image paths; defaults to the dataset's directory.
    pub image_root: Option<PathBuf>,
    pub out: PathBuf,
    /// Fraction of labeled data used for training; the rest is validation.
    pub split: f64,
    pub upsample: bool,
    pub schema: SchemaSection,
    pub embeddings: EmbeddingsSection,
    pub prep: PrepSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub nb: NbSection,
    pub bow: BowSection,
    pub cnn: CnnSection,
    pub stacker: StackerSection,
    pub stability: StabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelType::FfnnW2v,
            seed: 0,
            dataset: None,
            image_root: None,
            out: PathBuf::from("memotion-out"),
            split: 0.8,
            upsample: false,
            schema: SchemaSection::default(),
            embeddings: EmbeddingsSection::default(),
            prep: PrepSection::default(),
            net: NetSection::default(),
            train: TrainSection::default(),
            nb: NbSection::default(),
            bow: BowSection::default(),
            cnn: CnnSection::default(),
            stacker: StackerSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

/// Column names; an empty string marks an optional column as absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    pub id: String,
    pub caption: String,
    pub label: String,
    pub image: String,
}

impl Default for SchemaSection {
    fn default() -> Self {
        let s = Schema::default();
        SchemaSection {
            id: s.id,
            caption: s.caption,
            label: s.label.unwrap_or_default(),
            image: s.image.unwrap_or_default(),
        }
    }
}

impl SchemaSection {
    pub fn to_schema(&self) -> Schema {
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        Schema {
            id: self.id.clone(),
            caption: self.caption.clone(),
            label: opt(&self.label),
            image: opt(&self.image),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsSection {
    pub path: Option<PathBuf>,
    pub format: TableFormat,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        EmbeddingsSection {
            path: None,
            format: TableFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    pub remove_stopwords: bool,
    pub lemmatize: bool,
    pub strip_digits: bool,
    /// Replaces the bundled stopword list.
    pub stopwords_file: Option<PathBuf>,
}

impl Default for PrepSection {
    fn default() -> Self {
        let p = PrepConfig::default();
        PrepSection {
            remove_stopwords: p.remove_stopwords,
            lemmatize: p.lemmatize,
            strip_digits: p.strip_digits,
            stopwords_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Relu,
            init: Init::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            shuffle: t.shuffle,
        }
    }
}

impl TrainSection {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            seed: 0,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbSection {
    pub alpha: f64,
}

impl Default for NbSection {
    fn default() -> Self {
        NbSection { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowSection {
    pub size: usize,
}

impl Default for BowSection {
    fn default() -> Self {
        BowSection {
            size: crate::models::bow::DEFAULT_BOW_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub init: Init,
    pub train: TrainSection,
}

impl Default for CnnSection {
    fn default() -> Self {
        CnnSection {
            init: CnnSpec::default().init,
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackerSection {
    pub lambda: f64,
    pub epochs: usize,
    pub out_of_fold: bool,
    pub folds: usize,
}

impl Default for StackerSection {
    fn default() -> Self {
        let s = StackerConfig::default();
        StackerSection {
            lambda: s.lambda,
            epochs: s.epochs,
            out_of_fold: true,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub runs: usize,
    /// Fresh split per run; otherwise one split from the base seed.
    pub resplit: bool,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { runs: 50, resplit: true }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset` in the config)".into()))
    }

    /// Checks the fields every training command relies on.
    pub fn validate_for_training(&self) -> Result<()> {
        self.dataset()?;
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split must be in (0, 1], got {}", self.split)));
        }
        if self.model.needs_embeddings() && self.embeddings.path.is_none() {
            return Err(Error::Config(format!(
                "model {} needs an embedding table (use --embeddings or [embeddings] path)",
                self.model
            )));
        }
        if self.model.needs_images() && self.schema.image.is_empty() {
            return Err(Error::Config(format!("model {} needs an image column", self.model)));
        }
        self.train.to_config().validate()?;
        self.cnn.train.to_config().validate()?;
        if !(self.nb.alpha > 0.0) {
            return Err(Error::Config(format!("nb alpha must be positive, got {}", self.nb.alpha)));
        }
        if self.bow.size == 0 {
            return Err(Error::Config("bow size must be positive".into()));
        }
        if self.net.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.prep()?.validate()
    }

    pub fn prep(&self) -> Result<PrepConfig> {
        let mut p = PrepConfig {
            remove_stopwords: self.prep.remove_stopwords,
            lemmatize: self.prep.lemmatize,
            strip_digits: self.prep.strip_digits,
            ..PrepConfig::default()
        };
        if let Some(f) = &self.prep.stopwords_file {
            p = p.with_stopword_file(f)?;
        }
        Ok(p)
    }

    pub fn hyper(&self) -> Result<Hyper> {
        Ok(Hyper {
            prep: self.prep()?,
            net: NetSpec {
                hidden: self.net.hidden.clone(),
                activation: self.net.activation,
                init: self.net.init,
                ..NetSpec::new(0)
            },
            train: self.train.to_config(),
            nb_alpha: self.nb.alpha,
            bow_size: self.bow.size,
            cnn: CnnSpec {
                seed: 0,
                init: self.cnn.init,
            },
            cnn_train: self.cnn.train.to_config(),
            stacker: StackerConfig {
                lambda: self.stacker.lambda,
                epochs: self.stacker.epochs,
                seed: 0,
            },
            out_of_fold: self.stacker.out_of_fold,
            folds: self.stacker.folds,
        }
        .with_seed(self.seed))
    }

    pub fn image_root(&self) -> Option<PathBuf> {
        self.image_root.clone().or_else(|| {
            self.dataset
                .as_ref()
                .and_then(|d| d.parent())
                .map(Path::to_path_buf)
        })
    }
}
