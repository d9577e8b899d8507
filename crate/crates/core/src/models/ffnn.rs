//! Text networks: mean-pooled word2vec input or bag-of-words presence input,
//! both feeding the dense network from [`crate::nn`].

use std::path::PathBuf;

use rayon::prelude::*;

use super::bow::{bow_vectorize, BowVocab};
use super::{decode_prep, encode_prep, ProbDist3};
use crate::corpus::Sentiment;
use crate::embeddings::{caption_embedding, embed_corpus, Coverage, EmbeddingTable, TableFormat};
use crate::error::{shape_check, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Mlp, NetSpec, TrainConfig};
use crate::persist::{self, Decoder, Encoder, ModelKind};
use crate::textprep::{preprocess, PrepConfig, TokenList};

/// Where a model's embedding table lives; the vectors themselves are not
/// copied into the model file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRef {
    pub path: PathBuf,
    pub format: TableFormat,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnnW2vModel {
    pub prep: PrepConfig,
    pub embedding: EmbeddingRef,
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextPrediction {
    pub probs: ProbDist3,
    /// No caption token was in the embedding vocabulary.
    pub all_oov: bool,
}

fn labels_to_idx(labels: &[Sentiment]) -> Vec<usize> {
    labels.iter().map(|l| l.index()).collect()
}

pub fn tokenize_all<S: AsRef<str> + Sync>(captions: &[S], prep: &PrepConfig) -> Vec<TokenList> {
    captions.par_iter().map(|c| preprocess(c.as_ref(), prep)).collect()
}

fn rows_to_probs(m: &Matrix) -> Vec<ProbDist3> {
    m.iter_rows().map(|r| ProbDist3([r[0], r[1], r[2]])).collect()
}

/// Preprocess, mean-pool word vectors, then fit the network.
///
/// Returns the model, per-epoch losses and embedding coverage of the
/// training captions.
pub fn ffnn_w2v_train<S: AsRef<str> + Sync>(
    captions: &[S],
    labels: &[Sentiment],
    table: &EmbeddingTable,
    spec: &NetSpec,
    cfg: &TrainConfig,
    prep: &PrepConfig,
) -> Result<(FfnnW2vModel, Vec<f64>, Coverage)> {
    prep.validate()?;
    if spec.input_dim != table.dim() {
        return Err(Error::Config(format!(
            "network input is {} but the embedding table has dimension {}",
            spec.input_dim,
            table.dim()
        )));
    }
    shape_check(captions.len() == labels.len(), || {
        format!("{} captions but {} labels", captions.len(), labels.len())
    })?;
    let tokens = tokenize_all(captions, prep);
    let emb = embed_corpus(&tokens, table);
    let (params, losses) = nn::train(spec, &emb.matrix, &labels_to_idx(labels), cfg)?;
    let src = table.source();
    let model = FfnnW2vModel {
        prep: prep.clone(),
        embedding: EmbeddingRef {
            path: src.path.clone(),
            format: src.format,
            dim: table.dim(),
        },
        net: Mlp {
            spec: spec.clone(),
            params,
        },
    };
    Ok((model, losses, emb.coverage))
}

impl FfnnW2vModel {
    fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.embedding.dim {
            return Err(Error::Config(format!(
                "model expects {}-dimensional embeddings, table has {}",
                self.embedding.dim,
                table.dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, table: &EmbeddingTable, caption: &str) -> Result<TextPrediction> {
        Ok(self.predict_many(table, &[caption])?.remove(0))
    }

    pub fn predict_many<S: AsRef<str> + Sync>(&self, table: &EmbeddingTable, captions: &[S]) -> Result<Vec<TextPrediction>> {
        self.check_table(table)?;
        let tokens = tokenize_all(captions, &self.prep);
        let embedded: Vec<_> = tokens.iter().map(|t| caption_embedding(t, table)).collect();
        let all_oov: Vec<bool> = embedded.iter().map(|c| c.is_all_oov()).collect();
        let rows: Vec<Vec<f64>> = embedded.into_iter().map(|c| c.vector).collect();
        let x = Matrix::from_rows(table.dim(), rows.iter().map(Vec::as_slice))?;
        let probs = rows_to_probs(&self.net.predict_proba(&x)?);
        Ok(probs
            .into_iter()
            .zip(all_oov)
            .map(|(probs, all_oov)| TextPrediction { probs, all_oov })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        encode_prep(&self.prep, &mut e);
        e.str(&self.embedding.path.to_string_lossy())
            .u64(match self.embedding.format {
                TableFormat::Binary => 0,
                TableFormat::Text => 1,
            })
            .usize(self.embedding.dim);
        self.net.encode(&mut e);
        persist::seal(ModelKind::FfnnW2v, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::FfnnW2v)?);
        let prep = decode_prep(&mut d)?;
        let path = PathBuf::from(d.str()?);
        let format = match d.u64()? {
            0 => TableFormat::Binary,
            1 => TableFormat::Text,
            t => return Err(Error::Format(format!("unknown embedding format tag {t}"))),
        };
        let dim = d.usize()?;
        let net = Mlp::decode(&mut d)?;
        d.finish()?;
        if net.spec.input_dim != dim {
            return Err(Error::Format("network input does not match the embedding dimension".into()));
        }
        Ok(FfnnW2vModel {
            prep,
            embedding: EmbeddingRef { path, format, dim },
            net,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnnBowModel {
    pub prep: PrepConfig,
    pub vocab: BowVocab,
    pub net: Mlp,
}

/// Builds the vocabulary from `tokens` and fits a network on presence
/// vectors. `spec.input_dim` is replaced by the vocabulary size.
pub fn ffnn_bow_fit(
    tokens: &[TokenList],
    labels: &[Sentiment],
    bow_size: usize,
    spec: &NetSpec,
    cfg: &TrainConfig,
    prep: &PrepConfig,
) -> Result<(FfnnBowModel, Vec<f64>)> {
    shape_check(tokens.len() == labels.len(), || {
        format!("{} captions but {} labels", tokens.len(), labels.len())
    })?;
    let vocab = BowVocab::build(tokens, bow_size)?;
    if vocab.is_empty() {
        return Err(Error::Data("training captions contain no tokens after preprocessing".into()));
    }
    let spec = NetSpec {
        input_dim: vocab.len(),
        ..spec.clone()
    };
    let x = bow_matrix(tokens, &vocab);
    let (params, losses) = nn::train(&spec, &x, &labels_to_idx(labels), cfg)?;
    Ok((
        FfnnBowModel {
            prep: prep.clone(),
            vocab,
            net: Mlp { spec, params },
        },
        losses,
    ))
}

pub fn ffnn_bow_train<S: AsRef<str> + Sync>(
    captions: &[S],
    labels: &[Sentiment],
    bow_size: usize,
    spec: &NetSpec,
    cfg: &TrainConfig,
    prep: &PrepConfig,
) -> Result<(FfnnBowModel, Vec<f64>)> {
    prep.validate()?;
    ffnn_bow_fit(&tokenize_all(captions, prep), labels, bow_size, spec, cfg, prep)
}

fn bow_matrix(tokens: &[TokenList], vocab: &BowVocab) -> Matrix {
    let data: Vec<f64> = tokens.iter().flat_map(|t| bow_vectorize(t, vocab)).collect();
    Matrix::from_vec(tokens.len(), vocab.len(), data).expect("one row per caption")
}

impl FfnnBowModel {
    pub fn predict_tokens(&self, tokens: &[TokenList]) -> Result<Vec<ProbDist3>> {
        Ok(rows_to_probs(&self.net.predict_proba(&bow_matrix(tokens, &self.vocab))?))
    }

    pub fn predict_many<S: AsRef<str> + Sync>(&self, captions: &[S]) -> Result<Vec<ProbDist3>> {
        self.predict_tokens(&tokenize_all(captions, &self.prep))
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        encode_prep(&self.prep, e);
        self.vocab.encode(e);
        self.net.encode(e);
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let prep = decode_prep(d)?;
        let vocab = BowVocab::decode(d)?;
        let net = Mlp::decode(d)?;
        if net.spec.input_dim != vocab.len() {
            return Err(Error::Format("network input does not match the vocabulary size".into()));
        }
        Ok(FfnnBowModel { prep, vocab, net })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        persist::seal(ModelKind::FfnnBow, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::FfnnBow)?);
        let m = FfnnBowModel::decode(&mut d)?;
        d.finish()?;
        Ok(m)
    }
}
