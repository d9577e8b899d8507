//! Classifiers: multinomial Naive Bayes, the word2vec and bag-of-words
//! networks, the HSV image CNN and the late-fusion stacker.

pub mod bow;
pub mod cnn;
pub mod ffnn;
pub mod fusion;
pub mod hsv;
pub mod nb;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentiment;
use crate::error::{Error, Result};
use crate::persist::{Decoder, Encoder};
use crate::textprep::{Lemmatizer, PrepConfig};

pub use bow::{bow_vectorize, BowVocab};
pub use cnn::{cnn_train, CnnModel, CnnParams, CnnSpec};
pub use ffnn::{ffnn_bow_train, ffnn_w2v_train, EmbeddingRef, FfnnBowModel, FfnnW2vModel};
pub use fusion::{fusion_predict, fusion_train, FusionModel, FusionStacker, StackerConfig, FEATURES};
pub use hsv::{hsv_from_image, rgb_to_hsv, HsvTensor};
pub use nb::{nb_predict, nb_train, NbModel, NbTextModel};

/// Probability distribution over (negative, neutral, positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbDist3(pub [f64; 3]);

impl ProbDist3 {
    pub const UNIFORM: ProbDist3 = ProbDist3([1.0 / 3.0; 3]);

    /// Takes the first three entries of a softmax row.
    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let arr: [f64; 3] = p
            .try_into()
            .map_err(|_| Error::Shape(format!("expected 3 probabilities, got {}", p.len())))?;
        Ok(ProbDist3(arr))
    }

    pub fn get(&self, s: Sentiment) -> f64 {
        self.0[s.index()]
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> Sentiment {
        Sentiment::from_index(argmax(&self.0)).expect("three classes")
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|&p| p >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Index of the largest value; the first wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn encode_prep(p: &PrepConfig, e: &mut Encoder) {
    e.strs(p.stopwords.iter().map(String::as_str))
        .bool(p.remove_stopwords)
        .bool(p.lemmatize)
        .bool(p.strip_digits);
    let ex = p.lemmatizer.exceptions();
    e.usize(ex.len());
    for (k, v) in ex {
        e.str(k).str(v);
    }
}

pub(crate) fn decode_prep(d: &mut Decoder) -> Result<PrepConfig> {
    let stopwords = d.strs()?.into_iter().collect();
    let remove_stopwords = d.bool()?;
    let lemmatize = d.bool()?;
    let strip_digits = d.bool()?;
    let n = d.usize()?;
    let mut lines = String::new();
    for _ in 0..n {
        let (k, v) = (d.str()?, d.str()?);
        lines.push_str(&format!("{k} {v}\n"));
    }
    Ok(PrepConfig {
        stopwords,
        remove_stopwords,
        lemmatize,
        strip_digits,
        lemmatizer: Lemmatizer::from_exception_list(&lines)?,
    })
}
