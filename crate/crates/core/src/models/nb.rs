//! Multinomial Naive Bayes over token counts with additive smoothing.
//!
//! `P(token | c) = (count(token, c) + α) / (tokens(c) + α·|V|)` and the
//! prior is the class frequency. Tokens outside the training vocabulary are
//! ignored at prediction time.

use std::collections::{BTreeMap, HashMap};

use super::{decode_prep, encode_prep, ProbDist3};
use crate::corpus::Sentiment;
use crate::error::{shape_check, Error, Result};
use crate::persist::{self, Decoder, Encoder, ModelKind};
use crate::textprep::{preprocess, PrepConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    pub alpha: f64,
    /// `ln P(c)`; `-inf` for classes absent from training.
    pub log_prior: [f64; 3],
    /// Sorted training vocabulary.
    vocab: Vec<String>,
    /// `ln P(token | c)`, parallel to `vocab`.
    log_likelihood: Vec<[f64; 3]>,
    index: HashMap<String, usize>,
}

pub fn nb_train<S: AsRef<str>>(corpus: &[Vec<S>], labels: &[Sentiment], alpha: f64) -> Result<NbModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("smoothing alpha must be positive, got {alpha}")));
    }
    if corpus.is_empty() {
        return Err(Error::Data("cannot train Naive Bayes on an empty corpus".into()));
    }
    shape_check(corpus.len() == labels.len(), || {
        format!("{} documents but {} labels", corpus.len(), labels.len())
    })?;

    let mut counts: BTreeMap<&str, [u64; 3]> = BTreeMap::new();
    let mut class_docs = [0usize; 3];
    let mut class_tokens = [0u64; 3];
    for (doc, label) in corpus.iter().zip(labels) {
        let c = label.index();
        class_docs[c] += 1;
        for t in doc {
            counts.entry(t.as_ref()).or_default()[c] += 1;
            class_tokens[c] += 1;
        }
    }
    let n = corpus.len() as f64;
    let v = counts.len() as f64;
    let log_prior = class_docs.map(|d| (d as f64 / n).ln());
    let denom: [f64; 3] = std::array::from_fn(|c| (class_tokens[c] as f64 + alpha * v).ln());
    let mut vocab = Vec::with_capacity(counts.len());
    let mut log_likelihood = Vec::with_capacity(counts.len());
    for (token, cnt) in counts {
        vocab.push(token.to_string());
        log_likelihood.push(std::array::from_fn(|c| (cnt[c] as f64 + alpha).ln() - denom[c]));
    }
    Ok(NbModel::assemble(alpha, log_prior, vocab, log_likelihood))
}

impl NbModel {
    fn assemble(alpha: f64, log_prior: [f64; 3], vocab: Vec<String>, log_likelihood: Vec<[f64; 3]>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        NbModel {
            alpha,
            log_prior,
            vocab,
            log_likelihood,
            index,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn log_likelihood(&self, token: &str) -> Option<[f64; 3]> {
        self.index.get(token).map(|&i| self.log_likelihood[i])
    }

    /// Unnormalized class log scores.
    pub fn log_scores<S: AsRef<str>>(&self, tokens: &[S]) -> [f64; 3] {
        let mut s = self.log_prior;
        for t in tokens {
            if let Some(ll) = self.log_likelihood(t.as_ref()) {
                for c in 0..3 {
                    s[c] += ll[c];
                }
            }
        }
        s
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.f64(self.alpha).f64s(&self.log_prior);
        e.strs(self.vocab.iter().map(String::as_str));
        for ll in &self.log_likelihood {
            e.f64s(ll);
        }
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let alpha = d.f64()?;
        let log_prior: [f64; 3] = d
            .f64s()?
            .try_into()
            .map_err(|_| Error::Format("Naive Bayes prior must have 3 entries".into()))?;
        let vocab = d.strs()?;
        let mut log_likelihood = Vec::with_capacity(vocab.len());
        for _ in 0..vocab.len() {
            log_likelihood.push(
                d.f64s()?
                    .try_into()
                    .map_err(|_| Error::Format("Naive Bayes likelihood must have 3 entries".into()))?,
            );
        }
        Ok(NbModel::assemble(alpha, log_prior, vocab, log_likelihood))
    }
}

/// Posterior via log-sum-exp; an empty token list gives the prior.
pub fn nb_predict<S: AsRef<str>>(model: &NbModel, tokens: &[S]) -> ProbDist3 {
    let s = model.log_scores(tokens);
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = s.map(|x| (x - max).exp());
    let z: f64 = e.iter().sum();
    ProbDist3(e.map(|x| x / z))
}

/// Naive Bayes bundled with the preprocessing that produced its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NbTextModel {
    pub prep: PrepConfig,
    pub model: NbModel,
}

impl NbTextModel {
    pub fn train<S: AsRef<str>>(captions: &[S], labels: &[Sentiment], alpha: f64, prep: &PrepConfig) -> Result<Self> {
        prep.validate()?;
        let tokens: Vec<_> = captions.iter().map(|c| preprocess(c.as_ref(), prep)).collect();
        Ok(NbTextModel {
            prep: prep.clone(),
            model: nb_train(&tokens, labels, alpha)?,
        })
    }

    pub fn predict(&self, caption: &str) -> ProbDist3 {
        nb_predict(&self.model, &preprocess(caption, &self.prep))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        encode_prep(&self.prep, &mut e);
        self.model.encode(&mut e);
        persist::seal(ModelKind::NaiveBayes, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::NaiveBayes)?);
        let prep = decode_prep(&mut d)?;
        let model = NbModel::decode(&mut d)?;
        d.finish()?;
        Ok(NbTextModel { prep, model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Sentiment::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn toy() -> NbModel {
        let corpus = docs(&["good fun", "good", "bad", "meh fun"]);
        nb_train(&corpus, &[Positive, Positive, Negative, Neutral], 1.0).unwrap()
    }

    #[test]
    fn posterior_matches_hand_table() {
        // V = {bad, fun, good, meh}; token totals neg 1, neu 2, pos 3
        // neg: 1/4 * (1/5)(1/5), neu: 1/4 * (1/6)(2/6), pos: 2/4 * (3/7)(2/7)
        let joint = [0.25 * (1.0 / 5.0) * (1.0 / 5.0), 0.25 * (1.0 / 6.0) * (2.0 / 6.0), 0.5 * (3.0 / 7.0) * (2.0 / 7.0)];
        let z: f64 = joint.iter().sum();
        let p = nb_predict(&toy(), &["good", "fun"]);
        for c in 0..3 {
            assert!((p.0[c] - joint[c] / z).abs() < 1e-9, "{p:?}");
        }
        assert_eq!(p.argmax(), Positive);
    }

    #[test]
    fn empty_tokens_give_priors() {
        let p = nb_predict(&toy(), &[] as &[&str]);
        assert!((p.0[0] - 0.25).abs() < 1e-12 && (p.0[1] - 0.25).abs() < 1e-12 && (p.0[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_corpus() {
        let m = nb_train(&docs(&["a b", "c"]), &[Neutral, Neutral], 1.0).unwrap();
        for q in [&["a"][..], &["zzz"], &[]] {
            let p = nb_predict(&m, q);
            assert_eq!(p.argmax(), Neutral);
            assert_eq!(p.0, [0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn class_specific_token_wins() {
        let m = toy();
        assert_eq!(nb_predict(&m, &["bad"]).argmax(), Negative);
        assert_eq!(nb_predict(&m, &["meh"]).argmax(), Neutral);
        assert!(m.log_likelihood("bad").unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn unseen_tokens_keep_all_classes_alive() {
        let p = nb_predict(&toy(), &["unknown", "fun"]);
        assert!(p.0.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn training_errors() {
        assert!(nb_train(&docs(&[]), &[], 1.0).is_err());
        assert!(nb_train(&docs(&["a"]), &[Positive], 0.0).is_err());
        assert!(nb_train(&docs(&["a", "b"]), &[Positive], 1.0).is_err());
    }

    #[test]
    fn priors_sum_to_one_and_round_trip() {
        let m = toy();
        assert!((m.log_prior.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        let mut e = Encoder::new();
        m.encode(&mut e);
        let b = e.finish();
        let mut d = Decoder::new(&b);
        assert_eq!(NbModel::decode(&mut d).unwrap(), m);
    }

    #[test]
    fn text_model_preprocesses_and_persists() {
        let caps = ["Happy dogs!", "so happy", "sad cats", "SAD day"];
        let m = NbTextModel::train(&caps, &[Positive, Positive, Negative, Negative], 1.0, &PrepConfig::default()).unwrap();
        assert_eq!(m.predict("the happiest DOG").argmax(), Positive);
        assert_eq!(m.predict("Sad!").argmax(), Negative);
        let bytes = m.to_bytes();
        let back = NbTextModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    proptest! {
        #[test]
        fn order_invariance_and_duplicate_monotonicity(picks in prop::collection::vec(0usize..4, 0..8), dup in 0usize..4) {
            let words = ["bad", "fun", "good", "meh"];
            let m = toy();
            let tokens: Vec<&str> = picks.iter().map(|&i| words[i]).collect();
            let p = nb_predict(&m, &tokens);
            prop_assert!(p.is_valid(1e-9));
            let mut rev = tokens.clone();
            rev.reverse();
            let q = nb_predict(&m, &rev);
            for c in 0..3 {
                prop_assert!((p.0[c] - q.0[c]).abs() < 1e-12);
            }
            // one more copy of a token moves mass toward its most likely class
            let ll = m.log_likelihood(words[dup]).unwrap();
            let best = super::super::argmax(&ll);
            let mut more = tokens.clone();
            more.push(words[dup]);
            prop_assert!(nb_predict(&m, &more).0[best] >= p.0[best] - 1e-12);
        }
    }
}
