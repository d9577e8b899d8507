use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::persist::{Decoder, Encoder};

pub const DEFAULT_BOW_SIZE: usize = 5000;

/// Fixed vocabulary for presence vectors: the `k` most frequent training
/// tokens, most frequent first, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct BowVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl BowVocab {
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("bag-of-words vocabulary size must be positive".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in corpus {
            for t in doc {
                *freq.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(k);
        Ok(BowVocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect()))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        BowVocab { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.strs(self.tokens.iter().map(String::as_str));
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let tokens = d.strs()?;
        let v = BowVocab::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Format("bag-of-words vocabulary has duplicates".into()));
        }
        Ok(v)
    }
}

/// Presence indicator: component `i` is 1 iff `vocab[i]` occurs in `tokens`.
pub fn bow_vectorize<S: AsRef<str>>(tokens: &[S], vocab: &BowVocab) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    for t in tokens {
        if let Some(&i) = vocab.index.get(t.as_ref()) {
            v[i] = 1.0;
        }
    }
    v
}
