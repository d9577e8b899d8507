//! Caption to token pipeline: strip punctuation and special characters,
//! lowercase, split on whitespace, drop stopwords, lemmatize.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");
const BUNDLED_LEMMA_EXCEPTIONS: &str = include_str!("../data/lemma_exceptions.txt");

/// Lemmas shorter than this are never produced by a suffix rule.
const MIN_LEMMA_LEN: usize = 3;

pub type TokenList = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub stopwords: BTreeSet<String>,
    pub remove_stopwords: bool,
    pub lemmatize: bool,
    pub strip_digits: bool,
    pub lemmatizer: Lemmatizer,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            stopwords: parse_word_list(BUNDLED_STOPWORDS),
            remove_stopwords: true,
            lemmatize: true,
            strip_digits: false,
            lemmatizer: Lemmatizer::default(),
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.remove_stopwords && self.stopwords.is_empty() {
            return Err(Error::Config(
                "stopword removal is enabled but the stopword set is empty".into(),
            ));
        }
        Ok(())
    }

    pub fn with_stopword_file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = parse_word_list(&text);
        Ok(self)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.remove_stopwords && self.stopwords.contains(token)
    }
}

/// Lines of a word-list file: trimmed, lowercased, `#` comments and blanks dropped.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    data_lines(text).map(|l| l.to_lowercase()).collect()
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
}

pub fn preprocess(raw: &str, cfg: &PrepConfig) -> TokenList {
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphabetic() || (c.is_ascii_digit() && !cfg.strip_digits) {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !cfg.is_stopword(t))
        .map(|t| {
            if cfg.lemmatize {
                cfg.lemmatizer.lemmatize(t)
            } else {
                t.to_string()
            }
        })
        // a lemma can land on a stopword ("wills" -> "will")
        .filter(|t| !cfg.is_stopword(t))
        .collect()
}

/// Suffix-rule lemmatizer.
///
/// Rules, applied repeatedly until none fires: irregular forms and protected
/// words from the exception list; `-ies`/`-ied` to `-y`; sibilant `-es`; plain
/// `-s` (not after `s`, `u` or `i`); `-ing` and `-ed` when the stem has a
/// vowel, undoubling a final double consonant or restoring `e` after a short
/// consonant-vowel-consonant stem. No rule may leave fewer than three letters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemmatizer {
    /// Protected words map to themselves.
    exceptions: BTreeMap<String, String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Lemmatizer::from_exception_list(BUNDLED_LEMMA_EXCEPTIONS)
            .expect("bundled lemma exceptions parse")
    }
}

impl Lemmatizer {
    /// Parses `word` or `word lemma` lines.
    pub fn from_exception_list(text: &str) -> Result<Self> {
        let mut exceptions = BTreeMap::new();
        for (n, line) in data_lines(text).enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (word, lemma) = match parts.as_slice() {
                [w] => (*w, *w),
                [w, l] => (*w, *l),
                _ => {
                    return Err(Error::Format(format!(
                        "lemma exception entry {} has {} fields: {line:?}",
                        n + 1,
                        parts.len()
                    )))
                }
            };
            exceptions.insert(word.to_lowercase(), lemma.to_lowercase());
        }
        Ok(Lemmatizer { exceptions })
    }

    pub fn exceptions(&self) -> &BTreeMap<String, String> {
        &self.exceptions
    }

    pub fn lemmatize(&self, token: &str) -> String {
        let mut current = token.to_string();
        // every non-exception rule shortens the word, so this terminates;
        // the bound only guards against cyclic user exception lists
        for _ in 0..=token.len() + 2 {
            match self.step(&current) {
                Some(next) if next != current => current = next,
                _ => break,
            }
        }
        current
    }

    fn step(&self, w: &str) -> Option<String> {
        if let Some(lemma) = self.exceptions.get(w) {
            return Some(lemma.clone());
        }
        let n = w.len();
        let fits = |lemma_len: usize| lemma_len >= MIN_LEMMA_LEN;

        for suffix in ["ies", "ied"] {
            if let Some(stem) = w.strip_suffix(suffix) {
                if fits(stem.len() + 1) {
                    return Some(format!("{stem}y"));
                }
            }
        }
        if ["sses", "shes", "ches", "xes", "zzes"].iter().any(|s| w.ends_with(s)) && fits(n - 2) {
            return Some(w[..n - 2].to_string());
        }
        if w.ends_with('s') && !["ss", "us", "is"].iter().any(|s| w.ends_with(s)) && fits(n - 1) {
            return Some(w[..n - 1].to_string());
        }
        for suffix in ["ing", "ed"] {
            if let Some(stem) = w.strip_suffix(suffix) {
                if fits(stem.len()) && stem.bytes().any(is_vowel_or_y) {
                    return Some(repair_stem(stem));
                }
            }
        }
        None
    }
}

fn is_vowel(b: u8) -> bool {
    matches!(b, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn is_vowel_or_y(b: u8) -> bool {
    is_vowel(b) || b == b'y'
}

fn repair_stem(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    let last = b[n - 1];
    if b[n - 2] == last && !is_vowel(last) && !matches!(last, b'l' | b's' | b'z') {
        return stem[..n - 1].to_string();
    }
    if n == 3 && !is_vowel(b[0]) && is_vowel(b[1]) && !is_vowel(last) && !matches!(last, b'w' | b'x' | b'y') {
        return format!("{stem}e");
    }
    stem.to_string()
}
