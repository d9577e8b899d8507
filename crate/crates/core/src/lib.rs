//! Meme sentiment classification toolkit.
//!
//! Captions are cleaned and lemmatized ([`textprep`]), mean-pooled over
//! pre-trained word vectors ([`embeddings`]) and classified by a dense
//! network trained from scratch ([`nn`]). [`models`] adds the Naive Bayes
//! baseline and the bimodal branch (bag-of-words network plus HSV image CNN,
//! fused by a linear SVM). [`eval`] scores everything with macro-F1 and runs
//! repeated-seed stability studies.

pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod models;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod textprep;

pub use corpus::{Dataset, MemeRecord, Schema, Sentiment};
pub use error::{Error, Result};
pub use matrix::Matrix;
