//! Late fusion: a linear one-vs-rest hinge-loss classifier over the
//! concatenated text and image class distributions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bow::DEFAULT_BOW_SIZE;
use super::cnn::{cnn_train, CnnModel, CnnSpec};
use super::ffnn::{ffnn_bow_fit, FfnnBowModel};
use super::hsv::HsvTensor;
use super::{argmax, ProbDist3};
use crate::corpus::Sentiment;
use crate::error::{shape_check, Error, Result};
use crate::matrix::dot;
use crate::nn::{NetSpec, TrainConfig};
use crate::persist::{self, Decoder, Encoder, ModelKind};
use crate::rng::{self, derive_seed, Stream};
use crate::textprep::{PrepConfig, TokenList};

/// Text distribution followed by image distribution.
pub const FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackerConfig {
    /// L2 strength.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for StackerConfig {
    fn default() -> Self {
        StackerConfig {
            lambda: 1e-3,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionStacker {
    /// One row per class.
    pub weights: [[f64; FEATURES]; 3],
    pub bias: [f64; 3],
}

pub fn features(text: &ProbDist3, image: &ProbDist3) -> [f64; FEATURES] {
    let (t, i) = (text.0, image.0);
    [t[0], t[1], t[2], i[0], i[1], i[2]]
}

impl FusionStacker {
    pub fn scores(&self, text: &ProbDist3, image: &ProbDist3) -> [f64; 3] {
        let x = features(text, image);
        std::array::from_fn(|c| dot(&self.weights[c], &x) + self.bias[c])
    }

    /// The same classifier with the text and image weight blocks exchanged.
    pub fn swap_branches(&self) -> Self {
        let weights = self.weights.map(|w| [w[3], w[4], w[5], w[0], w[1], w[2]]);
        FusionStacker { weights, bias: self.bias }
    }

    /// Scores through a softmax, for reporting alongside other models.
    pub fn proba(&self, text: &ProbDist3, image: &ProbDist3) -> ProbDist3 {
        let mut s = self.scores(text, image);
        crate::nn::softmax_in_place(&mut s);
        ProbDist3(s)
    }

    fn encode(&self, e: &mut Encoder) {
        for w in &self.weights {
            e.f64s(w);
        }
        e.f64s(&self.bias);
    }

    fn decode(d: &mut Decoder) -> Result<Self> {
        let mut weights = [[0.0; FEATURES]; 3];
        for w in &mut weights {
            *w = d
                .f64s()?
                .try_into()
                .map_err(|_| Error::Format("stacker weight row must have 6 entries".into()))?;
        }
        let bias = d
            .f64s()?
            .try_into()
            .map_err(|_| Error::Format("stacker needs 3 biases".into()))?;
        Ok(FusionStacker { weights, bias })
    }
}

/// Argmax of the one-vs-rest scores; ties go to the lower class index.
pub fn fusion_predict(stacker: &FusionStacker, text: &ProbDist3, image: &ProbDist3) -> Sentiment {
    Sentiment::from_index(argmax(&stacker.scores(text, image))).expect("three classes")
}

/// Pegasos-style subgradient descent on the L2-regularized hinge loss, one
/// binary problem per class. The bias is a seventh weight on a constant 1
/// feature (so it is regularized too). Every epoch visits a fresh seeded
/// permutation shared by the three problems; the step at update `t` is
/// `1 / (λ t)` and weights are projected onto the ball of radius `1/√λ`.
pub fn fusion_train(
    text_probs: &[ProbDist3],
    image_probs: &[ProbDist3],
    labels: &[Sentiment],
    cfg: &StackerConfig,
) -> Result<FusionStacker> {
    shape_check(text_probs.len() == labels.len() && image_probs.len() == labels.len(), || {
        format!(
            "{} text rows, {} image rows, {} labels",
            text_probs.len(),
            image_probs.len(),
            labels.len()
        )
    })?;
    if labels.is_empty() {
        return Err(Error::Data("cannot train the stacker on zero rows".into()));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) || cfg.epochs == 0 {
        return Err(Error::Config(format!(
            "stacker needs lambda > 0 and epochs >= 1 (got {} and {})",
            cfg.lambda, cfg.epochs
        )));
    }
    let xs: Vec<[f64; FEATURES + 1]> = text_probs
        .iter()
        .zip(image_probs)
        .map(|(t, i)| {
            let f = features(t, i);
            [f[0], f[1], f[2], f[3], f[4], f[5], 1.0]
        })
        .collect();
    let lambda = cfg.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut w = [[0.0; FEATURES + 1]; 3];
    let mut rng = rng::stream(cfg.seed, Stream::Stacker);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - eta * lambda;
            let x = &xs[i];
            for (c, wc) in w.iter_mut().enumerate() {
                let y = if labels[i].index() == c { 1.0 } else { -1.0 };
                let margin = y * dot(wc, x);
                for v in wc.iter_mut() {
                    *v *= shrink;
                }
                if margin < 1.0 {
                    for (v, xv) in wc.iter_mut().zip(x) {
                        *v += eta * y * xv;
                    }
                }
                let norm = dot(wc, wc).sqrt();
                if norm > radius {
                    let s = radius / norm;
                    wc.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
    let stacker = FusionStacker {
        weights: w.map(|r| [r[0], r[1], r[2], r[3], r[4], r[5]]),
        bias: w.map(|r| r[FEATURES]),
    };
    if !stacker.weights.iter().flatten().chain(&stacker.bias).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: cfg.epochs, batch: 0 });
    }
    Ok(stacker)
}

/// Everything needed to train the two branches and the stacker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub bow_size: usize,
    /// Text network template; `input_dim` is set from the vocabulary.
    pub text_spec: NetSpec,
    pub text_train: TrainConfig,
    pub cnn: CnnSpec,
    pub cnn_train: TrainConfig,
    pub stacker: StackerConfig,
    /// Train the stacker on held-out fold predictions; when false it sees
    /// the branches' in-sample outputs.
    pub out_of_fold: bool,
    pub folds: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            bow_size: DEFAULT_BOW_SIZE,
            text_spec: NetSpec::new(0),
            text_train: TrainConfig::default(),
            cnn: CnnSpec::default(),
            cnn_train: TrainConfig::default(),
            stacker: StackerConfig::default(),
            out_of_fold: true,
            folds: 5,
        }
    }
}

impl FusionConfig {
    /// Same settings with every seed replaced by a child of `salt`.
    fn reseeded(&self, salt: u64) -> Self {
        let mut c = self.clone();
        c.text_spec.seed = derive_seed(c.text_spec.seed, salt);
        c.text_train.seed = derive_seed(c.text_train.seed, salt);
        c.cnn.seed = derive_seed(c.cnn.seed, salt);
        c.cnn_train.seed = derive_seed(c.cnn_train.seed, salt);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub text: FfnnBowModel,
    pub image: CnnModel,
    pub stacker: FusionStacker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPrediction {
    pub label: Sentiment,
    pub text: ProbDist3,
    pub image: ProbDist3,
    pub probs: ProbDist3,
}

type Branches = (FfnnBowModel, CnnModel);

fn fit_branches(
    tokens: &[TokenList],
    images: &[HsvTensor],
    labels: &[Sentiment],
    cfg: &FusionConfig,
    prep: &PrepConfig,
) -> Result<Branches> {
    let (text, image) = rayon::join(
        || ffnn_bow_fit(tokens, labels, cfg.bow_size, &cfg.text_spec, &cfg.text_train, prep),
        || cnn_train(images, labels, &cfg.cnn, &cfg.cnn_train),
    );
    Ok((text?.0, image?.0))
}

fn branch_probs(b: &Branches, tokens: &[TokenList], images: &[HsvTensor]) -> Result<(Vec<ProbDist3>, Vec<ProbDist3>)> {
    Ok((b.0.predict_tokens(tokens)?, b.1.predict_many(images)))
}

/// Trains both branches on everything and the stacker on out-of-fold (or
/// in-sample) branch distributions.
pub fn fusion_fit(
    tokens: &[TokenList],
    images: &[HsvTensor],
    labels: &[Sentiment],
    cfg: &FusionConfig,
    prep: &PrepConfig,
) -> Result<FusionModel> {
    shape_check(tokens.len() == labels.len() && images.len() == labels.len(), || {
        format!("{} captions, {} images, {} labels", tokens.len(), images.len(), labels.len())
    })?;
    let n = labels.len();
    let (full, text_p, image_p) = if cfg.out_of_fold {
        if cfg.folds < 2 || cfg.folds > n {
            return Err(Error::Config(format!("need 2 <= folds <= {n}, got {}", cfg.folds)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.stacker.seed, Stream::Folds));
        let mut fold_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % cfg.folds;
        }
        let mut text_p = vec![ProbDist3::UNIFORM; n];
        let mut image_p = vec![ProbDist3::UNIFORM; n];
        for k in 0..cfg.folds {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == k);
            let pick_t = |idx: &[usize]| idx.iter().map(|&i| tokens[i].clone()).collect::<Vec<_>>();
            let pick_i = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
            let kept_y: Vec<Sentiment> = kept.iter().map(|&i| labels[i]).collect();
            let b = fit_branches(&pick_t(&kept), &pick_i(&kept), &kept_y, &cfg.reseeded(k as u64 + 1), prep)?;
            let (tp, ip) = branch_probs(&b, &pick_t(&held), &pick_i(&held))?;
            for (j, &i) in held.iter().enumerate() {
                text_p[i] = tp[j];
                image_p[i] = ip[j];
            }
        }
        let full = fit_branches(tokens, images, labels, cfg, prep)?;
        (full, text_p, image_p)
    } else {
        let full = fit_branches(tokens, images, labels, cfg, prep)?;
        let (tp, ip) = branch_probs(&full, tokens, images)?;
        (full, tp, ip)
    };
    let stacker = fusion_train(&text_p, &image_p, labels, &cfg.stacker)?;
    Ok(FusionModel {
        text: full.0,
        image: full.1,
        stacker,
    })
}

impl FusionModel {
    pub fn predict_tokens(&self, tokens: &[TokenList], images: &[HsvTensor]) -> Result<Vec<FusionPrediction>> {
        shape_check(tokens.len() == images.len(), || {
            format!("{} captions but {} images", tokens.len(), images.len())
        })?;
        let text = self.text.predict_tokens(tokens)?;
        let image = self.image.predict_many(images);
        Ok(text
            .into_iter()
            .zip(image)
            .map(|(t, i)| FusionPrediction {
                label: fusion_predict(&self.stacker, &t, &i),
                text: t,
                image: i,
                probs: self.stacker.proba(&t, &i),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.text.encode(&mut e);
        self.image.encode(&mut e);
        self.stacker.encode(&mut e);
        persist::seal(ModelKind::Fusion, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::Fusion)?);
        let text = FfnnBowModel::decode(&mut d)?;
        let image = CnnModel::decode(&mut d)?;
        let stacker = FusionStacker::decode(&mut d)?;
        d.finish()?;
        Ok(FusionModel { text, image, stacker })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use Sentiment::*;

    fn onehot(s: Sentiment) -> ProbDist3 {
        let mut p = [0.0; 3];
        p[s.index()] = 1.0;
        ProbDist3(p)
    }

    fn labels(n: usize, seed: u64) -> Vec<Sentiment> {
        let mut rng = rng::stream(seed, Stream::Split);
        (0..n).map(|_| Sentiment::from_index(rng.random_range(0..3)).unwrap()).collect()
    }

    #[test]
    fn hand_set_weights() {
        let mut s = FusionStacker {
            weights: [[0.0; 6]; 3],
            bias: [0.0, 0.1, 0.0],
        };
        s.weights[0] = [1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        s.weights[2] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.5];
        let t = ProbDist3([0.2, 0.3, 0.5]);
        let i = ProbDist3([0.1, 0.1, 0.8]);
        // neg 0.2 + 0.2 = 0.4, neu 0.1, pos 0.5 + 0.4 = 0.9
        let sc = s.scores(&t, &i);
        assert!((sc[0] - 0.4).abs() < 1e-15 && (sc[1] - 0.1).abs() < 1e-15 && (sc[2] - 0.9).abs() < 1e-15);
        assert_eq!(fusion_predict(&s, &t, &i), Positive);
    }

    #[test]
    fn identity_text_weights_follow_text_argmax() {
        let mut s = FusionStacker {
            weights: [[0.0; 6]; 3],
            bias: [0.0; 3],
        };
        for c in 0..3 {
            s.weights[c][c] = 1.0;
        }
        for p in [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6], [0.4, 0.4, 0.2]] {
            let t = ProbDist3(p);
            assert_eq!(fusion_predict(&s, &t, &ProbDist3::UNIFORM), t.argmax());
        }
    }

    #[test]
    fn perfect_text_branch_separates() {
        let y = labels(150, 1);
        let text: Vec<_> = y.iter().map(|&s| onehot(s)).collect();
        let image = vec![ProbDist3::UNIFORM; y.len()];
        let s = fusion_train(&text, &image, &y, &StackerConfig::default()).unwrap();
        let held = labels(90, 2);
        for &l in &held {
            assert_eq!(fusion_predict(&s, &onehot(l), &ProbDist3::UNIFORM), l);
        }
        assert_eq!(features(&text[0], &image[0]).len(), FEATURES);
    }

    #[test]
    fn uninformative_inputs_fall_back_to_majority() {
        let y: Vec<Sentiment> = (0..100)
            .map(|i| if i < 60 { Positive } else if i < 90 { Neutral } else { Negative })
            .collect();
        let u = vec![ProbDist3::UNIFORM; y.len()];
        let s = fusion_train(&u, &u, &y, &StackerConfig::default()).unwrap();
        let hits = y.iter().filter(|&&l| fusion_predict(&s, &u[0], &u[0]) == l).count();
        assert_eq!(hits, 60);
    }

    #[test]
    fn branch_swap_symmetry() {
        let y = labels(80, 3);
        let mut rng = rng::stream(4, Stream::Split);
        let mut rand_dist = || {
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.01..1.0));
            let z: f64 = a.iter().sum();
            ProbDist3(a.map(|v| v / z))
        };
        let text: Vec<_> = y.iter().map(|&l| {
            let mut p = rand_dist().0;
            p[l.index()] += 1.0;
            ProbDist3(p.map(|v| v / 2.0))
        }).collect();
        let image: Vec<_> = (0..y.len()).map(|_| rand_dist()).collect();
        let cfg = StackerConfig { epochs: 30, ..StackerConfig::default() };
        let a = fusion_train(&text, &image, &y, &cfg).unwrap();
        let b = fusion_train(&image, &text, &y, &cfg).unwrap().swap_branches();
        for c in 0..3 {
            for j in 0..6 {
                assert!((a.weights[c][j] - b.weights[c][j]).abs() < 1e-9);
            }
        }
        let sw = a.swap_branches();
        for p in &text {
            let (sa, sb) = (a.scores(p, p), sw.scores(p, p));
            for c in 0..3 {
                assert!((sa[c] - sb[c]).abs() < 1e-12);
            }
            assert_eq!(fusion_predict(&a, p, p), fusion_predict(&sw, p, p));
        }
        assert_eq!(sw.swap_branches(), a);
    }

    #[test]
    fn deterministic_and_checked() {
        let y = labels(40, 5);
        let t: Vec<_> = y.iter().map(|&s| onehot(s)).collect();
        let cfg = StackerConfig { seed: 9, ..StackerConfig::default() };
        assert_eq!(fusion_train(&t, &t, &y, &cfg).unwrap(), fusion_train(&t, &t, &y, &cfg).unwrap());
        assert!(fusion_train(&t[..3], &t, &y, &cfg).is_err());
        assert!(fusion_train(&t, &t, &y, &StackerConfig { lambda: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn stacker_round_trip() {
        let s = FusionStacker {
            weights: [[0.5, -1.0, 0.25, 0.0, 3.0, -2.0]; 3],
            bias: [0.1, 0.2, -0.3],
        };
        let mut e = Encoder::new();
        s.encode(&mut e);
        let b = e.finish();
        assert_eq!(FusionStacker::decode(&mut Decoder::new(&b)).unwrap(), s);
    }
}
