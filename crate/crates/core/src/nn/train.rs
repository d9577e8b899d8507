use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward, forward, init_params, softmax_xent, AdamConfig, AdamState, MlpParams, NetSpec, Parameters};
use crate::error::{shape_check, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 10,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "batch size and epochs must be >= 1 (got {} and {})",
                self.batch_size, self.epochs
            )));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Mini-batch Adam over `n` examples.
///
/// Each epoch visits a fresh seeded permutation (or the identity order when
/// shuffling is off) in consecutive batches; the last batch may be short.
/// `loss_grad` returns the mean loss and gradients for one batch of example
/// indices. The result is the per-epoch mean example loss.
pub fn minibatch_train<P, F>(params: &mut P, n: usize, cfg: &TrainConfig, mut loss_grad: F) -> Result<Vec<f64>>
where
    P: Parameters,
    F: FnMut(&P, &[usize]) -> Result<(f64, P)>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Data("cannot train on zero examples".into()));
    }
    let mut opt = AdamState::new(params, cfg.adam);
    let mut rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = loss_grad(params, idx)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += loss * idx.len() as f64;
            opt.step(params, &grads)?;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

/// Initializes a network from `spec` and fits it to `data` rows.
pub fn train(spec: &NetSpec, data: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    spec.validate()?;
    shape_check(data.rows() == labels.len(), || {
        format!("{} rows but {} labels", data.rows(), labels.len())
    })?;
    shape_check(data.cols() == spec.input_dim, || {
        format!("data width {} but network input is {}", data.cols(), spec.input_dim)
    })?;
    let mut params = init_params(spec)?;
    let activation = spec.activation;
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    let history = minibatch_train(&mut params, data.rows(), cfg, |p, idx| {
        let x = data.select_rows(idx);
        batch_labels.clear();
        batch_labels.extend(idx.iter().map(|&i| labels[i]));
        let (z, cache) = forward(p, activation, &x)?;
        let (loss, dz) = softmax_xent(&z, &batch_labels)?;
        Ok((loss, backward(p, activation, &cache, &dz)?))
    })?;
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{logits, Activation, Init};

    /// Three clusters at the corners of a simplex: each point is its class
    /// unit vector scaled into [1, 2] plus bounded noise on the other axes,
    /// so `argmax(x) = class` holds for every point by construction.
    fn separable(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        use rand::Rng;
        let mut rng = rng::stream(seed, Stream::Split);
        let mut data = Vec::with_capacity(n * 3);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            for j in 0..3 {
                data.push(if j == c { rng.random_range(1.0..2.0) } else { rng.random_range(-0.4..0.4) });
            }
            labels.push(c);
        }
        (Matrix::from_vec(n, 3, data).unwrap(), labels)
    }

    fn accuracy(p: &MlpParams, x: &Matrix, labels: &[usize]) -> f64 {
        let z = logits(p, Activation::Relu, x).unwrap();
        let hits = (0..x.rows())
            .filter(|&r| {
                let row = z.row(r);
                let best = (0..3).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                best == labels[r]
            })
            .count();
        hits as f64 / x.rows() as f64
    }

    fn toy_spec(seed: u64) -> NetSpec {
        NetSpec {
            input_dim: 3,
            hidden: vec![16, 16],
            output_dim: 3,
            activation: Activation::Relu,
            seed,
            init: Init::FanIn,
        }
    }

    #[test]
    fn separable_points_reach_full_accuracy() {
        let (x, y) = separable(60, 1);
        for c in 0..60 {
            let row = x.row(c);
            assert!(row[y[c]] > row[(y[c] + 1) % 3] && row[y[c]] > row[(y[c] + 2) % 3]);
        }
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 10,
            adam: AdamConfig { lr: 0.05, ..AdamConfig::default() },
            seed: 3,
            shuffle: true,
        };
        let (p, hist) = train(&toy_spec(2), &x, &y, &cfg).unwrap();
        assert_eq!(hist.len(), 10);
        assert_eq!(accuracy(&p, &x, &y), 1.0, "history {hist:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable(37, 4);
        let cfg = TrainConfig { seed: 8, batch_size: 5, ..TrainConfig::default() };
        let a = train(&toy_spec(1), &x, &y, &cfg).unwrap();
        let b = train(&toy_spec(1), &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&toy_spec(1), &x, &y, &TrainConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn epoch_losses_settle_on_separable_data() {
        let (x, y) = separable(60, 5);
        let mut monotone = 0;
        for seed in 0..50 {
            let cfg = TrainConfig {
                batch_size: 10,
                epochs: 10,
                adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
                seed,
                shuffle: true,
            };
            let (_, hist) = train(&toy_spec(seed), &x, &y, &cfg).unwrap();
            if hist[1..].windows(2).all(|w| w[1] <= w[0]) {
                monotone += 1;
            }
        }
        assert!(monotone >= 45, "{monotone}/50 runs non-increasing after epoch 2");
    }

    #[test]
    fn bad_inputs() {
        let (x, y) = separable(6, 0);
        assert!(train(&toy_spec(0), &x, &y[..5], &TrainConfig::default()).is_err());
        assert!(train(&toy_spec(0), &x, &y, &TrainConfig { batch_size: 0, ..TrainConfig::default() }).is_err());
        let empty = Matrix::zeros(0, 3);
        assert!(train(&toy_spec(0), &empty, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let (mut x, y) = separable(20, 0);
        x.set(7, 0, f64::NAN);
        let cfg = TrainConfig { batch_size: 5, shuffle: false, ..TrainConfig::default() };
        match train(&toy_spec(0), &x, &y, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 0, batch: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }
}
