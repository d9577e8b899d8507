use rand::seq::index;

use super::{backward, forward, init_params, softmax_xent, NetSpec, Parameters};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_tensor: Vec<f64>,
    pub checked: usize,
}

/// Central difference formula used for the numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(L(θ+ε) - L(θ-ε)) / 2ε`. Spans the narrowest interval, so it is the
    /// safer choice near ReLU and max-pool kinks.
    TwoPoint,
    /// `(L(θ-2ε) - 8L(θ-ε) + 8L(θ+ε) - L(θ+2ε)) / 12ε`, truncation error
    /// `O(ε⁴)`. Only meaningful on smooth losses.
    FivePoint,
}

/// Compares analytic gradients against a central difference on up to
/// `per_tensor` entries of each tensor (all entries when the tensor is
/// smaller), chosen with `sample_seed`.
///
/// Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn check_gradients<P, L>(
    params: &P,
    analytic: &P,
    loss: L,
    stencil: Stencil,
    eps: f64,
    per_tensor: usize,
    sample_seed: u64,
) -> GradCheckReport
where
    P: Parameters,
    L: Fn(&P) -> f64,
{
    let mut rng = rng::stream(sample_seed, Stream::Init);
    let grads = analytic.tensors();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::with_capacity(grads.len()),
        checked: 0,
    };
    for (t, g) in grads.iter().enumerate() {
        let picks: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            let mut v = index::sample(&mut rng, g.len(), per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for i in picks {
            let orig = probe.tensors()[t][i];
            let mut at = |h: f64| {
                probe.tensors_mut()[t][i] = orig + h;
                loss(&probe)
            };
            let numeric = match stencil {
                Stencil::TwoPoint => (at(eps) - at(-eps)) / (2.0 * eps),
                Stencil::FivePoint => (at(-2.0 * eps) - 8.0 * at(-eps) + 8.0 * at(eps) - at(2.0 * eps)) / (12.0 * eps),
            };
            probe.tensors_mut()[t][i] = orig;
            let a = g[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.per_tensor.push(worst);
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    report
}

/// Gradient check of a freshly initialized network from `spec` on one batch.
/// Identity networks are smooth and get the five-point stencil; ReLU
/// networks get the two-point one.
pub fn grad_check(spec: &NetSpec, batch: &Matrix, labels: &[usize], eps: f64, per_tensor: usize) -> Result<GradCheckReport> {
    let params = init_params(spec)?;
    let act = spec.activation;
    let (z, cache) = forward(&params, act, batch)?;
    let (_, dz) = softmax_xent(&z, labels)?;
    let grads = backward(&params, act, &cache, &dz)?;
    let loss = |p: &super::MlpParams| {
        let (z, _) = forward(p, act, batch).expect("shapes checked above");
        softmax_xent(&z, labels).expect("labels checked above").0
    };
    let stencil = match act {
        super::Activation::Identity => Stencil::FivePoint,
        super::Activation::Relu => Stencil::TwoPoint,
    };
    Ok(check_gradients(&params, &grads, loss, stencil, eps, per_tensor, spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init};
    use rand_distr::{Distribution, StandardNormal};

    fn batch(rows: usize, cols: usize) -> Matrix {
        let mut rng = rng::stream(99, Stream::Split);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn spec(activation: Activation) -> NetSpec {
        NetSpec {
            input_dim: 300,
            hidden: vec![8; 6],
            output_dim: 3,
            activation,
            seed: 17,
            init: Init::FanIn,
        }
    }

    #[test]
    fn relu_net_passes() {
        let r = grad_check(&spec(Activation::Relu), &batch(8, 300), &[0, 1, 2, 0, 1, 2, 0, 1], 1e-5, 64).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.per_tensor.len(), 14);
    }

    #[test]
    fn linear_net_is_tighter() {
        let r = grad_check(&spec(Activation::Identity), &batch(8, 300), &[2, 1, 0, 0, 1, 2, 2, 1], 1e-4, 64).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let s = spec(Activation::Relu);
        let x = batch(4, 300);
        let labels = [0, 1, 2, 1];
        let params = init_params(&s).unwrap();
        let (z, cache) = forward(&params, s.activation, &x).unwrap();
        let (_, dz) = softmax_xent(&z, &labels).unwrap();
        let mut grads = backward(&params, s.activation, &cache, &dz).unwrap();
        let last = grads.layers.len() - 1;
        grads.layers[last].bias[1] += 0.1;
        let loss = |p: &crate::nn::MlpParams| softmax_xent(&forward(p, s.activation, &x).unwrap().0, &labels).unwrap().0;
        let r = check_gradients(&params, &grads, loss, Stencil::TwoPoint, 1e-5, 64, 0);
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }
}
