//! Dense feed-forward network trained with softmax cross-entropy and Adam.
//!
//! Layers are affine maps `z = x·Wᵀ + b` with `W` stored `out x in`; hidden
//! layers apply the activation, the last layer emits raw logits.

mod adam;
mod gradcheck;
mod train;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};
use crate::matrix::Matrix;
use crate::persist::{self, Decoder, Encoder, ModelKind};
use crate::rng::{self, Stream};

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, grad_check, GradCheckReport, Stencil};
pub use train::{minibatch_train, train, TrainConfig};

/// Hidden widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 6] = [256, 128, 64, 64, 32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// No nonlinearity; the network is affine end to end.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            // NaN passes through so bad inputs surface as a non-finite loss
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at a pre-activation value; ReLU uses 0 at 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(t: u64) -> Result<Self> {
        match t {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Weight initialization; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Init {
    /// i.i.d. `Normal(0, sigma²)`; `sigma = 1` is the standard normal.
    Normal { sigma: f64 },
    /// `Normal(0, 2 / fan_in)` per layer.
    FanIn,
}

impl Default for Init {
    fn default() -> Self {
        Init::Normal { sigma: 1.0 }
    }
}

impl Init {
    pub fn sigma(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal { sigma } => sigma,
            Init::FanIn => (2.0 / fan_in as f64).sqrt(),
        }
    }

    pub(crate) fn encode(self, e: &mut Encoder) {
        match self {
            Init::Normal { sigma } => e.u64(0).f64(sigma),
            Init::FanIn => e.u64(1).f64(0.0),
        };
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let tag = d.u64()?;
        let sigma = d.f64()?;
        match tag {
            0 => Ok(Init::Normal { sigma }),
            1 => Ok(Init::FanIn),
            _ => Err(Error::Format(format!("unknown init tag {tag}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
    pub init: Init,
}

impl NetSpec {
    /// Six tapering ReLU hidden layers, three outputs, standard-normal weights.
    pub fn new(input_dim: usize) -> Self {
        NetSpec {
            input_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            output_dim: 3,
            activation: Activation::Relu,
            seed: 0,
            init: Init::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {} -> {:?} -> {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        if let Init::Normal { sigma } = self.init {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Config(format!("init sigma must be finite and >= 0, got {sigma}")));
            }
        }
        Ok(())
    }

    /// `(in, out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.usize(self.input_dim)
            .usizes(&self.hidden)
            .usize(self.output_dim)
            .u64(self.activation.tag())
            .u64(self.seed);
        self.init.encode(e);
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let spec = NetSpec {
            input_dim: d.usize()?,
            hidden: d.usizes()?,
            output_dim: d.usize()?,
            activation: Activation::from_tag(d.u64()?)?,
            seed: d.u64()?,
            init: Init::decode(d)?,
        };
        spec.validate()
            .map_err(|e| Error::Format(format!("stored network spec is invalid: {e}")))?;
        Ok(spec)
    }
}

/// Parameter containers that the optimizer and gradient checker can walk.
///
/// `tensors` and `tensors_mut` must list the same buffers in the same order.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn encode(&self, e: &mut Encoder) {
        e.usize(self.layers.len());
        for l in &self.layers {
            e.usize(l.weights.rows()).usize(l.weights.cols());
            e.f64s(l.weights.as_slice()).f64s(&l.bias);
        }
    }

    fn decode(d: &mut Decoder) -> Result<Self> {
        let n = d.usize()?;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let (rows, cols) = (d.usize()?, d.usize()?);
            let weights = Matrix::from_vec(rows, cols, d.f64s()?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = d.f64s()?;
            if bias.len() != rows {
                return Err(Error::Format("bias length does not match layer width".into()));
            }
            layers.push(Layer { weights, bias });
        }
        Ok(MlpParams { layers })
    }
}

/// Draws weights from the spec's init distribution using the `Init` stream of `spec.seed`.
pub fn init_params(spec: &NetSpec) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Init);
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let sigma = spec.init.sigma(fan_in);
            let data = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect();
            Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

/// Per-layer values kept from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each affine layer: the batch, then each hidden post-activation.
    pub inputs: Vec<Matrix>,
    /// Hidden pre-activations.
    pub pre: Vec<Matrix>,
}

pub fn forward(params: &MlpParams, activation: Activation, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    shape_check(batch.cols() == params.input_dim(), || {
        format!("batch width {} but network input is {}", batch.cols(), params.input_dim())
    })?;
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n.saturating_sub(1));
    let mut x = batch.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = x.matmul_t(&layer.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        inputs.push(x);
        if i + 1 == n {
            return Ok((z, ForwardCache { inputs, pre }));
        }
        let mut a = z.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = activation.apply(*v));
        pre.push(z);
        x = a;
    }
    // zero layers: logits are the input itself
    Ok((x, ForwardCache { inputs, pre }))
}

/// Forward pass without the cache.
pub fn logits(params: &MlpParams, activation: Activation, batch: &Matrix) -> Result<Matrix> {
    forward(params, activation, batch).map(|(z, _)| z)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        softmax_in_place(p.row_mut(r));
    }
    p
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Mean cross-entropy of `softmax(logits)` against class indices, and its
/// gradient `(softmax - onehot) / batch`.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    shape_check(logits.rows() == labels.len(), || {
        format!("{} logit rows but {} labels", logits.rows(), labels.len())
    })?;
    if let Some(bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::Data(format!("label {bad} out of range for {} classes", logits.cols())));
    }
    let b = labels.len();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if b == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - z[label];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (z[c] - log_norm).exp();
            let onehot = if c == label { 1.0 } else { 0.0 };
            *g = (p - onehot) / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

/// Gradients of the loss behind `dlogits` with respect to every weight and bias.
pub fn backward(
    params: &MlpParams,
    activation: Activation,
    cache: &ForwardCache,
    dlogits: &Matrix,
) -> Result<MlpParams> {
    let n = params.layers.len();
    shape_check(cache.inputs.len() == n && cache.pre.len() + 1 == n.max(1), || {
        "cache does not come from this network".to_string()
    })?;
    shape_check(dlogits.cols() == params.output_dim() && dlogits.rows() == cache.inputs[0].rows(), || {
        format!("dlogits is {:?}", dlogits.shape())
    })?;
    let mut grads: Vec<Layer> = Vec::with_capacity(n);
    let mut delta = dlogits.clone();
    for i in (0..n).rev() {
        let layer = &params.layers[i];
        grads.push(Layer {
            weights: delta.t_matmul(&cache.inputs[i])?,
            bias: delta.col_sums(),
        });
        if i > 0 {
            let mut upstream = delta.matmul(&layer.weights)?;
            for (g, z) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre[i - 1].as_slice())
            {
                *g *= activation.derivative(*z);
            }
            delta = upstream;
        }
    }
    grads.reverse();
    Ok(MlpParams { layers: grads })
}

/// Class probabilities for every row.
pub fn predict_proba(params: &MlpParams, activation: Activation, batch: &Matrix) -> Result<Matrix> {
    Ok(softmax(&logits(params, activation, batch)?))
}

/// A network together with the spec it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn new(spec: NetSpec) -> Result<Self> {
        let params = init_params(&spec)?;
        Ok(Mlp { spec, params })
    }

    pub fn predict_proba(&self, batch: &Matrix) -> Result<Matrix> {
        predict_proba(&self.params, self.spec.activation, batch)
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        self.spec.encode(e);
        self.params.encode(e);
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let spec = NetSpec::decode(d)?;
        let params = MlpParams::decode(d)?;
        let dims: Vec<(usize, usize)> = params
            .layers
            .iter()
            .map(|l| (l.weights.cols(), l.weights.rows()))
            .collect();
        if dims != spec.layer_dims() {
            return Err(Error::Format("stored weights do not match the stored spec".into()));
        }
        if !params.all_finite() {
            return Err(Error::Format("stored weights contain non-finite values".into()));
        }
        Ok(Mlp { spec, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        persist::seal(ModelKind::Mlp, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::Mlp)?);
        let m = Mlp::decode(&mut d)?;
        d.finish()?;
        Ok(m)
    }
}
