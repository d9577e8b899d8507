//! Small convolutional classifier over 32×32 HSV tensors.
//!
//! conv 3×3 (3→8, same padding) → ReLU → 2×2 max-pool →
//! conv 3×3 (8→16, same padding) → ReLU → 2×2 max-pool →
//! flatten (1024) → dense 64 → ReLU → dense 3 (logits).
//!
//! Convolution weights are stored `(out, in, ky, kx)`, dense weights `out x in`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hsv::{HsvTensor, SIDE};
use super::ProbDist3;
use crate::corpus::Sentiment;
use crate::error::{shape_check, Error, Result};
use crate::matrix::dot;
use crate::nn::{minibatch_train, softmax_in_place, Init, Parameters, TrainConfig};
use crate::persist::{self, Decoder, Encoder, ModelKind};
use crate::rng::{self, Stream};

const C0: usize = 3;
const C1: usize = 8;
const C2: usize = 16;
const S0: usize = SIDE;
const S1: usize = SIDE / 2;
const S2: usize = SIDE / 4;
const FLAT: usize = C2 * S2 * S2;
const HIDDEN: usize = 64;
const OUT: usize = 3;
/// Samples per gradient chunk; fixed so the summation order never depends on
/// the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub seed: u64,
    pub init: Init,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec { seed: 0, init: Init::FanIn }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

/// (len, fan_in) of each weight tensor, in storage order.
const WEIGHT_SHAPES: [(usize, usize); 4] = [
    (C1 * C0 * 9, C0 * 9),
    (C2 * C1 * 9, C1 * 9),
    (HIDDEN * FLAT, FLAT),
    (OUT * HIDDEN, HIDDEN),
];
const BIAS_LENS: [usize; 4] = [C1, C2, HIDDEN, OUT];

impl Parameters for CnnParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }
}

impl CnnParams {
    pub fn init(spec: &CnnSpec) -> Self {
        let mut rng = rng::stream(spec.seed, Stream::Init);
        let mut w: Vec<Vec<f64>> = WEIGHT_SHAPES
            .iter()
            .map(|&(len, fan_in)| {
                let sigma = spec.init.sigma(fan_in);
                (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sigma * z
                    })
                    .collect()
            })
            .collect();
        let [fc2_w, fc1_w, conv2_w, conv1_w] = [w.pop(), w.pop(), w.pop(), w.pop()].map(Option::unwrap);
        CnnParams {
            conv1_w,
            conv1_b: vec![0.0; C1],
            conv2_w,
            conv2_b: vec![0.0; C2],
            fc1_w,
            fc1_b: vec![0.0; HIDDEN],
            fc2_w,
            fc2_b: vec![0.0; OUT],
        }
    }

    pub fn zeros() -> Self {
        let z = |n| vec![0.0; n];
        CnnParams {
            conv1_w: z(WEIGHT_SHAPES[0].0),
            conv1_b: z(C1),
            conv2_w: z(WEIGHT_SHAPES[1].0),
            conv2_b: z(C2),
            fc1_w: z(WEIGHT_SHAPES[2].0),
            fc1_b: z(HIDDEN),
            fc2_w: z(WEIGHT_SHAPES[3].0),
            fc2_b: z(OUT),
        }
    }

    fn check_shapes(&self) -> bool {
        let t = self.tensors();
        (0..4).all(|i| t[2 * i].len() == WEIGHT_SHAPES[i].0 && t[2 * i + 1].len() == BIAS_LENS[i])
    }

    fn add_assign(&mut self, other: &CnnParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn relu(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

/// Offsets `(lo, hi)` of output rows/cols whose tap `k` lands inside the image.
fn valid(k: usize, side: usize) -> (usize, usize) {
    match k {
        0 => (1, side),
        1 => (0, side),
        _ => (0, side - 1),
    }
}

fn conv_forward(input: &[f64], in_c: usize, side: usize, w: &[f64], b: &[f64], out_c: usize) -> Vec<f64> {
    let n = side * side;
    let mut out = vec![0.0; out_c * n];
    for oc in 0..out_c {
        let plane = &mut out[oc * n..(oc + 1) * n];
        plane.fill(b[oc]);
        for ic in 0..in_c {
            let src = &input[ic * n..(ic + 1) * n];
            for ky in 0..3 {
                let (ylo, yhi) = valid(ky, side);
                for kx in 0..3 {
                    let (xlo, xhi) = valid(kx, side);
                    let wv = w[((oc * in_c + ic) * 3 + ky) * 3 + kx];
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * side + xlo..y * side + xhi];
                        let s = &src[sy * side + xlo + kx - 1..sy * side + xhi + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_c: usize,
    side: usize,
    w: &[f64],
    dz: &[f64],
    out_c: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let n = side * side;
    let mut din = want_input_grad.then(|| vec![0.0; in_c * n]);
    for oc in 0..out_c {
        let g = &dz[oc * n..(oc + 1) * n];
        db[oc] += g.iter().sum::<f64>();
        for ic in 0..in_c {
            let src = &input[ic * n..(ic + 1) * n];
            for ky in 0..3 {
                let (ylo, yhi) = valid(ky, side);
                for kx in 0..3 {
                    let (xlo, xhi) = valid(kx, side);
                    let wi = ((oc * in_c + ic) * 3 + ky) * 3 + kx;
                    let wv = w[wi];
                    let mut acc = 0.0;
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let gr = &g[y * side + xlo..y * side + xhi];
                        let off = sy * side + xlo + kx - 1;
                        acc += dot(gr, &src[off..off + gr.len()]);
                        if let Some(din) = din.as_mut() {
                            let d = &mut din[ic * n + off..ic * n + off + gr.len()];
                            for (x, &gv) in d.iter_mut().zip(gr) {
                                *x += wv * gv;
                            }
                        }
                    }
                    dw[wi] += acc;
                }
            }
        }
    }
    din
}

/// ReLU then 2×2 max-pool. Returns pooled values and the winning input index
/// of each window (first maximum wins).
fn relu_pool(z: &[f64], c: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(c * half * half);
    let mut arg = Vec::with_capacity(c * half * half);
    for ch in 0..c {
        for py in 0..half {
            for px in 0..half {
                let base = ch * side * side + 2 * py * side + 2 * px;
                let cands = [base, base + 1, base + side, base + side + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if relu(z[i]) > relu(z[best]) {
                        best = i;
                    }
                }
                out.push(relu(z[best]));
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the pre-activation map through the ReLU.
fn unpool_relu(dpool: &[f64], arg: &[usize], z: &[f64]) -> Vec<f64> {
    let mut dz = vec![0.0; z.len()];
    for (&g, &i) in dpool.iter().zip(arg) {
        if z[i] > 0.0 {
            dz[i] += g;
        }
    }
    dz
}

struct Trace {
    x: Vec<f64>,
    z1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    z2: Vec<f64>,
    flat: Vec<f64>,
    arg2: Vec<usize>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    logits: [f64; OUT],
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len()).zip(b).map(|(row, bi)| dot(row, x) + bi).collect()
}

fn forward(p: &CnnParams, x: Vec<f64>) -> Trace {
    let z1 = conv_forward(&x, C0, S0, &p.conv1_w, &p.conv1_b, C1);
    let (p1, arg1) = relu_pool(&z1, C1, S0);
    let z2 = conv_forward(&p1, C1, S1, &p.conv2_w, &p.conv2_b, C2);
    let (flat, arg2) = relu_pool(&z2, C2, S1);
    let z3 = dense(&p.fc1_w, &p.fc1_b, &flat);
    let a3: Vec<f64> = z3.iter().map(|&v| relu(v)).collect();
    let l = dense(&p.fc2_w, &p.fc2_b, &a3);
    Trace {
        x,
        z1,
        p1,
        arg1,
        z2,
        flat,
        arg2,
        z3,
        a3,
        logits: [l[0], l[1], l[2]],
    }
}

fn backward(p: &CnnParams, t: &Trace, dlogits: &[f64; OUT], g: &mut CnnParams) {
    let mut da3 = vec![0.0; HIDDEN];
    for (o, &d) in dlogits.iter().enumerate() {
        g.fc2_b[o] += d;
        let row = &p.fc2_w[o * HIDDEN..(o + 1) * HIDDEN];
        for j in 0..HIDDEN {
            g.fc2_w[o * HIDDEN + j] += d * t.a3[j];
            da3[j] += d * row[j];
        }
    }
    let mut dflat = vec![0.0; FLAT];
    for j in 0..HIDDEN {
        if t.z3[j] <= 0.0 {
            continue;
        }
        let d = da3[j];
        g.fc1_b[j] += d;
        let row = &p.fc1_w[j * FLAT..(j + 1) * FLAT];
        let grow = &mut g.fc1_w[j * FLAT..(j + 1) * FLAT];
        for k in 0..FLAT {
            grow[k] += d * t.flat[k];
            dflat[k] += d * row[k];
        }
    }
    let dz2 = unpool_relu(&dflat, &t.arg2, &t.z2);
    let dp1 = conv_backward(&t.p1, C1, S1, &p.conv2_w, &dz2, C2, &mut g.conv2_w, &mut g.conv2_b, true)
        .expect("requested");
    let dz1 = unpool_relu(&dp1, &t.arg1, &t.z1);
    conv_backward(&t.x, C0, S0, &p.conv1_w, &dz1, C1, &mut g.conv1_w, &mut g.conv1_b, false);
}

/// Mean cross-entropy and its gradient over `inputs` (channel-major planes).
fn loss_and_grad(p: &CnnParams, inputs: &[&[f64]], labels: &[usize]) -> (f64, CnnParams) {
    let b = inputs.len() as f64;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let parts: Vec<(f64, CnnParams)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = p.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let t = forward(p, inputs[i].to_vec());
                let mut prob = t.logits;
                softmax_in_place(&mut prob);
                loss -= prob[labels[i]].max(f64::MIN_POSITIVE).ln();
                let mut d = prob;
                d[labels[i]] -= 1.0;
                let d = d.map(|v| v / b);
                backward(p, &t, &d, &mut g);
            }
            (loss, g)
        })
        .collect();
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("nonempty batch");
    for (l, g) in parts {
        loss += l;
        grads.add_assign(&g);
    }
    (loss / b, grads)
}

fn logits_of(p: &CnnParams, planes: Vec<f64>) -> [f64; OUT] {
    forward(p, planes).logits
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub spec: CnnSpec,
    pub params: CnnParams,
}

impl CnnModel {
    pub fn new(spec: CnnSpec) -> Self {
        CnnModel {
            spec,
            params: CnnParams::init(&spec),
        }
    }

    pub fn predict_proba(&self, t: &HsvTensor) -> ProbDist3 {
        let mut l = logits_of(&self.params, t.to_planes());
        softmax_in_place(&mut l);
        ProbDist3(l)
    }

    pub fn predict_many(&self, ts: &[HsvTensor]) -> Vec<ProbDist3> {
        ts.par_iter().map(|t| self.predict_proba(t)).collect()
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.u64(self.spec.seed);
        self.spec.init.encode(e);
        for t in self.params.tensors() {
            e.f64s(t);
        }
    }

    pub(crate) fn decode(d: &mut Decoder) -> Result<Self> {
        let seed = d.u64()?;
        let init = Init::decode(d)?;
        let mut params = CnnParams::zeros();
        for t in params.tensors_mut() {
            let v = d.f64s()?;
            if v.len() != t.len() {
                return Err(Error::Format("CNN tensor has the wrong size".into()));
            }
            t.copy_from_slice(&v);
        }
        if !params.all_finite() {
            return Err(Error::Format("CNN weights contain non-finite values".into()));
        }
        Ok(CnnModel { spec: CnnSpec { seed, init }, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        persist::seal(ModelKind::CnnHsv, &e.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(persist::open_expecting(bytes, ModelKind::CnnHsv)?);
        let m = CnnModel::decode(&mut d)?;
        d.finish()?;
        Ok(m)
    }
}

/// Fits a fresh network with mini-batch Adam; returns the per-epoch losses.
pub fn cnn_train(
    tensors: &[HsvTensor],
    labels: &[Sentiment],
    spec: &CnnSpec,
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<f64>)> {
    shape_check(tensors.len() == labels.len(), || {
        format!("{} images but {} labels", tensors.len(), labels.len())
    })?;
    let planes: Vec<Vec<f64>> = tensors.iter().map(HsvTensor::to_planes).collect();
    let ys: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let mut model = CnnModel::new(*spec);
    debug_assert!(model.params.check_shapes());
    let history = minibatch_train(&mut model.params, tensors.len(), cfg, |p, idx| {
        let xs: Vec<&[f64]> = idx.iter().map(|&i| planes[i].as_slice()).collect();
        let y: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
        Ok(loss_and_grad(p, &xs, &y))
    })?;
    Ok((model, history))
}
