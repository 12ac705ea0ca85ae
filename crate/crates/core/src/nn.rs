//! Dense feed-forward networks with exact backpropagation and Adam.
//!
//! Parameters live in one flat `Vec<f64>` in canonical order: for each layer,
//! the `in x out` weight matrix row-major, then the `out` biases. This is
//! also the layout of [`WeightVector`], so federated exchange is a copy.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: OutputHead,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, head: OutputHead) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Tanh,
            head,
        }
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn descriptor(&self) -> String {
        let mut dims = vec![self.input_dim.to_string()];
        dims.extend(self.hidden.iter().map(usize::to_string));
        dims.push(self.output_dim.to_string());
        format!("{}:{:?}:{:?}", dims.join("-"), self.activation, self.head).to_lowercase()
    }
}

/// Identifier of an ordered set of network layouts.
pub fn layout_hash(specs: &[&MlpSpec]) -> u64 {
    let desc: Vec<String> = specs.iter().map(|s| s.descriptor()).collect();
    stable_hash(&desc.join("|"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
}

/// Cached intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input to each layer; `activations[0]` is the batch itself.
    pub activations: Vec<Array2<f64>>,
    /// Last-layer pre-head outputs.
    pub logits: Array2<f64>,
    /// Head applied to `logits` (identity or row-wise softmax).
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.num_params();
        Self {
            spec,
            params: vec![0.0; n],
        }
    }

    /// Uniform fan-in initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(spec.num_params());
        for (fan_in, fan_out) in spec.layer_shapes() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out + fan_out).map(|_| rng.random_range(-bound..=bound)));
        }
        Self { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.num_params() {
            return Err(Error::Shape(format!(
                "{} expects {} parameters, got {}",
                spec.descriptor(),
                spec.num_params(),
                params.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut offset = 0;
        self.spec.layer_shapes().into_iter().map(move |(i, o)| {
            let w = ArrayView2::from_shape((i, o), &self.params[offset..offset + i * o]).unwrap();
            let b = ArrayView1::from(&self.params[offset + i * o..offset + i * o + o]);
            offset += i * o + o;
            (w, b)
        })
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> ForwardPass {
        assert_eq!(input.ncols(), self.spec.input_dim, "input width");
        let n_layers = self.spec.hidden.len() + 1;
        let mut activations = Vec::with_capacity(n_layers);
        let mut current = input.to_owned();
        let mut logits = None;
        for (idx, (w, b)) in self.layers().enumerate() {
            let mut z = current.dot(&w);
            z += &b;
            if idx + 1 < n_layers {
                match self.spec.activation {
                    Activation::Tanh => z.mapv_inplace(tanh),
                }
                activations.push(std::mem::replace(&mut current, z));
            } else {
                activations.push(std::mem::take(&mut current));
                logits = Some(z);
            }
        }
        let logits = logits.expect("network has at least one layer");
        let output = match self.spec.head {
            OutputHead::Linear => logits.clone(),
            OutputHead::Softmax => softmax_rows(logits.view()),
        };
        ForwardPass {
            activations,
            logits,
            output,
        }
    }

    /// Single-sample forward pass returning the head output.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(input).output.into_raw_vec_and_offset().0
    }

    /// Single-sample pre-head outputs.
    pub fn predict_logits(&self, x: &[f64]) -> Vec<f64> {
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(input).logits.into_raw_vec_and_offset().0
    }

    /// Parameter gradient given the gradient of a scalar loss with respect
    /// to the pre-head outputs (`pass.logits`). For a softmax head, convert
    /// probability gradients with [`softmax_backward`] first.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: ArrayView2<'_, f64>) -> Vec<f64> {
        assert_eq!(grad_logits.dim(), pass.logits.dim(), "upstream gradient shape");
        let shapes = self.spec.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_logits.to_owned();
        for layer in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[layer];
            let off = offsets[layer];
            let a_in = &pass.activations[layer];
            {
                let (gw, rest) = grad[off..].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).unwrap();
                general_mat_mul(1.0, &a_in.t(), &delta, 0.0, &mut gw);
                for (g, s) in rest[..fan_out].iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = s;
                }
            }
            if layer > 0 {
                let w = ArrayView2::from_shape(
                    (fan_in, fan_out),
                    &self.params[off..off + fan_in * fan_out],
                )
                .unwrap();
                let mut next = delta.dot(&w.t());
                match self.spec.activation {
                    Activation::Tanh => next.zip_mut_with(a_in, |d, &a| *d *= 1.0 - a * a),
                }
                delta = next;
            }
        }
        grad
    }
}

/// `tanh` through a single `exp`; about twice as fast as libm and within a
/// few ulps of it.
#[inline]
pub fn tanh(x: f64) -> f64 {
    if x.abs() < 0.02 {
        x.tanh()
    } else {
        1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
    }
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Row-wise log-softmax (log-sum-exp stabilised).
pub fn log_softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Chain rule through a row-wise softmax: `dL/dz = p * (g - <g, p>)`.
pub fn softmax_backward(probs: ArrayView2<'_, f64>, grad_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.dim());
    for ((p, g), mut o) in probs.rows().into_iter().zip(grad_probs.rows()).zip(out.rows_mut()) {
        let dot = p.dot(&g);
        for ((o, &p), &g) in o.iter_mut().zip(p).zip(g) {
            *o = p * (g - dot);
        }
    }
    out
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Flat parameter vector exchanged between clients and the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    spec_hash: u64,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, spec_hash: u64) -> Self {
        Self { values, spec_hash }
    }

    /// Concatenates the parameters of `nets` in order.
    pub fn from_nets(nets: &[&Mlp]) -> Self {
        let specs: Vec<&MlpSpec> = nets.iter().map(|n| n.spec()).collect();
        let values = nets.iter().flat_map(|n| n.params().iter().copied()).collect();
        Self {
            values,
            spec_hash: layout_hash(&specs),
        }
    }

    /// Copies the parameters back into `nets`, which must match the layout
    /// this vector was built from.
    pub fn load_into(&self, nets: &mut [&mut Mlp]) -> Result<()> {
        let specs: Vec<&MlpSpec> = nets.iter().map(|n| n.spec()).collect();
        let expected: usize = specs.iter().map(|s| s.num_params()).sum();
        if self.values.len() != expected {
            return Err(Error::Shape(format!(
                "weight vector has {} values, layout needs {expected}",
                self.values.len()
            )));
        }
        if self.spec_hash != layout_hash(&specs) {
            return Err(Error::Shape("weight vector belongs to a different layout".into()));
        }
        let mut off = 0;
        for net in nets.iter_mut() {
            let n = net.num_params();
            net.params_mut().copy_from_slice(&self.values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn flatten(net: &Mlp) -> WeightVector {
    WeightVector::from_nets(&[net])
}

pub fn unflatten(spec: &MlpSpec, weights: &WeightVector) -> Result<Mlp> {
    let mut net = Mlp::zeros(spec.clone());
    weights.load_into(&mut [&mut net])?;
    Ok(net)
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter length");
        assert_eq!(grad.len(), self.m.len(), "optimizer/gradient length");
        self.t += 1;
        let step_size = self.lr / (1.0 - self.beta1.powf(self.t as f64));
        let inv_bc2 = 1.0 / (1.0 - self.beta2.powf(self.t as f64));
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step_size * *m / ((*v * inv_bc2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
