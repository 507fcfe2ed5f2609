use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Trainable;
use crate::field::VectorField;
use crate::linalg::Matrix;
use crate::rng::TrainRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u64 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Number of sinusoidal frequencies; the embedding has `2 * time_freqs` entries.
    #[serde(default = "default_freqs")]
    pub time_freqs: usize,
    /// Frequencies are geometric from 1 to `max_freq` (radians per unit time).
    #[serde(default = "default_max_freq")]
    pub max_freq: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_freqs() -> usize {
    16
}
fn default_max_freq() -> f64 {
    32.0
}
fn default_activation() -> Activation {
    Activation::Silu
}

impl MlpConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden: default_hidden(),
            time_freqs: default_freqs(),
            max_freq: default_max_freq(),
            activation: default_activation(),
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_time_freqs(mut self, freqs: usize, max_freq: f64) -> Self {
        self.time_freqs = freqs;
        self.max_freq = max_freq;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("model dimension must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden widths must be >= 1".into()));
        }
        if !(self.max_freq > 0.0 && self.max_freq.is_finite()) {
            return Err(Error::InvalidParameter(format!("max_freq = {} must be positive", self.max_freq)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.dim + 2 * self.time_freqs
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(&self.hidden);
        w.push(self.dim);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub(crate) fn activation_code(&self) -> u64 {
        self.activation.code()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    inp: usize,
    out: usize,
    /// Weights stored input-major: `w[r * out + c]`.
    w: usize,
    b: usize,
}

/// Multilayer perceptron `v(y, t)` on `[y, sin(w_j t), cos(w_j t)]`.
///
/// Parameters are one flat vector; each layer contributes its weight matrix
/// (input-major) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
    freqs: Vec<f64>,
    params: Vec<f64>,
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each layer (the time-augmented features first).
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// All parameters zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for p in widths.windows(2) {
            let (inp, out) = (p[0], p[1]);
            layers.push(Layer { inp, out, w: off, b: off + inp * out });
            off += inp * out + out;
        }
        let f = config.time_freqs;
        let freqs = (0..f)
            .map(|j| if f == 1 { 1.0 } else { config.max_freq.powf(j as f64 / (f - 1) as f64) })
            .collect();
        Ok(Self { config, layers, freqs, params: vec![0.0; off] })
    }

    /// Weights and biases uniform on `+-1/sqrt(fan_in)`.
    pub fn new(config: MlpConfig, rng: &mut TrainRng) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        for layer in mlp.layers.clone() {
            let bound = 1.0 / (layer.inp as f64).sqrt();
            for p in &mut mlp.params[layer.w..layer.b + layer.out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        if params.len() != mlp.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for a layout of {}",
                params.len(),
                mlp.params.len()
            )));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameter index ranges `(weights, bias)` of layer `l`.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let layer = self.layers[l];
        (layer.w..layer.b, layer.b..layer.b + layer.out)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!("{} parameters for {}", params.len(), self.params.len())));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn features(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let d = self.config.dim;
        out[..d].copy_from_slice(y);
        let f = self.freqs.len();
        for (j, w) in self.freqs.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            out[d + j] = s;
            out[d + f + j] = c;
        }
    }

    fn affine(&self, layer: Layer, x: &[f64], out: &mut [f64]) {
        let w = &self.params[layer.w..layer.b];
        out.copy_from_slice(&self.params[layer.b..layer.b + layer.out]);
        for (r, xr) in x.iter().enumerate() {
            let row = &w[r * layer.out..(r + 1) * layer.out];
            for (o, wv) in out.iter_mut().zip(row) {
                *o += xr * wv;
            }
        }
    }

    /// Single-sample forward pass with input checks.
    pub fn forward(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_input(y, t)?;
        Ok(self.eval_vec(y, t))
    }

    fn check_input(&self, y: &[f64], t: f64) -> Result<()> {
        if y.len() != self.config.dim {
            return Err(Error::Dimension(format!("input of length {} for a {}-d model", y.len(), self.config.dim)));
        }
        if !t.is_finite() || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }
}

impl VectorField for Mlp {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let max_w = self.layers.iter().map(|l| l.inp.max(l.out)).max().unwrap_or(0);
        let mut a = vec![0.0; max_w];
        let mut b = vec![0.0; max_w];
        self.features(y, t, &mut a[..self.config.input_width()]);
        let last = self.layers.len() - 1;
        for (l, &layer) in self.layers.iter().enumerate() {
            let dst = if l == last { &mut *out } else { &mut b[..layer.out] };
            self.affine(layer, &a[..layer.inp], dst);
            if l != last {
                for v in dst.iter_mut() {
                    *v = self.config.activation.apply(*v);
                }
                std::mem::swap(&mut a, &mut b);
            }
        }
    }
}

impl Trainable for Mlp {
    type Tape = MlpTape;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_batch(&self, y: &Matrix, t: &[f64]) -> Result<(Matrix, MlpTape)> {
        if y.rows() != t.len() {
            return Err(Error::Dimension(format!("{} inputs with {} times", y.rows(), t.len())));
        }
        let n = y.rows();
        let mut feats = Matrix::zeros(n, self.config.input_width());
        for i in 0..n {
            self.check_input(y.row(i), t[i])?;
            self.features(y.row(i), t[i], feats.row_mut(i));
        }
        let mut inputs = vec![feats];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (l, &layer) in self.layers.iter().enumerate() {
            let x = inputs.last().expect("at least the feature matrix");
            let mut z = Matrix::zeros(n, layer.out);
            for i in 0..n {
                self.affine(layer, x.row(i), z.row_mut(i));
            }
            if l == last {
                return Ok((z, MlpTape { inputs, pre }));
            }
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = self.config.activation.apply(*v);
            }
            pre.push(z);
            inputs.push(a);
        }
        unreachable!("the loop returns at the output layer")
    }

    fn backward(&self, tape: &MlpTape, upstream: &Matrix) -> Result<Vec<f64>> {
        let n = tape.inputs[0].rows();
        if upstream.rows() != n || upstream.cols() != self.config.dim {
            return Err(Error::Dimension(format!(
                "upstream gradient {}x{} for {n} outputs of dimension {}",
                upstream.rows(),
                upstream.cols(),
                self.config.dim
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let x = &tape.inputs[l];
            {
                let (gw, gb) = grads[layer.w..layer.b + layer.out].split_at_mut(layer.inp * layer.out);
                for i in 0..n {
                    let gi = g.row(i);
                    for (r, xr) in x.row(i).iter().enumerate() {
                        for (o, gv) in gw[r * layer.out..(r + 1) * layer.out].iter_mut().zip(gi) {
                            *o += xr * gv;
                        }
                    }
                    for (o, gv) in gb.iter_mut().zip(gi) {
                        *o += gv;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[layer.w..layer.b];
            let z = &tape.pre[l - 1];
            let mut g_in = Matrix::zeros(n, layer.inp);
            for i in 0..n {
                let gi = g.row(i);
                for (r, (o, zr)) in g_in.row_mut(i).iter_mut().zip(z.row(i)).enumerate() {
                    let row = &w[r * layer.out..(r + 1) * layer.out];
                    let s: f64 = row.iter().zip(gi).map(|(a, b)| a * b).sum();
                    *o = s * self.config.activation.derivative(*zr);
                }
            }
            g = g_in;
        }
        Ok(grads)
    }
}
