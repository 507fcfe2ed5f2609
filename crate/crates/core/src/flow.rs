//! The conditional flow matching interpolant and loss, and the closed-form
//! optimal field between two standard Gaussians.
//!
//! Time runs from `t = 0` (noise) to `t = 1` (data): samples are produced by
//! integrating `dy/dt = v(y, t)` forward from `y(0) = z`, and the regression
//! target along `y = t x + (1 - t) z + eps` is `x - z`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coupling::CoupledBatch;
use crate::field::VectorField;
use crate::linalg::{squared_distance, Matrix};
use crate::model::Trainable;
use crate::ode::{integrate, SolverConfig};
use crate::rng::TrainRng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolantSample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub t: f64,
    pub eps: Vec<f64>,
    pub y: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfmConfig {
    pub sigma: f64,
    /// Draw `t_i = (i + u_i) / B` instead of independent uniforms.
    pub stratified_t: bool,
}

impl Default for CfmConfig {
    fn default() -> Self {
        Self { sigma: 1e-7, stratified_t: false }
    }
}

impl CfmConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be >= 0", self.sigma)));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be >= 0")));
    }
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(format!("sigma = {sigma}: {e}")))
}

pub fn make_interpolant(x: &[f64], z: &[f64], t: f64, sigma: f64, rng: &mut TrainRng) -> Result<InterpolantSample> {
    if x.len() != z.len() {
        return Err(Error::Dimension(format!("x has {} entries, z has {}", x.len(), z.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("t = {t} outside [0, 1]")));
    }
    let dist = normal(sigma)?;
    let eps: Vec<f64> = (0..x.len()).map(|_| dist.sample(rng)).collect();
    let y = x
        .iter()
        .zip(z)
        .zip(&eps)
        .map(|((a, b), e)| t * a + (1.0 - t) * b + e)
        .collect();
    let target = x.iter().zip(z).map(|(a, b)| a - b).collect();
    Ok(InterpolantSample { x: x.to_vec(), z: z.to_vec(), t, eps, y, target })
}

/// Interpolant points, times and targets for a whole batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CfmInputs {
    pub y: Matrix,
    pub t: Vec<f64>,
    pub target: Matrix,
}

pub fn sample_cfm_inputs(batch: &CoupledBatch, cfg: &CfmConfig, rng: &mut TrainRng) -> Result<CfmInputs> {
    cfg.validate()?;
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let d = batch.data.cols();
    let dist = normal(cfg.sigma)?;
    let mut y = Matrix::zeros(b, d);
    let mut target = Matrix::zeros(b, d);
    let mut ts = Vec::with_capacity(b);
    for i in 0..b {
        let u: f64 = rng.random();
        let t = if cfg.stratified_t { (i as f64 + u) / b as f64 } else { u };
        ts.push(t);
        let (x, z) = (batch.data.row(i), batch.noise.row(i));
        for (j, (yj, tj)) in y.row_mut(i).iter_mut().zip(target.row_mut(i)).enumerate() {
            *yj = t * x[j] + (1.0 - t) * z[j] + dist.sample(rng);
            *tj = x[j] - z[j];
        }
    }
    Ok(CfmInputs { y, t: ts, target })
}

/// Mean squared regression error over the batch and its gradient with respect to the parameters.
pub fn cfm_loss<M: Trainable>(
    model: &M,
    batch: &CoupledBatch,
    cfg: &CfmConfig,
    rng: &mut TrainRng,
) -> Result<(f64, Vec<f64>)> {
    let inputs = sample_cfm_inputs(batch, cfg, rng)?;
    cfm_loss_at(model, &inputs)
}

/// As [`cfm_loss`] with the interpolant already drawn.
pub fn cfm_loss_at<M: Trainable>(model: &M, inputs: &CfmInputs) -> Result<(f64, Vec<f64>)> {
    let (out, tape) = model.forward_batch(&inputs.y, &inputs.t)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("model output".into()));
    }
    let b = inputs.t.len() as f64;
    let mut upstream = Matrix::zeros(out.rows(), out.cols());
    let mut loss = 0.0;
    for i in 0..out.rows() {
        for ((u, v), r) in upstream.row_mut(i).iter_mut().zip(out.row(i)).zip(inputs.target.row(i)) {
            let diff = v - r;
            loss += diff * diff;
            *u = 2.0 * diff / b;
        }
    }
    let grads = model.backward(&tape, &upstream)?;
    Ok((loss / b, grads))
}

/// `s(t) = (2t - 1) / (sigma^2 + t^2 + (1 - t)^2)`.
pub fn gaussian_oracle_scale(t: f64, sigma: f64) -> f64 {
    (2.0 * t - 1.0) / (sigma * sigma + t * t + (1.0 - t) * (1.0 - t))
}

/// Optimal field for standard-normal noise and data under the independent coupling.
pub fn gaussian_oracle_field(y: &[f64], t: f64, sigma: f64) -> Vec<f64> {
    let s = gaussian_oracle_scale(t, sigma);
    y.iter().map(|v| s * v).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianOracle {
    pub dim: usize,
    pub sigma: f64,
}

impl VectorField for GaussianOracle {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let s = gaussian_oracle_scale(t, self.sigma);
        for (o, v) in out.iter_mut().zip(y) {
            *o = s * v;
        }
    }
}

/// Transport cost of the coupling `z -> g(z)` induced by integrating the field.
pub type ConvexCost = fn(&[f64], &[f64]) -> f64;

/// Mean and standard error of `cost(g(z), z)` over the rows of `noise`.
pub fn induced_coupling_cost_with_stderr<F: VectorField + ?Sized>(
    field: &F,
    noise: &Matrix,
    solver: &SolverConfig,
    cost: ConvexCost,
) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(noise.rows());
    for z in noise.iter_rows() {
        let traj = integrate(field, z, solver)?;
        values.push(cost(traj.final_state(), z));
    }
    Ok(crate::linalg::mean_and_stderr(&values))
}

pub fn induced_coupling_cost<F: VectorField + ?Sized>(
    field: &F,
    noise: &Matrix,
    solver: &SolverConfig,
    cost: ConvexCost,
) -> Result<f64> {
    induced_coupling_cost_with_stderr(field, noise, solver, cost).map(|(mean, _)| mean)
}

pub fn squared_cost(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b)
}
