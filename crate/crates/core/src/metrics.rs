//! Exact empirical 2-Wasserstein distance, model evaluation and the CSV leaderboard.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupler;
use crate::datasets::{generate, DatasetSpec};
use crate::field::VectorField;
use crate::linalg::{mean_and_stderr, squared_distance, Matrix};
use crate::ode::{batch_curvature, integrate, nfe_of, SolverConfig, SolverKind};
use crate::ot::{solve_assignment, CostMatrix};
use crate::rng::TrainRng;
use crate::{Error, Result};

/// `sqrt(min over bijections of the mean squared distance)` between equal-size sets.
pub fn wasserstein2(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "sample sets of shape {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::InvalidParameter("empty sample sets".into()));
    }
    let costs = CostMatrix::from_fn(a.rows(), b.rows(), |i, j| squared_distance(a.row(i), b.row(j)))?;
    let (_, total) = solve_assignment(&costs)?;
    Ok((total / a.rows() as f64).max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub w2: f64,
    pub mean_curvature: f64,
    pub nfe: usize,
    pub induced_cost: f64,
    pub sample_count: usize,
    pub ode_failures: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain numbers")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_eval: usize,
    pub solver: SolverConfig,
    /// Fixed-step grid used for the curvature metric.
    #[serde(default = "default_curvature_solver")]
    pub curvature_solver: SolverConfig,
    /// Trajectories used for curvature (all evaluation draws when unset).
    #[serde(default)]
    pub curvature_samples: Option<usize>,
}

fn default_curvature_solver() -> SolverConfig {
    SolverConfig::euler(100)
}

impl EvalConfig {
    pub fn new(n_eval: usize, solver: SolverConfig) -> Self {
        Self { n_eval, solver, curvature_solver: default_curvature_solver(), curvature_samples: None }
    }
}

/// Fraction of failed integrations tolerated before evaluation errors out.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Evaluates on `n_eval` fresh noise draws against fresh target samples.
pub fn evaluate_model<F: VectorField + ?Sized>(
    field: &F,
    target: &DatasetSpec,
    cfg: &EvalConfig,
    rng: &mut TrainRng,
) -> Result<EvalReport> {
    let mut noise = Matrix::zeros(cfg.n_eval, field.dim());
    for v in noise.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    let targets = generate(&target.clone().with_n(cfg.n_eval).with_seed(rng.random()))?;
    evaluate_on(field, &noise, &targets, cfg)
}

/// Evaluates from the given noise rows against the given target samples.
pub fn evaluate_on<F: VectorField + ?Sized>(
    field: &F,
    noise: &Matrix,
    targets: &Matrix,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if noise.rows() == 0 || noise.rows() != targets.rows() {
        return Err(Error::Dimension(format!("{} noise rows vs {} targets", noise.rows(), targets.rows())));
    }
    let n = noise.rows();
    let mut generated = Vec::with_capacity(n * noise.cols());
    let mut kept = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    let mut failures = 0;
    let mut nfe_total = 0;
    for (i, z) in noise.iter_rows().enumerate() {
        match integrate(field, z, &cfg.solver) {
            Ok(traj) => {
                nfe_total += traj.nfe;
                costs.push(squared_distance(traj.final_state(), z));
                generated.extend_from_slice(traj.final_state());
                kept.push(i);
            }
            Err(Error::Integration { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * n as f64 {
        return Err(Error::Integration {
            t: f64::NAN,
            reason: format!("{failures} of {n} integrations failed"),
        });
    }
    let generated = Matrix::from_vec(kept.len(), noise.cols(), generated)?;
    let w2 = wasserstein2(&generated, &targets.select_rows(&(0..kept.len()).collect::<Vec<_>>()))?;
    let nfe = match cfg.solver.kind {
        SolverKind::Dopri5 => (nfe_total as f64 / kept.len() as f64).round() as usize,
        _ => nfe_of(&cfg.solver)?,
    };
    let m = cfg.curvature_samples.unwrap_or(n).min(n);
    let rows: Vec<usize> = (0..m).collect();
    let curvature = batch_curvature(field, &noise.select_rows(&rows), &cfg.curvature_solver)?;
    Ok(EvalReport {
        w2,
        mean_curvature: curvature.mean,
        nfe,
        induced_cost: mean_and_stderr(&costs).0,
        sample_count: kept.len(),
        ode_failures: failures,
    })
}

/// Monte-Carlo estimate `(mean, stderr)` of the squared pair distance under a
/// coupler's current coupling, without modifying it.
///
/// Persistent couplers draw a data index and a cache level uniformly and use
/// the stored partner; minibatch OT is estimated on whole batches of size `m`
/// (the standard error uses batch means); the others draw single pairs.
pub fn coupling_cost(coupler: &Coupler, data: &Matrix, m: usize, draws: usize, rng: &mut TrainRng) -> Result<(f64, f64)> {
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be >= 1".into()));
    }
    match coupler {
        Coupler::Loom(store) | Coupler::PhiMix { store, .. } => {
            let mut z = vec![0.0; store.dim()];
            let mut values = Vec::with_capacity(draws);
            for _ in 0..draws {
                let i = rng.random_range(0..data.rows());
                let cache = rng.random_range(0..store.caches());
                store.fill_noise(store.assigned_ref(i, cache)?, &mut z)?;
                values.push(squared_distance(data.row(i), &z));
            }
            Ok(mean_and_stderr(&values))
        }
        Coupler::MinibatchOt => {
            let batches = draws.div_ceil(m.max(1));
            let mut means = Vec::with_capacity(batches);
            let mut local = Coupler::MinibatchOt;
            for _ in 0..batches {
                means.push(local.next_batch(data, m, rng)?.mean_squared_pair_cost());
            }
            Ok(mean_and_stderr(&means))
        }
        Coupler::Independent | Coupler::Paired(_) => {
            let mut local = coupler.clone();
            let b = local.next_batch(data, draws, rng)?;
            let values: Vec<f64> =
                b.data.iter_rows().zip(b.noise.iter_rows()).map(|(x, z)| squared_distance(x, z)).collect();
            Ok(mean_and_stderr(&values))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub strategy: String,
    pub caches: usize,
    pub m: usize,
    pub solver: String,
    pub nfe: usize,
    pub w2: f64,
    pub mean_curvature: f64,
    pub induced_cost: f64,
    pub seed: u64,
}

pub const LEADERBOARD_HEADER: &str = "strategy,caches,m,solver,nfe,w2,mean_curvature,induced_cost,seed";

impl LeaderboardRow {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            self.strategy,
            self.caches,
            self.m,
            self.solver,
            self.nfe,
            self.w2,
            self.mean_curvature,
            self.induced_cost,
            self.seed
        )
    }
}

/// Appends rows to a leaderboard file, writing the header when the file is new or empty.
pub fn append_leaderboard(path: &std::path::Path, rows: &[LeaderboardRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{LEADERBOARD_HEADER}")?;
    }
    for r in rows {
        r.write(&mut f)?;
    }
    Ok(())
}
