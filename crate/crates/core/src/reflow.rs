//! Harvesting `(z, g(z))` pairs from a trained field and retraining on that fixed coupling.
//!
//! Pair file: `LOOMRF01` | n (u64) | d (u64) | noise (n x d f64) | generated (n x d f64), little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::coupling::Coupler;
use crate::field::VectorField;
use crate::linalg::{mean_and_stderr, squared_distance, Matrix};
use crate::model::{train, Mlp, MlpConfig, TrainConfig, TrainingLog};
use crate::ode::{integrate, SolverConfig};
use crate::rng::TrainRng;
use crate::{Error, Result};

pub const PAIRS_MAGIC: &[u8; 8] = b"LOOMRF01";

#[derive(Clone, Debug, PartialEq)]
pub struct ReflowPairs {
    pub noise: Matrix,
    pub generated: Matrix,
    pub source: String,
    /// Solver used for generation, when known.
    pub solver: Option<SolverConfig>,
    /// Draws whose integration failed and were left out.
    pub dropped: usize,
}

/// Dopri5 at tolerance 1e-7.
pub fn default_harvest_solver() -> SolverConfig {
    SolverConfig::dopri5(1e-7, 1e-7)
}

/// Integrates `n_pairs` fresh noise draws to `t = 1`; failed draws are dropped and counted.
pub fn harvest_pairs<F: VectorField + ?Sized>(
    field: &F,
    n_pairs: usize,
    solver: &SolverConfig,
    source: &str,
    rng: &mut TrainRng,
) -> Result<ReflowPairs> {
    let d = field.dim();
    let mut noise = Vec::with_capacity(n_pairs * d);
    let mut generated = Vec::with_capacity(n_pairs * d);
    let mut z = vec![0.0; d];
    let mut dropped = 0;
    for _ in 0..n_pairs {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match integrate(field, &z, solver) {
            Ok(traj) => {
                noise.extend_from_slice(&z);
                generated.extend_from_slice(traj.final_state());
            }
            Err(Error::Integration { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let kept = n_pairs - dropped;
    Ok(ReflowPairs {
        noise: Matrix::from_vec(kept, d, noise)?,
        generated: Matrix::from_vec(kept, d, generated)?,
        source: source.to_string(),
        solver: Some(*solver),
        dropped,
    })
}

/// Outcome of comparing the harvested coupling cost against the first-stage coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReflowCheck {
    pub pair_cost: f64,
    pub pair_stderr: f64,
    pub training_cost: f64,
    pub training_stderr: f64,
    /// `training_cost + k * sqrt(pair_se^2 + training_se^2)`.
    pub bound: f64,
    pub holds: bool,
}

impl ReflowPairs {
    pub fn len(&self) -> usize {
        self.noise.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.noise.cols()
    }

    /// `(mean, stderr)` of `||g(z) - z||^2` over the pairs.
    pub fn pair_cost(&self) -> (f64, f64) {
        let values: Vec<f64> = self
            .noise
            .iter_rows()
            .zip(self.generated.iter_rows())
            .map(|(z, x)| squared_distance(x, z))
            .collect();
        mean_and_stderr(&values)
    }

    /// Checks the pair cost against a Monte-Carlo estimate of the first-stage coupling cost.
    pub fn check_against(&self, training_cost: f64, training_stderr: f64, k: f64) -> ReflowCheck {
        let (pair_cost, pair_stderr) = self.pair_cost();
        let bound = training_cost + k * (pair_stderr.powi(2) + training_stderr.powi(2)).sqrt();
        ReflowCheck {
            pair_cost,
            pair_stderr,
            training_cost,
            training_stderr,
            bound,
            holds: pair_cost <= bound,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PAIRS_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for v in self.noise.as_slice().iter().chain(self.generated.as_slice()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 24 || &bytes[..8] != PAIRS_MAGIC {
            return Err(Error::Format("not a reflow pair file (bad magic or header)".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8-byte slice"));
        let (n, d) = (word(8), word(16));
        let expected = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(16))
            .and_then(|c| c.checked_add(24))
            .ok_or_else(|| Error::Format(format!("implausible sizes n = {n}, d = {d}")))?;
        if bytes.len() as u64 != expected {
            return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let (n, d) = (n as usize, d as usize);
        let floats: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (noise, generated) = floats.split_at(n * d);
        let generated = Matrix::from_vec(n, d, generated.to_vec())?;
        if !generated.is_finite() {
            return Err(Error::Format("non-finite generated sample".into()));
        }
        Ok(Self {
            noise: Matrix::from_vec(n, d, noise.to_vec())?,
            generated,
            source: "file".into(),
            solver: None,
            dropped: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Trains a freshly initialised field on the fixed coupling `noise[i] <-> generated[i]`.
pub fn train_reflow(
    pairs: &ReflowPairs,
    model: MlpConfig,
    cfg: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<(Mlp, TrainingLog)> {
    let mut field = Mlp::new(model, rng)?;
    let log = train_reflow_from(&mut field, pairs, cfg, rng)?;
    Ok((field, log))
}

/// As [`train_reflow`] but continues from existing weights.
pub fn train_reflow_from(field: &mut Mlp, pairs: &ReflowPairs, cfg: &TrainConfig, rng: &mut TrainRng) -> Result<TrainingLog> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no reflow pairs".into()));
    }
    let mut coupler = Coupler::Paired(pairs.noise.clone());
    train(field, &mut coupler, &pairs.generated, cfg, rng)
}
