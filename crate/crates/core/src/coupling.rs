//! Coupling strategies that pair data with noise for a training step.
//!
//! * independent: data sampled with replacement, fresh noise.
//! * minibatch OT: as independent, then noise re-paired by an exact
//!   assignment inside the batch; nothing is kept.
//! * LOOM: a persistent assignment per cache level. Each batch takes `m`
//!   distinct data points and their currently assigned noise, solves the
//!   local assignment and writes the local permutation back, so the global
//!   matching cost never increases.
//! * phi-mix: per element, the assigned noise with probability `phi`,
//!   fresh noise otherwise. Fresh draws never touch the caches.

use std::fmt;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{distance, Matrix};
use crate::noise_store::{NoiseRef, NoiseStore};
use crate::ot::{matching_cost, solve_assignment, Assignment, CostMatrix};
use crate::rng::TrainRng;
use crate::{Error, Result};

/// A set of noise slots per cache level together with the assignments pairing them to data.
pub trait NoisePool {
    fn len(&self) -> usize;
    fn caches(&self) -> usize;
    fn dim(&self) -> usize;
    fn assignment(&self, cache: usize) -> Result<&Assignment>;
    fn fill_noise(&self, r: NoiseRef, out: &mut [f64]) -> Result<()>;
    fn swap_slots(&mut self, cache: usize, i: usize, j: usize) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NoisePool for NoiseStore {
    fn len(&self) -> usize {
        self.n()
    }
    fn caches(&self) -> usize {
        NoiseStore::caches(self)
    }
    fn dim(&self) -> usize {
        NoiseStore::dim(self)
    }
    fn assignment(&self, cache: usize) -> Result<&Assignment> {
        NoiseStore::assignment(self, cache)
    }
    fn fill_noise(&self, r: NoiseRef, out: &mut [f64]) -> Result<()> {
        NoiseStore::fill_noise(self, r, out)
    }
    fn swap_slots(&mut self, cache: usize, i: usize, j: usize) -> Result<()> {
        NoiseStore::swap_slots(self, cache, i, j)
    }
}

/// Explicit noise vectors with a single assignment, for hand-built instances.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedNoise {
    pub noise: Matrix,
    pub assignment: Assignment,
}

impl FixedNoise {
    pub fn new(noise: Matrix, assignment: Assignment) -> Result<Self> {
        if noise.rows() != assignment.len() {
            return Err(Error::Dimension(format!(
                "{} noise rows for an assignment of length {}",
                noise.rows(),
                assignment.len()
            )));
        }
        Ok(Self { noise, assignment })
    }
}

impl NoisePool for FixedNoise {
    fn len(&self) -> usize {
        self.noise.rows()
    }
    fn caches(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        self.noise.cols()
    }
    fn assignment(&self, cache: usize) -> Result<&Assignment> {
        if cache != 0 {
            return Err(Error::OutOfRange(format!("cache {cache} of 1")));
        }
        Ok(&self.assignment)
    }
    fn fill_noise(&self, r: NoiseRef, out: &mut [f64]) -> Result<()> {
        if r.cache != 0 || r.slot >= self.noise.rows() {
            return Err(Error::OutOfRange(format!("noise ref {r:?}")));
        }
        out.copy_from_slice(self.noise.row(r.slot));
        Ok(())
    }
    fn swap_slots(&mut self, cache: usize, i: usize, j: usize) -> Result<()> {
        let n = self.noise.rows();
        if cache != 0 || i >= n || j >= n {
            return Err(Error::OutOfRange(format!("swap ({i}, {j}) at cache {cache}")));
        }
        self.assignment.swap(i, j);
        Ok(())
    }
}

/// Sum over cache levels of the matching cost of each level's assignment.
pub fn global_matching_cost<P: NoisePool + ?Sized>(pool: &P, data: &Matrix) -> Result<f64> {
    if data.rows() != pool.len() {
        return Err(Error::Dimension(format!(
            "{} data points for a pool of {}",
            data.rows(),
            pool.len()
        )));
    }
    let mut total = 0.0;
    let mut z = vec![0.0; pool.dim()];
    for cache in 0..pool.caches() {
        let tau = pool.assignment(cache)?;
        let mut level = 0.0;
        for (i, x) in data.iter_rows().enumerate() {
            pool.fill_noise(NoiseRef { slot: tau.get(i), cache }, &mut z)?;
            level += distance(x, &z);
        }
        total += level;
    }
    Ok(total)
}

/// Matrix of the noise of one level in slot order (row `j` = slot `j`).
pub fn pool_noise_matrix<P: NoisePool + ?Sized>(pool: &P, cache: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(pool.len(), pool.dim());
    for slot in 0..pool.len() {
        pool.fill_noise(NoiseRef { slot, cache }, m.row_mut(slot))?;
    }
    Ok(m)
}

/// Matching cost of one level computed through the assignment module.
pub fn level_matching_cost<P: NoisePool + ?Sized>(pool: &P, data: &Matrix, cache: usize) -> Result<f64> {
    matching_cost(pool.assignment(cache)?, data, &pool_noise_matrix(pool, cache)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledBatch {
    pub data_indices: Vec<usize>,
    pub data: Matrix,
    pub noise: Matrix,
    pub noise_refs: Vec<Option<NoiseRef>>,
    pub reassignment_count: usize,
    /// Sum of `||data[i] - noise[i]||` over the returned pairs.
    pub local_ot_cost: f64,
}

impl CoupledBatch {
    pub fn len(&self) -> usize {
        self.data_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data_indices.is_empty()
    }

    pub fn mean_squared_pair_cost(&self) -> f64 {
        let total: f64 = self
            .data
            .iter_rows()
            .zip(self.noise.iter_rows())
            .map(|(x, z)| crate::linalg::squared_distance(x, z))
            .sum();
        total / self.len() as f64
    }

    /// Appends another batch; counts and costs add up.
    pub fn extend(&mut self, other: CoupledBatch) -> Result<()> {
        if other.data.cols() != self.data.cols() || other.noise.cols() != self.noise.cols() {
            return Err(Error::Dimension(format!(
                "cannot append a batch of width {} to width {}",
                other.data.cols(),
                self.data.cols()
            )));
        }
        let rows = self.len() + other.len();
        let cols = self.data.cols();
        let mut data = std::mem::replace(&mut self.data, Matrix::zeros(0, cols)).into_vec();
        data.extend_from_slice(other.data.as_slice());
        let mut noise = std::mem::replace(&mut self.noise, Matrix::zeros(0, cols)).into_vec();
        noise.extend_from_slice(other.noise.as_slice());
        self.data = Matrix::from_vec(rows, cols, data)?;
        self.noise = Matrix::from_vec(rows, cols, noise)?;
        self.data_indices.extend(other.data_indices);
        self.noise_refs.extend(other.noise_refs);
        self.reassignment_count += other.reassignment_count;
        self.local_ot_cost += other.local_ot_cost;
        Ok(())
    }
}

fn pair_cost(data: &Matrix, noise: &Matrix) -> f64 {
    data.iter_rows().zip(noise.iter_rows()).map(|(x, z)| distance(x, z)).sum()
}

fn check_source(data: &Matrix, m: usize) -> Result<()> {
    if data.rows() == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    Ok(())
}

fn fresh_noise(rows: usize, dim: usize, rng: &mut TrainRng) -> Matrix {
    let mut z = Matrix::zeros(rows, dim);
    for v in z.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    z
}

/// `m` data points with replacement, `m` independent standard-normal noise vectors.
pub fn independent_batch(data: &Matrix, m: usize, rng: &mut TrainRng) -> Result<CoupledBatch> {
    check_source(data, m)?;
    let data_indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..data.rows())).collect();
    let x = data.select_rows(&data_indices);
    let z = fresh_noise(m, data.cols(), rng);
    let local_ot_cost = pair_cost(&x, &z);
    Ok(CoupledBatch {
        data_indices,
        data: x,
        noise: z,
        noise_refs: vec![None; m],
        reassignment_count: 0,
        local_ot_cost,
    })
}

/// Independent draw re-paired by the exact assignment within the batch.
/// `reassignment_count` is the number of data points whose partner changed.
pub fn minibatch_ot_batch(data: &Matrix, m: usize, rng: &mut TrainRng) -> Result<CoupledBatch> {
    let mut batch = independent_batch(data, m, rng)?;
    let costs = crate::ot::build_cost_matrix(&batch.data, &batch.noise)?;
    let (sigma, total) = solve_assignment(&costs)?;
    batch.noise = batch.noise.select_rows(sigma.as_slice());
    batch.reassignment_count = sigma.as_slice().iter().enumerate().filter(|(p, &q)| *p != q).count();
    batch.local_ot_cost = total;
    Ok(batch)
}

/// Outcome of re-solving the assignment among a subset of data points.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub reassigned: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Noise paired with each subset member after the update, in subset order.
    pub noise: Matrix,
    pub refs: Vec<NoiseRef>,
}

/// Optimally re-pairs `indices` with the noise slots they currently hold at
/// `cache` and writes the result back with slot swaps.
///
/// The new pairing is accepted only when its cost, summed in subset order,
/// is strictly below the current one; otherwise the pool is left untouched.
pub fn local_reassign<P: NoisePool + ?Sized>(
    pool: &mut P,
    data: &Matrix,
    cache: usize,
    indices: &[usize],
) -> Result<LocalUpdate> {
    let m = indices.len();
    let dim = pool.dim();
    if data.cols() != dim {
        return Err(Error::Dimension(format!(
            "data dimension {} vs noise dimension {dim}",
            data.cols()
        )));
    }
    let tau = pool.assignment(cache)?;
    let mut slots = Vec::with_capacity(m);
    let mut noise = Matrix::zeros(m, dim);
    for (p, &i) in indices.iter().enumerate() {
        if i >= tau.len() {
            return Err(Error::OutOfRange(format!("data index {i} for n = {}", tau.len())));
        }
        let slot = tau.get(i);
        slots.push(slot);
        pool.fill_noise(NoiseRef { slot, cache }, noise.row_mut(p))?;
    }
    let costs = CostMatrix::from_fn(m, m, |p, q| distance(data.row(indices[p]), noise.row(q)))?;
    let cost_before: f64 = (0..m).map(|p| costs.get(p, p)).sum();
    let (sigma, cost_after) = solve_assignment(&costs)?;

    if cost_after >= cost_before {
        return Ok(LocalUpdate {
            reassigned: 0,
            cost_before,
            cost_after: cost_before,
            noise,
            refs: slots.into_iter().map(|slot| NoiseRef { slot, cache }).collect(),
        });
    }

    // Realise position p <- old slot of sigma(p) as transpositions on tau.
    let target: Vec<usize> = sigma.as_slice().iter().map(|&q| slots[q]).collect();
    let mut current = slots.clone();
    let mut where_is: std::collections::HashMap<usize, usize> =
        current.iter().enumerate().map(|(p, &s)| (s, p)).collect();
    for p in 0..m {
        if current[p] == target[p] {
            continue;
        }
        let q = where_is[&target[p]];
        pool.swap_slots(cache, indices[p], indices[q])?;
        current.swap(p, q);
        where_is.insert(current[p], p);
        where_is.insert(current[q], q);
    }
    let reassigned = sigma.as_slice().iter().enumerate().filter(|(p, &q)| *p != q).count();
    Ok(LocalUpdate {
        reassigned,
        cost_before,
        cost_after,
        noise: noise.select_rows(sigma.as_slice()),
        refs: target.into_iter().map(|slot| NoiseRef { slot, cache }).collect(),
    })
}

fn sample_distinct(n: usize, m: usize, rng: &mut TrainRng) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::InvalidParameter(format!(
            "batch of {m} distinct points from a dataset of {n}"
        )));
    }
    Ok(index::sample(rng, n, m).into_vec())
}

fn check_pool<P: NoisePool + ?Sized>(pool: &P, data: &Matrix) -> Result<()> {
    if pool.len() != data.rows() || pool.dim() != data.cols() {
        return Err(Error::Dimension(format!(
            "pool of {} x {} noise for {} x {} data",
            pool.len(),
            pool.dim(),
            data.rows(),
            data.cols()
        )));
    }
    Ok(())
}

/// One LOOM step: sample, re-solve locally, persist, return the re-paired batch.
pub fn loom_batch<P: NoisePool + ?Sized>(
    pool: &mut P,
    data: &Matrix,
    m: usize,
    rng: &mut TrainRng,
) -> Result<CoupledBatch> {
    check_source(data, m)?;
    check_pool(pool, data)?;
    let data_indices = sample_distinct(data.rows(), m, rng)?;
    let cache = rng.random_range(0..pool.caches());
    let update = local_reassign(pool, data, cache, &data_indices)?;
    Ok(CoupledBatch {
        data: data.select_rows(&data_indices),
        data_indices,
        noise: update.noise,
        noise_refs: update.refs.into_iter().map(Some).collect(),
        reassignment_count: update.reassigned,
        local_ot_cost: update.cost_after,
    })
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi = {phi} outside [0, 1]")));
    }
    Ok(())
}

/// Per element, assigned noise with probability `phi` (updated with the
/// LOOM rule among those elements only), fresh noise otherwise.
pub fn phi_mix_batch<P: NoisePool + ?Sized>(
    pool: &mut P,
    data: &Matrix,
    m: usize,
    phi: f64,
    rng: &mut TrainRng,
) -> Result<CoupledBatch> {
    check_phi(phi)?;
    if phi == 1.0 {
        return loom_batch(pool, data, m, rng);
    }
    if phi == 0.0 {
        return independent_batch(data, m, rng);
    }
    check_source(data, m)?;
    check_pool(pool, data)?;
    let data_indices = sample_distinct(data.rows(), m, rng)?;
    let cache = rng.random_range(0..pool.caches());
    let assigned: Vec<bool> = (0..m).map(|_| rng.random_bool(phi)).collect();
    let members: Vec<usize> = (0..m).filter(|&p| assigned[p]).collect();
    let member_indices: Vec<usize> = members.iter().map(|&p| data_indices[p]).collect();
    let update = local_reassign(pool, data, cache, &member_indices)?;

    let dim = data.cols();
    let mut noise = Matrix::zeros(m, dim);
    let mut noise_refs = vec![None; m];
    for (slot_pos, &p) in members.iter().enumerate() {
        noise.row_mut(p).copy_from_slice(update.noise.row(slot_pos));
        noise_refs[p] = Some(update.refs[slot_pos]);
    }
    for p in (0..m).filter(|&p| !assigned[p]) {
        for v in noise.row_mut(p) {
            *v = rng.sample(StandardNormal);
        }
    }
    let x = data.select_rows(&data_indices);
    let local_ot_cost = pair_cost(&x, &noise);
    Ok(CoupledBatch {
        data_indices,
        data: x,
        noise,
        noise_refs,
        reassignment_count: update.reassigned,
        local_ot_cost,
    })
}

/// Samples `m` pair indices with replacement from a fixed deterministic coupling.
pub fn paired_batch(data: &Matrix, noise: &Matrix, m: usize, rng: &mut TrainRng) -> Result<CoupledBatch> {
    check_source(data, m)?;
    if noise.rows() != data.rows() || noise.cols() != data.cols() {
        return Err(Error::Dimension("paired coupling needs equally shaped sets".into()));
    }
    let data_indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..data.rows())).collect();
    let x = data.select_rows(&data_indices);
    let z = noise.select_rows(&data_indices);
    let local_ot_cost = pair_cost(&x, &z);
    Ok(CoupledBatch {
        data_indices,
        data: x,
        noise: z,
        noise_refs: vec![None; m],
        reassignment_count: 0,
        local_ot_cost,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingStrategy {
    Independent,
    MinibatchOt,
    Loom,
    PhiMix { phi: f64 },
}

impl CouplingStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            CouplingStrategy::PhiMix { phi } => check_phi(*phi),
            _ => Ok(()),
        }
    }

    pub fn is_persistent(&self) -> bool {
        matches!(self, CouplingStrategy::Loom | CouplingStrategy::PhiMix { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CouplingStrategy::Independent => "independent",
            CouplingStrategy::MinibatchOt => "minibatch_ot",
            CouplingStrategy::Loom => "loom",
            CouplingStrategy::PhiMix { .. } => "phi_mix",
        }
    }
}

impl fmt::Display for CouplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingStrategy::PhiMix { phi } => write!(f, "phi_mix({phi})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A coupling strategy together with whatever state it carries between batches.
#[derive(Clone, Debug)]
pub enum Coupler {
    Independent,
    MinibatchOt,
    Loom(NoiseStore),
    PhiMix { phi: f64, store: NoiseStore },
    /// Fixed pairs `data[i] <-> noise[i]`, used for reflow.
    Paired(Matrix),
}

impl Coupler {
    /// Builds the coupler; persistent strategies get a fresh store with `caches` levels.
    pub fn new(strategy: CouplingStrategy, data: &Matrix, caches: usize, store_seed: u64) -> Result<Self> {
        strategy.validate()?;
        Ok(match strategy {
            CouplingStrategy::Independent => Coupler::Independent,
            CouplingStrategy::MinibatchOt => Coupler::MinibatchOt,
            CouplingStrategy::Loom => Coupler::Loom(NoiseStore::new(data.rows(), caches, data.cols(), store_seed)?),
            CouplingStrategy::PhiMix { phi } => Coupler::PhiMix {
                phi,
                store: NoiseStore::new(data.rows(), caches, data.cols(), store_seed)?,
            },
        })
    }

    pub fn next_batch(&mut self, data: &Matrix, m: usize, rng: &mut TrainRng) -> Result<CoupledBatch> {
        match self {
            Coupler::Independent => independent_batch(data, m, rng),
            Coupler::MinibatchOt => minibatch_ot_batch(data, m, rng),
            Coupler::Loom(store) => loom_batch(store, data, m, rng),
            Coupler::PhiMix { phi, store } => phi_mix_batch(store, data, m, *phi, rng),
            Coupler::Paired(noise) => paired_batch(data, noise, m, rng),
        }
    }

    pub fn store(&self) -> Option<&NoiseStore> {
        match self {
            Coupler::Loom(store) | Coupler::PhiMix { store, .. } => Some(store),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Coupler::Independent => "independent",
            Coupler::MinibatchOt => "minibatch_ot",
            Coupler::Loom(_) => "loom",
            Coupler::PhiMix { .. } => "phi_mix",
            Coupler::Paired(_) => "paired",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryConfig {
    /// Consecutive zero-reassignment batches required to stop.
    pub patience: usize,
    /// Hard cap on the number of batches.
    pub max_iters: usize,
    /// Recompute the global cost every this many batches (0 disables).
    pub global_cost_every: usize,
}

impl StationaryConfig {
    /// Patience `10 * ceil(n / m)`.
    pub fn for_sizes(n: usize, m: usize) -> Self {
        let patience = 10 * n.div_ceil(m.max(1));
        Self {
            patience,
            max_iters: 1_000_000usize.max(100 * patience),
            global_cost_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub iter: usize,
    pub reassignments: usize,
    pub local_ot_cost: f64,
    pub global_cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub stationary: bool,
    pub initial_global_cost: f64,
    pub final_global_cost: f64,
    pub records: Vec<ConvergenceRecord>,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,reassignments,local_ot_cost,global_cost")?;
        for r in &self.records {
            let g = r.global_cost.map(|g| g.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.iter, r.reassignments, r.local_ot_cost, g)?;
        }
        Ok(())
    }
}

/// Runs LOOM assignment updates without training until `patience`
/// consecutive batches leave every assignment unchanged.
pub fn run_until_stationary<P: NoisePool + ?Sized>(
    pool: &mut P,
    data: &Matrix,
    m: usize,
    cfg: &StationaryConfig,
    rng: &mut TrainRng,
) -> Result<ConvergenceReport> {
    if cfg.patience == 0 {
        return Err(Error::InvalidParameter("patience must be >= 1".into()));
    }
    check_source(data, m)?;
    check_pool(pool, data)?;
    let initial_global_cost = global_matching_cost(pool, data)?;
    let mut records = Vec::new();
    let mut quiet = 0;
    let mut iter = 0;
    while quiet < cfg.patience && iter < cfg.max_iters {
        iter += 1;
        let indices = sample_distinct(data.rows(), m, rng)?;
        let cache = rng.random_range(0..pool.caches());
        let update = local_reassign(pool, data, cache, &indices)?;
        quiet = if update.reassigned == 0 { quiet + 1 } else { 0 };
        let global_cost = if cfg.global_cost_every > 0 && iter % cfg.global_cost_every == 0 {
            Some(global_matching_cost(pool, data)?)
        } else {
            None
        };
        records.push(ConvergenceRecord {
            iter,
            reassignments: update.reassigned,
            local_ot_cost: update.cost_after,
            global_cost,
        });
    }
    Ok(ConvergenceReport {
        iterations: iter,
        stationary: quiet >= cfg.patience,
        initial_global_cost,
        final_global_cost: global_matching_cost(pool, data)?,
        records,
    })
}
