//! Negative alternating cycles.
//!
//! For a matching `x_i -> z_{tau(i)}`, the cycle visiting data indices
//! `i_1, ..., i_k` uses the matched edges `(x_{i_p}, z_{tau(i_p)})` and the
//! swap edges `(z_{tau(i_p)}, x_{i_{p+1}})`. Its gain is the matched cost
//! minus the swap cost; applying it hands `z_{tau(i_p)}` to `x_{i_{p+1}}`.
//! A matching is optimal iff no cycle has positive gain.

use super::{solve_assignment, Assignment, CostMatrix};
use crate::linalg::{distance, Matrix};
use crate::{Error, Result};

/// Gains at or below this fraction of the subset's matched cost are treated as ties.
const GAIN_REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingCycle {
    pub data_indices: Vec<usize>,
    pub gain: f64,
}

impl AlternatingCycle {
    pub fn len(&self) -> usize {
        self.data_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data_indices.is_empty()
    }

    /// Recomputes the gain of visiting `data_indices` in order under `assignment`.
    pub fn gain_under(data_indices: &[usize], assignment: &Assignment, data: &Matrix, noise: &Matrix) -> f64 {
        let k = data_indices.len();
        let mut matched = 0.0;
        let mut swapped = 0.0;
        for p in 0..k {
            let i = data_indices[p];
            let next = data_indices[(p + 1) % k];
            let z = noise.row(assignment.get(i));
            matched += distance(data.row(i), z);
            swapped += distance(data.row(next), z);
        }
        matched - swapped
    }
}

/// Exhaustively searches every subset of at most `max_len` data indices for
/// an improving re-matching among the subset's assigned noise points.
///
/// A subset is reported only when its optimal re-matching is a single cycle
/// through all of its members, so every reported entry is a genuine
/// alternating cycle. A shortest negative cycle always has this property,
/// hence the result is empty exactly when no negative cycle of length
/// `<= max_len` exists. Cost grows as `C(n, max_len)`.
pub fn find_negative_cycles(
    assignment: &Assignment,
    data: &Matrix,
    noise: &Matrix,
    max_len: usize,
) -> Result<Vec<AlternatingCycle>> {
    let n = data.rows();
    if assignment.len() != n || noise.rows() != n {
        return Err(Error::Dimension(format!(
            "assignment of length {} for {} data and {} noise points",
            assignment.len(),
            n,
            noise.rows()
        )));
    }
    if !assignment.is_bijection() {
        return Err(Error::InvalidAssignment("not a bijection".into()));
    }
    if max_len > n {
        return Err(Error::InvalidParameter(format!(
            "max_len = {max_len} exceeds n = {n}"
        )));
    }

    let mut found = Vec::new();
    for size in 2..=max_len {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if let Some(cycle) = improving_cycle(&subset, assignment, data, noise)? {
                found.push(cycle);
            }
            if !next_combination(&mut subset, n) {
                break;
            }
        }
    }
    Ok(found)
}

fn improving_cycle(
    subset: &[usize],
    assignment: &Assignment,
    data: &Matrix,
    noise: &Matrix,
) -> Result<Option<AlternatingCycle>> {
    let k = subset.len();
    let local = CostMatrix::from_fn(k, k, |p, q| {
        distance(data.row(subset[p]), noise.row(assignment.get(subset[q])))
    })?;
    let current: f64 = (0..k).map(|p| local.get(p, p)).sum();
    let (sigma, best) = solve_assignment(&local)?;
    if current - best <= GAIN_REL_TOL * current.max(1.0) {
        return Ok(None);
    }
    // Position p receives the noise held by sigma[p], so sigma[p] precedes p.
    let mut next = vec![usize::MAX; k];
    for p in 0..k {
        next[sigma.get(p)] = p;
    }
    let mut order = Vec::with_capacity(k);
    let mut p = 0;
    loop {
        order.push(subset[p]);
        p = next[p];
        if p == 0 {
            break;
        }
    }
    if order.len() != k {
        return Ok(None);
    }
    let gain = AlternatingCycle::gain_under(&order, assignment, data, noise);
    Ok(Some(AlternatingCycle {
        data_indices: order,
        gain,
    }))
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Rotates noise slots along `cycle`: `x_{i_{p+1}}` takes `tau(i_p)`.
pub fn apply_cycle(assignment: &Assignment, cycle: &AlternatingCycle) -> Result<Assignment> {
    let n = assignment.len();
    let k = cycle.data_indices.len();
    if k < 2 {
        return Err(Error::InvalidParameter(format!("cycle of length {k}")));
    }
    if !(cycle.gain > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cycle gain {} is not positive",
            cycle.gain
        )));
    }
    let mut seen = vec![false; n];
    for &i in &cycle.data_indices {
        if i >= n {
            return Err(Error::OutOfRange(format!("cycle index {i} for n = {n}")));
        }
        if seen[i] {
            return Err(Error::InvalidParameter(format!("cycle repeats index {i}")));
        }
        seen[i] = true;
    }
    let mut out = assignment.clone();
    for p in 0..k {
        let from = cycle.data_indices[p];
        let to = cycle.data_indices[(p + 1) % k];
        out.set_unchecked(to, assignment.get(from));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{brute_force_assignment, build_cost_matrix, matching_cost};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let data = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::from_vec(n, 2, data).unwrap()
    }

    #[test]
    fn combinations_are_enumerated_once() {
        let mut c = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut c, 6) {
            count += 1;
        }
        assert_eq!(count, 20);
    }

    #[test]
    fn optimal_matching_has_no_negative_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let x = random_points(&mut rng, 6);
            let z = random_points(&mut rng, 6);
            let (opt, _) = brute_force_assignment(&build_cost_matrix(&x, &z).unwrap()).unwrap();
            for max_len in 0..=6 {
                assert!(find_negative_cycles(&opt, &x, &z, max_len).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn swapped_pair_is_detected_as_two_cycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_points(&mut rng, 6);
        let z = random_points(&mut rng, 6);
        let (opt, _) = brute_force_assignment(&build_cost_matrix(&x, &z).unwrap()).unwrap();
        let mut perturbed = opt.clone();
        perturbed.swap(1, 4);
        let cycles = find_negative_cycles(&perturbed, &x, &z, 2).unwrap();
        assert!(cycles.iter().any(|c| {
            let mut idx = c.data_indices.clone();
            idx.sort();
            idx == vec![1, 4]
        }));
    }

    #[test]
    fn two_cycle_swaps_slots() {
        let a = Assignment::from_mapping(vec![3, 1, 0, 2]).unwrap();
        let c = AlternatingCycle {
            data_indices: vec![0, 2],
            gain: 1.0,
        };
        assert_eq!(apply_cycle(&a, &c).unwrap().as_slice(), &[0, 1, 3, 2]);
    }

    #[test]
    fn applying_a_cycle_lowers_cost_by_its_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 100 {
            let n = 6;
            let x = random_points(&mut rng, n);
            let z = random_points(&mut rng, n);
            let tau = Assignment::identity(n);
            let before = matching_cost(&tau, &x, &z).unwrap();
            for cycle in find_negative_cycles(&tau, &x, &z, 3).unwrap() {
                assert!(cycle.gain > 0.0);
                let after = matching_cost(&apply_cycle(&tau, &cycle).unwrap(), &x, &z).unwrap();
                let expected = before - cycle.gain;
                assert!((after - expected).abs() <= 1e-9 * before.max(1.0));
                checked += 1;
            }
        }
    }

    #[test]
    fn invalid_cycles_are_rejected() {
        let a = Assignment::identity(3);
        let neg = AlternatingCycle {
            data_indices: vec![0, 1],
            gain: -0.5,
        };
        assert!(apply_cycle(&a, &neg).is_err());
        let dup = AlternatingCycle {
            data_indices: vec![0, 0],
            gain: 1.0,
        };
        assert!(apply_cycle(&a, &dup).is_err());
        let oob = AlternatingCycle {
            data_indices: vec![0, 5],
            gain: 1.0,
        };
        assert!(matches!(apply_cycle(&a, &oob), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn max_len_beyond_n_is_an_error() {
        let x = Matrix::zeros(3, 2);
        assert!(find_negative_cycles(&Assignment::identity(3), &x, &x, 4).is_err());
    }
}
