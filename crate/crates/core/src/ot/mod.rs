//! Exact assignment between equally sized point sets.
//!
//! Costs are Euclidean distances (not squared). [`solve_assignment`] is an
//! O(n^3) shortest-augmenting-path Hungarian solver that returns the
//! lexicographically smallest optimal mapping; [`brute_force_assignment`]
//! enumerates permutations and exists as an oracle for small `n`.

mod cycles;
mod hungarian;

pub use cycles::{apply_cycle, find_negative_cycles, AlternatingCycle};
pub use hungarian::solve_assignment;

use crate::linalg::{distance, Matrix};
use crate::{Error, Result};

/// Dense cost matrix, row = data point, column = noise point.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_rows * n_cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {n_rows}x{n_cols} cost matrix",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|c| !c.is_finite() || **c < 0.0) {
            if bad.is_finite() {
                return Err(Error::InvalidParameter(format!("negative cost {bad}")));
            }
            return Err(Error::NonFinite(format!("cost entry {bad}")));
        }
        Ok(Self {
            n_rows,
            n_cols,
            entries,
        })
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                entries.push(f(i, j));
            }
        }
        Self::new(n_rows, n_cols, entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Sum of `costs[i][mapping[i]]` accumulated in row order.
    pub fn cost_of(&self, assignment: &Assignment) -> f64 {
        assignment
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .sum()
    }

    fn require_square(&self) -> Result<usize> {
        if self.n_rows != self.n_cols {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        Ok(self.n_rows)
    }
}

/// A bijection on `0..n`; `mapping[i]` is the noise slot assigned to data point `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    mapping: Vec<usize>,
}

impl Assignment {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        if let Some(reason) = bijection_violation(&mapping) {
            return Err(Error::InvalidAssignment(reason));
        }
        Ok(Self { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.mapping
    }

    pub fn inverse(&self) -> Assignment {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &j) in self.mapping.iter().enumerate() {
            inv[j] = i;
        }
        Assignment { mapping: inv }
    }

    /// `self ∘ inner`, i.e. `i -> self(inner(i))`.
    pub fn compose(&self, inner: &Assignment) -> Result<Assignment> {
        if self.len() != inner.len() {
            return Err(Error::Dimension(format!(
                "cannot compose permutations of sizes {} and {}",
                self.len(),
                inner.len()
            )));
        }
        Ok(Assignment {
            mapping: inner.mapping.iter().map(|&j| self.mapping[j]).collect(),
        })
    }

    pub(crate) fn swap(&mut self, i: usize, j: usize) {
        self.mapping.swap(i, j);
    }

    pub(crate) fn set_unchecked(&mut self, i: usize, j: usize) {
        self.mapping[i] = j;
    }

    pub fn is_bijection(&self) -> bool {
        bijection_violation(&self.mapping).is_none()
    }
}

pub(crate) fn bijection_violation(mapping: &[usize]) -> Option<String> {
    let n = mapping.len();
    let mut seen = vec![false; n];
    for (i, &j) in mapping.iter().enumerate() {
        if j >= n {
            return Some(format!("mapping[{i}] = {j} is out of range for n = {n}"));
        }
        if seen[j] {
            return Some(format!("value {j} appears more than once"));
        }
        seen[j] = true;
    }
    None
}

fn check_point_sets(data: &Matrix, noise: &Matrix) -> Result<()> {
    if data.rows() != noise.rows() {
        return Err(Error::Dimension(format!(
            "{} data points vs {} noise points",
            data.rows(),
            noise.rows()
        )));
    }
    if data.cols() != noise.cols() {
        return Err(Error::Dimension(format!(
            "data dimension {} vs noise dimension {}",
            data.cols(),
            noise.cols()
        )));
    }
    if !data.is_finite() || !noise.is_finite() {
        return Err(Error::NonFinite("point sets contain NaN or infinity".into()));
    }
    Ok(())
}

/// `entries[i][j] = ||data[i] - noise[j]||_2`.
pub fn build_cost_matrix(data: &Matrix, noise: &Matrix) -> Result<CostMatrix> {
    check_point_sets(data, noise)?;
    let n = data.rows();
    let mut entries = Vec::with_capacity(n * n);
    for x in data.iter_rows() {
        entries.extend(noise.iter_rows().map(|z| distance(x, z)));
    }
    CostMatrix::new(n, n, entries)
}

/// `sum_i ||data[i] - noise[assignment[i]]||_2`.
pub fn matching_cost(assignment: &Assignment, data: &Matrix, noise: &Matrix) -> Result<f64> {
    check_point_sets(data, noise)?;
    if assignment.len() != data.rows() {
        return Err(Error::InvalidAssignment(format!(
            "assignment has length {}, point sets have {}",
            assignment.len(),
            data.rows()
        )));
    }
    if let Some(reason) = bijection_violation(assignment.as_slice()) {
        return Err(Error::InvalidAssignment(reason));
    }
    Ok(assignment
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &j)| distance(data.row(i), noise.row(j)))
        .sum())
}

pub const BRUTE_FORCE_MAX_N: usize = 10;

/// Exhaustive minimum over all `n!` permutations, visited in lexicographic
/// order; the first strict minimum wins.
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<(Assignment, f64)> {
    let n = costs.require_square()?;
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| costs.get(i, j)).sum();
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    if n == 0 {
        best_cost = 0.0;
    }
    Ok((Assignment { mapping: best }, best_cost))
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let data = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn cost_matrix_diagonal_is_zero_for_identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 7, 3);
        let c = build_cost_matrix(&pts, &pts).unwrap();
        for i in 0..7 {
            assert_eq!(c.get(i, i), 0.0);
        }
    }

    #[test]
    fn cost_matrix_three_four_five() {
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let z = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(build_cost_matrix(&x, &z).unwrap().entries(), &[5.0]);
    }

    #[test]
    fn cost_matrix_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_points(&mut rng, 5, 2);
        let z = random_points(&mut rng, 5, 2);
        let c = build_cost_matrix(&x, &z).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dx = x.row(i)[0] - z.row(j)[0];
                let dy = x.row(i)[1] - z.row(j)[1];
                let naive = (dx * dx + dy * dy).sqrt();
                assert!((c.get(i, j) - naive).abs() <= 1e-15 * naive.max(1.0));
            }
        }
    }

    #[test]
    fn cost_matrix_rejects_bad_input() {
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let z3 = Matrix::from_rows(&[[0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(build_cost_matrix(&x, &z3), Err(Error::Dimension(_))));
        let nan = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(build_cost_matrix(&x, &nan), Err(Error::NonFinite(_))));
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn brute_force_trivial_cases() {
        let one = CostMatrix::new(1, 1, vec![3.5]).unwrap();
        let (a, c) = brute_force_assignment(&one).unwrap();
        assert_eq!(a.as_slice(), &[0]);
        assert_eq!(c, 3.5);

        let two = CostMatrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let (a, c) = brute_force_assignment(&two).unwrap();
        assert_eq!(a.as_slice(), &[0, 1]);
        assert_eq!(c, 2.0);
    }

    #[test]
    fn brute_force_guards_size() {
        let big = CostMatrix::new(11, 11, vec![1.0; 121]).unwrap();
        assert!(matches!(
            brute_force_assignment(&big),
            Err(Error::TooLarge { n: 11, .. })
        ));
        let rect = CostMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        assert!(matches!(brute_force_assignment(&rect), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn brute_force_beats_random_permutations() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = CostMatrix::from_fn(7, 7, |_, _| rng.random::<f64>()).unwrap();
        let (_, best) = brute_force_assignment(&c).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        for _ in 0..50 {
            perm.shuffle(&mut rng);
            let a = Assignment::from_mapping(perm.clone()).unwrap();
            assert!(best <= c.cost_of(&a));
        }
    }

    #[test]
    fn next_permutation_visits_all_in_order() {
        let mut p = vec![0, 1, 2, 3];
        let mut count = 1;
        let mut prev = p.clone();
        while next_permutation(&mut p) {
            assert!(p > prev);
            prev = p.clone();
            count += 1;
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn matching_cost_identity_on_equal_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_points(&mut rng, 6, 2);
        assert_eq!(matching_cost(&Assignment::identity(6), &pts, &pts).unwrap(), 0.0);
    }

    #[test]
    fn matching_cost_agrees_with_cost_matrix() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(&mut rng, 8, 3);
        let z = random_points(&mut rng, 8, 3);
        let c = build_cost_matrix(&x, &z).unwrap();
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let a = Assignment::from_mapping(perm).unwrap();
        assert_eq!(matching_cost(&a, &x, &z).unwrap(), c.cost_of(&a));
    }

    #[test]
    fn assignment_validation() {
        assert!(Assignment::from_mapping(vec![0, 0]).is_err());
        assert!(Assignment::from_mapping(vec![0, 2]).is_err());
        let a = Assignment::from_mapping(vec![2, 0, 1]).unwrap();
        assert_eq!(a.inverse().compose(&a).unwrap(), Assignment::identity(3));
        let x = Matrix::zeros(3, 1);
        let bad = Assignment { mapping: vec![1, 1, 0] };
        assert!(matches!(
            matching_cost(&bad, &x, &x),
            Err(Error::InvalidAssignment(_))
        ));
    }
}
