use super::{Assignment, CostMatrix};
use crate::Result;

/// Reduced costs at or below this fraction of the largest entry count as tight.
const TIGHT_REL_TOL: f64 = 1e-10;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns the assignment and its cost summed in row order. Among optimal
/// assignments the lexicographically smallest mapping is returned: after the
/// Hungarian pass the dual potentials identify the tight edges, every
/// optimal matching lives in that subgraph, and rows are then fixed greedily
/// to their smallest feasible column.
pub fn solve_assignment(costs: &CostMatrix) -> Result<(Assignment, f64)> {
    let n = costs.require_square()?;
    if n == 0 {
        return Ok((Assignment::identity(0), 0.0));
    }
    let (mut row_to_col, u, v) = shortest_augmenting_path(costs, n);

    let scale = costs.entries().iter().fold(1.0f64, |m, &c| m.max(c));
    let tol = TIGHT_REL_TOL * scale;
    let tight: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            costs.get(i, j) - u[i] - v[j] <= tol
        })
        .collect();
    lexicographic_refine(&tight, n, &mut row_to_col);

    let assignment = Assignment { mapping: row_to_col };
    let total = costs.cost_of(&assignment);
    Ok((assignment, total))
}

/// Potentials-based Hungarian method. Returns `(row -> col, u, v)` with
/// `c[i][j] - u[i] - v[j] >= 0`, equality on matched edges.
fn shortest_augmenting_path(costs: &CostMatrix, n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based with index 0 as the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let row = costs.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Turns any perfect matching of the tight graph into its lexicographically
/// smallest perfect matching.
fn lexicographic_refine(tight: &[bool], n: usize, row_to_col: &mut [usize]) {
    let mut owner = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        owner[j] = i;
    }
    let mut parent_row = vec![usize::MAX; n];
    let mut queue = Vec::with_capacity(n);

    for i in 0..n {
        for j in 0..n {
            if !tight[i * n + j] || owner[j] < i {
                continue;
            }
            if row_to_col[i] == j {
                break;
            }
            // Row r currently holds column j and must move along an
            // alternating path of tight edges that ends in i's column.
            let target = row_to_col[i];
            let r = owner[j];
            parent_row.iter_mut().for_each(|p| *p = usize::MAX);
            queue.clear();
            queue.push(r);
            let mut head = 0;
            let mut reached = None;
            'bfs: while head < queue.len() {
                let x = queue[head];
                head += 1;
                for c in 0..n {
                    if !tight[x * n + c] || c == j || parent_row[c] != usize::MAX {
                        continue;
                    }
                    if c == target {
                        parent_row[c] = x;
                        reached = Some(c);
                        break 'bfs;
                    }
                    if owner[c] <= i {
                        continue;
                    }
                    parent_row[c] = x;
                    queue.push(owner[c]);
                }
            }
            if let Some(mut c) = reached {
                loop {
                    let x = parent_row[c];
                    let prev = row_to_col[x];
                    row_to_col[x] = c;
                    owner[c] = x;
                    if x == r {
                        break;
                    }
                    c = prev;
                }
                row_to_col[i] = j;
                owner[j] = i;
                break;
            }
        }
    }
}
