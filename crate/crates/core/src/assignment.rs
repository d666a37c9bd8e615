//! Exact minimum-cost bipartite assignment (Hungarian method, O(n²m)).

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix rows have different lengths")]
    Ragged,
    #[error("cost at ({0}, {1}) is not finite")]
    NonFinite(usize, usize),
}

/// Minimum-cost assignment on a `rows × cols` matrix. Returns
/// `min(rows, cols)` pairs `(row, col)` sorted by row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, AssignmentError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    for (i, r) in cost.iter().enumerate() {
        if r.len() != cols {
            return Err(AssignmentError::Ragged);
        }
        if let Some(j) = r.iter().position(|c| !c.is_finite()) {
            return Err(AssignmentError::NonFinite(i, j));
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    if rows <= cols {
        Ok(solve(rows, cols, |i, j| cost[i][j]))
    } else {
        let mut pairs: Vec<(usize, usize)> =
            solve(cols, rows, |i, j| cost[j][i]).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Maximum-total-score assignment.
pub fn max_score_assignment(score: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, AssignmentError> {
    let neg: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|s| -s).collect()).collect();
    min_cost_assignment(&neg)
}

/// Potentials-based shortest augmenting path; requires n ≤ m.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    out.sort_unstable();
    out
}
