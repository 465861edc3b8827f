//! Minimum-cost one-to-one partial matching via the Jonker-Volgenant
//! shortest-augmenting-path algorithm on a penalty-padded square problem.

use crate::error::{Error, Result};

/// Result of [`hungarian_match`]: matched `(row, col)` pairs sorted by row,
/// and the total objective including the penalty for every unmatched row
/// and column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimizes total cost over one-to-one partial matchings of an `n_rows` by
/// `n_cols` cost matrix (row-major), where leaving any row or column
/// unmatched costs `unmatched_penalty`.
///
/// Internally pads to an `(n+m)` square: row `i` may match its private dummy
/// column at the penalty, column `j` its private dummy row, and dummy-dummy
/// cells are free. The square problem is solved exactly in O((n+m)^3).
pub fn hungarian_match(
    cost: &[f64],
    n_rows: usize,
    n_cols: usize,
    unmatched_penalty: f64,
) -> Result<Matching> {
    if cost.len() != n_rows * n_cols {
        return Err(Error::InvalidShape {
            op: "hungarian_match",
            shape: vec![n_rows, n_cols],
            reason: format!("cost has {} entries", cost.len()),
        });
    }
    for (idx, &c) in cost.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFiniteCost {
                row: idx / n_cols.max(1),
                col: idx % n_cols.max(1),
            });
        }
    }
    if !unmatched_penalty.is_finite() {
        return Err(Error::NonFiniteCost { row: 0, col: 0 });
    }
    if n_rows + n_cols == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }

    let size = n_rows + n_cols;
    let max_abs = cost
        .iter()
        .map(|c| c.abs())
        .fold(unmatched_penalty.abs(), f64::max);
    let forbid = (max_abs + 1.0) * (size as f64 + 1.0) * 2.0;
    let at = |i: usize, j: usize| -> f64 {
        match (i < n_rows, j < n_cols) {
            (true, true) => cost[i * n_cols + j],
            // row i's own dummy column is n_cols + i
            (true, false) => {
                if j - n_cols == i {
                    unmatched_penalty
                } else {
                    forbid
                }
            }
            // column j's own dummy row is n_rows + j
            (false, true) => {
                if i - n_rows == j {
                    unmatched_penalty
                } else {
                    forbid
                }
            }
            (false, false) => 0.0,
        }
    };

    // Shortest augmenting path with potentials, 1-indexed scratch arrays.
    let n = size;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for (j, &row) in row_of_col.iter().enumerate().take(n_cols + 1).skip(1) {
        let i = row - 1;
        if i < n_rows {
            pairs.push((i, j - 1));
        }
    }
    pairs.sort_unstable();
    let matched_cost: f64 = pairs.iter().map(|&(i, j)| cost[i * n_cols + j]).sum();
    let unmatched = (n_rows - pairs.len()) + (n_cols - pairs.len());
    Ok(Matching {
        pairs,
        total_cost: matched_cost + unmatched_penalty * unmatched as f64,
    })
}
