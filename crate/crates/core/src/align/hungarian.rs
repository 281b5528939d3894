use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Matched (row, column) pairs of a rectangular cost matrix, by row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of the matched costs, accumulated in row order.
    pub cost: f64,
}

impl Assignment {
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

/// Minimum-cost assignment. Rectangular inputs are padded to a square with
/// zero costs, so `min(rows, cols)` pairs are returned. Among optimal
/// assignments the lexicographically smallest one (by row, then column) is
/// chosen.
pub fn hungarian_match(cost: ArrayView2<f64>) -> Assignment {
    let (rows, cols) = cost.dim();
    let n = rows.max(cols);
    if n == 0 {
        return Assignment::default();
    }
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[[i, j]] } else { 0.0 };

    // Potentials-based O(n^3) solver, 1-indexed with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }

    // Every optimal assignment uses only tight edges of the optimal dual, so
    // the lexicographically smallest one is found by greedily improving each
    // row along alternating cycles of tight edges.
    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(1.0f64, |m, (i, j)| m.max(c(i, j).abs()));
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| c(i, j) - u[i + 1] - v[j + 1] <= tol).collect())
        .collect();
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    for i in 0..n {
        for j in 0..row_to_col[i] {
            if !tight[i][j] || col_to_row[j] < i {
                continue;
            }
            if let Some(path) = reroute(i, j, &tight, &row_to_col, &col_to_row) {
                for (r, col) in path {
                    row_to_col[r] = col;
                    col_to_row[col] = r;
                }
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut total = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            total += cost[[i, j]];
        }
    }
    Assignment {
        unmatched_rows: (0..rows).filter(|&i| row_to_col[i] >= cols).collect(),
        unmatched_cols: (0..cols).filter(|&j| col_to_row[j] >= rows).collect(),
        pairs,
        cost: total,
    }
}

/// Moves row `i` to column `j`, displacing rows greater than `i` along tight
/// edges until the column `i` gave up is taken. Returns the new (row, col)
/// settings, or None if no such alternating cycle exists.
fn reroute(
    i: usize,
    j: usize,
    tight: &[Vec<bool>],
    row_to_col: &[usize],
    col_to_row: &[usize],
) -> Option<Vec<(usize, usize)>> {
    let n = tight.len();
    let freed = row_to_col[i];
    let mut seen = vec![false; n];
    seen[j] = true;
    // Depth-first search from the row currently on column j.
    let mut stack = vec![(col_to_row[j], 0usize)];
    let mut chosen: Vec<usize> = Vec::new();
    while let Some(&mut (r, ref mut next)) = stack.last_mut() {
        let mut advanced = false;
        while *next < n {
            let col = *next;
            *next += 1;
            if !tight[r][col] || seen[col] {
                continue;
            }
            seen[col] = true;
            if col == freed {
                chosen.push(col);
                let mut out = vec![(i, j)];
                for (k, &(row, _)) in stack.iter().enumerate() {
                    out.push((row, chosen[k]));
                }
                return Some(out);
            }
            if col_to_row[col] > i {
                chosen.push(col);
                stack.push((col_to_row[col], 0));
                advanced = true;
                break;
            }
        }
        if !advanced {
            stack.pop();
            chosen.pop();
        }
    }
    None
}
