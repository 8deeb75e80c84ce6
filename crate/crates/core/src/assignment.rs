//! Exact minimum-cost assignment (Hungarian algorithm).
//!
//! Rectangular matrices are allowed: exactly `min(n, m)` rows are assigned,
//! injectively, minimizing the total cost. Among cost-optimal solutions the
//! lexicographically smallest assignment vector is returned (row 0 takes the
//! smallest feasible column, then row 1, ...; unassigned sorts last), which
//! pins the solver's output bit-for-bit.

/// Solution for one cost matrix: `assignment[row]` is the chosen column, or
/// `None` for rows left out when there are more rows than columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSolution {
    pub assignment: Vec<Option<usize>>,
    pub cost: f64,
}

impl AssignmentSolution {
    /// Assigned `(row, column)` pairs in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Minimum-cost assignment of `min(n, m)` rows to columns.
///
/// Entries must be finite (checked). Cost-equal solutions are disambiguated
/// to the lexicographically smallest assignment vector.
pub fn hungarian(cost: &[Vec<f64>]) -> AssignmentSolution {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    assert!(
        cost.iter().all(|row| row.len() == m),
        "cost matrix must be rectangular"
    );
    assert!(
        cost.iter().flatten().all(|c| c.is_finite()),
        "cost entries must be finite"
    );
    if n == 0 || m == 0 {
        return AssignmentSolution {
            assignment: vec![None; n],
            cost: 0.0,
        };
    }

    let opt = solve_completion(cost, &[]);
    let tol = 1e-9 * (1.0 + opt.abs());

    // Fix rows in order, always to the smallest column that still completes
    // to an optimal solution.
    let mut fixed: Vec<Option<usize>> = Vec::with_capacity(n);
    for _row in 0..n {
        let mut chosen: Option<usize> = None;
        let mut found = false;
        for c in 0..m {
            if fixed.contains(&Some(c)) {
                continue;
            }
            fixed.push(Some(c));
            let total = solve_completion(cost, &fixed);
            fixed.pop();
            if total <= opt + tol {
                chosen = Some(c);
                found = true;
                break;
            }
        }
        if !found {
            // No column completes optimally, so the optimum leaves this row
            // unassigned (only possible when rows outnumber columns).
            chosen = None;
        }
        fixed.push(chosen);
    }

    let total: f64 = fixed
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    AssignmentSolution {
        assignment: fixed,
        cost: total,
    }
}

/// Optimal total cost over completions of a partial assignment: rows beyond
/// `fixed.len()` and rows fixed to `None` compete for the unused columns.
fn solve_completion(cost: &[Vec<f64>], fixed: &[Option<usize>]) -> f64 {
    let n = cost.len();
    let m = cost[0].len();
    let fixed_cost: f64 = fixed
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    // Rows already fixed (to a column or pinned unassigned) do not compete;
    // only rows not yet decided enter the subproblem.
    let free_rows: Vec<usize> = (fixed.len()..n).collect();
    let used: Vec<usize> = fixed.iter().flatten().copied().collect();
    let free_cols: Vec<usize> = (0..m).filter(|c| !used.contains(c)).collect();
    if free_rows.is_empty() || free_cols.is_empty() {
        return fixed_cost;
    }

    let sub: Vec<Vec<f64>> = free_rows
        .iter()
        .map(|&r| free_cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    fixed_cost + solve_min_cost(&sub)
}

/// Optimal total cost of assigning `min(n, m)` rows (shortest augmenting
/// path formulation with potentials, padded square).
fn solve_min_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost[0].len();
    let size = n.max(m);
    // Constant padding strictly worse than any real total forces exactly
    // min(n, m) real assignments while leaving the choice among them free.
    let pad: f64 = 1.0 + cost.iter().flatten().map(|c| c.abs()).sum::<f64>();
    let at = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            cost[i][j]
        } else {
            pad
        }
    };

    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; size];
    let mut v = vec![0.0f64; size + 1];
    let mut col_row = vec![NONE; size + 1]; // row matched to column; size = virtual start

    for row in 0..size {
        let mut j0 = size;
        col_row[j0] = row;
        let mut min_slack = vec![f64::INFINITY; size + 1];
        let mut prev_col = vec![size; size + 1];
        let mut visited = vec![false; size + 1];
        loop {
            visited[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = size;
            for j in 0..size {
                if visited[j] {
                    continue;
                }
                let reduced = at(i0, j) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    prev_col[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if visited[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == NONE {
                break;
            }
        }
        loop {
            let j1 = prev_col[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == size {
                break;
            }
        }
    }

    let mut total = 0.0;
    for j in 0..size {
        let i = col_row[j];
        if i != NONE && i < n && j < m {
            total += cost[i][j];
        }
    }
    total
}
