use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of mapping clusters (rows) onto classes (columns).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapping {
    /// Class index for each cluster; `None` only when clusters outnumber classes.
    pub mapping: Vec<Option<usize>>,
    /// Records whose cluster is not mapped to their class.
    pub error: u64,
}

/// Minimum-cost perfect matching on a square matrix (Kuhn-Munkres with
/// potentials). Returns the column assigned to each row.
fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Largest total count reachable by a one-to-one matching of `rows` onto
/// `cols`, where surplus rows stay unmatched.
fn best_total(counts: &[Vec<u64>], rows: &[usize], cols: &[usize]) -> u64 {
    let s = rows.len().max(cols.len());
    if s == 0 || cols.is_empty() || rows.is_empty() {
        return 0;
    }
    let mut cost = vec![vec![0i64; s]; s];
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            cost[a][b] = -(counts[r][c] as i64);
        }
    }
    let assign = hungarian(&cost);
    assign
        .iter()
        .enumerate()
        .map(|(a, &b)| -cost[a][b] as u64)
        .sum()
}

/// Maps each cluster to a distinct class so that the number of misassigned
/// records is minimal. Among optimal mappings the lexicographically smallest
/// (by class index, cluster by cluster, `None` last) is returned.
pub fn classes_to_clusters(counts: &[Vec<u64>]) -> Result<ClassMapping> {
    let n = counts.len();
    let m = counts.first().map_or(0, Vec::len);
    if let Some(bad) = counts.iter().find(|r| r.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.len(),
        });
    }
    let total: u64 = counts.iter().flatten().sum();
    if total > i64::MAX as u64 / 4 {
        return Err(Error::InvalidParameter("counts too large".into()));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..m).collect();
    let target = best_total(counts, &all_rows, &cols);

    let mut mapping = Vec::with_capacity(n);
    let mut acc = 0;
    for i in 0..n {
        let rest: Vec<usize> = (i + 1..n).collect();
        let mut choice = None;
        for (pos, &j) in cols.iter().enumerate() {
            let mut without = cols.clone();
            without.remove(pos);
            if acc + counts[i][j] + best_total(counts, &rest, &without) == target {
                choice = Some((pos, j));
                break;
            }
        }
        match choice {
            Some((pos, j)) => {
                acc += counts[i][j];
                cols.remove(pos);
                mapping.push(Some(j));
            }
            None => {
                debug_assert!(n - i > cols.len());
                mapping.push(None);
            }
        }
    }
    Ok(ClassMapping {
        mapping,
        error: total - target,
    })
}
