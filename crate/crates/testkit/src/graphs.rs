//! Brute-force centralities on small digraphs.

/// (in, out) degree counts by scanning the edge list.
pub fn degrees(n: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    (0..n).map(|v| (edges.iter().filter(|e| e.1 == v).count(), edges.iter().filter(|e| e.0 == v).count())).collect()
}

/// Floyd-Warshall hop distances; `None` when unreachable.
pub fn all_pairs_distances(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<u32>>> {
    let mut d = vec![vec![None; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = Some(0);
    }
    for &(s, t) in edges {
        d[s][t] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// Incoming-distance closeness with reachability scaling.
pub fn closeness(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let d = all_pairs_distances(n, edges);
    (0..n)
        .map(|u| {
            let dists: Vec<u32> = (0..n).filter(|&v| v != u).filter_map(|v| d[v][u]).collect();
            let total: u32 = dists.iter().sum();
            if total == 0 || n < 2 {
                0.0
            } else {
                let r = dists.len() as f64;
                (r / f64::from(total)) * (r / (n - 1) as f64)
            }
        })
        .collect()
}

/// Solves the PageRank fixed point directly:
/// `(I - d P^T - (d/n) 1 delta^T) x = (1 - d)/n 1` with dangling indicator delta.
pub fn pagerank_dense(n: usize, edges: &[(usize, usize)], damping: f64) -> Vec<f64> {
    let out: Vec<usize> = (0..n).map(|v| edges.iter().filter(|e| e.0 == v).count()).collect();
    let nf = n as f64;
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(s, t) in edges {
        a[t][s] -= damping / out[s] as f64;
    }
    for (j, &o) in out.iter().enumerate() {
        if o == 0 {
            for row in a.iter_mut() {
                row[j] -= damping / nf;
            }
        }
    }
    let b = vec![(1.0 - damping) / nf; n];
    solve(a, b)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}
