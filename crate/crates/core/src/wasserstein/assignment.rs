use super::{check_pair, squared_cost_matrix, PointCloud, TransportError, TransportPlan};

const FREE: usize = usize::MAX;

/// Minimum-cost perfect matching on a dense row-major `n × n` cost matrix.
///
/// Column reduction gives a dual-feasible start; each remaining free row is
/// then matched by a Dijkstra-style shortest augmenting path over reduced
/// costs (Jonker–Volgenant augmentation). Returns `row → column`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    let mut v = vec![0.0f64; n];
    let mut col_of_row = vec![FREE; n];
    let mut row_of_col = vec![FREE; n];

    // Column reduction: v_j = min_i c_ij, assign greedily where the argmin row is free.
    for j in (0..n).rev() {
        let mut best = cost[j];
        let mut arg = 0;
        for i in 1..n {
            let c = cost[i * n + j];
            if c < best {
                best = c;
                arg = i;
            }
        }
        v[j] = best;
        if col_of_row[arg] == FREE {
            col_of_row[arg] = j;
            row_of_col[j] = arg;
        }
    }

    // Reduction transfer: for rows holding exactly their column, lower v of
    // that column so the row's second-best reduced cost becomes tight.
    for i in 0..n {
        let j1 = col_of_row[i];
        if j1 == FREE {
            continue;
        }
        let row = &cost[i * n..(i + 1) * n];
        let mut min = f64::INFINITY;
        for (j, (&c, &vj)) in row.iter().zip(&v).enumerate() {
            if j != j1 {
                min = min.min(c - vj);
            }
        }
        if min.is_finite() {
            v[j1] -= min;
        }
    }

    let mut dist = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    // Columns in cols[..done] have final distances; the rest are pending.
    let mut cols: Vec<usize> = (0..n).collect();

    for free_row in 0..n {
        if col_of_row[free_row] != FREE {
            continue;
        }
        let row = &cost[free_row * n..(free_row + 1) * n];
        for j in 0..n {
            dist[j] = row[j] - v[j];
            pred[j] = free_row;
            cols[j] = j;
        }
        let mut done = 0;
        let (end_col, mu) = loop {
            // Pending column with the smallest tentative distance; free columns win ties.
            let mut pos = done;
            let mut best = dist[cols[done]];
            for (k, &j) in cols.iter().enumerate().skip(done + 1) {
                let dj = dist[j];
                if dj < best || (dj == best && row_of_col[j] == FREE && row_of_col[cols[pos]] != FREE) {
                    best = dj;
                    pos = k;
                }
            }
            let j = cols[pos];
            cols.swap(done, pos);
            done += 1;
            let i = row_of_col[j];
            if i == FREE {
                break (j, best);
            }
            // Relax pending columns through the row currently holding j.
            let ri = &cost[i * n..(i + 1) * n];
            let h = best - (ri[j] - v[j]);
            for &k in &cols[done..] {
                let cand = ri[k] - v[k] + h;
                if cand < dist[k] {
                    dist[k] = cand;
                    pred[k] = i;
                }
            }
        };

        for &j in &cols[..done] {
            v[j] += dist[j] - mu;
        }

        let mut j = end_col;
        loop {
            let i = pred[j];
            row_of_col[j] = i;
            let prev = col_of_row[i];
            col_of_row[i] = j;
            if i == free_row {
                break;
            }
            j = prev;
        }
    }
    col_of_row
}

/// Exact W2 between equal-size uniform clouds via linear assignment on the
/// squared-Euclidean cost.
///
/// The matching is solved on mean-centred copies of both clouds. Translating
/// one cloud changes every perfect matching's cost by the same amount, so the
/// optimal permutation is unchanged, while overlapping clouds leave far fewer
/// rows for the augmenting-path phase.
pub fn w2_assignment(x: &PointCloud, y: &PointCloud) -> Result<(f64, TransportPlan), TransportError> {
    check_pair(x, y)?;
    let n = x.len();
    let centred = squared_cost_matrix(&centre(x), &centre(y));
    let perm = solve_assignment(&centred, n);
    let total: f64 = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| x.point(i).iter().zip(y.point(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    Ok((total.max(0.0).sqrt(), TransportPlan::Permutation(perm)))
}

fn centre(c: &PointCloud) -> PointCloud {
    let (n, d) = (c.len(), c.dim());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(c.point(i)) {
            *m += v;
        }
    }
    let shift: Vec<f64> = mean.iter().map(|m| -m / n as f64).collect();
    c.affine(1.0, &shift)
}

/// [`w2_assignment`] without the plan.
pub fn w2_assignment_distance(x: &PointCloud, y: &PointCloud) -> Result<f64, TransportError> {
    w2_assignment(x, y).map(|(d, _)| d)
}
