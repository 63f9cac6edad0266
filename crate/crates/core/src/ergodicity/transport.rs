//! Balanced transportation problem, solved by the primal transportation
//! simplex (MODI potentials on a spanning-tree basis).

use crate::error::{Error, Result};

/// Optimal value and potentials of `min sum c_ij x_ij` subject to row sums
/// `supply` and column sums `demand`.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub value: f64,
    pub dual_value: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

struct Basis {
    m: usize,
    n: usize,
    /// Basic cells as (row, col).
    cells: Vec<(usize, usize)>,
    /// Adjacency of tree nodes (rows 0..m, cols m..m+n) to cell ids.
    adj: Vec<Vec<usize>>,
}

impl Basis {
    fn node_col(&self, j: usize) -> usize {
        self.m + j
    }

    fn other(&self, cell: usize, node: usize) -> usize {
        let (i, j) = self.cells[cell];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    fn replace(&mut self, leaving: usize, entering: (usize, usize)) {
        let (i, j) = self.cells[leaving];
        let cj = self.m + j;
        for node in [i, cj] {
            let pos = self.adj[node].iter().position(|&c| c == leaving).expect("cell in adjacency");
            self.adj[node].swap_remove(pos);
        }
        self.cells[leaving] = entering;
        self.adj[entering.0].push(leaving);
        let c = self.node_col(entering.1);
        self.adj[c].push(leaving);
    }
}

struct TreeState {
    order: Vec<usize>,
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
}

const NONE: usize = usize::MAX;

fn walk_tree(b: &Basis, ts: &mut TreeState) -> Result<()> {
    let total = b.m + b.n;
    ts.order.clear();
    ts.parent.iter_mut().for_each(|p| *p = NONE);
    ts.order.push(0);
    ts.parent[0] = 0;
    ts.parent_cell[0] = NONE;
    ts.depth[0] = 0;
    let mut head = 0;
    while head < ts.order.len() {
        let node = ts.order[head];
        head += 1;
        for &cell in &b.adj[node] {
            let nb = b.other(cell, node);
            if ts.parent[nb] == NONE {
                ts.parent[nb] = node;
                ts.parent_cell[nb] = cell;
                ts.depth[nb] = ts.depth[node] + 1;
                ts.order.push(nb);
            }
        }
    }
    if ts.order.len() != total {
        return Err(Error::Solver(format!("basis is not a spanning tree ({} of {} nodes reached)", ts.order.len(), total)));
    }
    Ok(())
}

/// Solves the transportation problem. `cost` is row-major `m x n`.
/// Supplies and demands must be nonnegative with equal totals (up to
/// rounding).
pub fn solve(cost: &[f64], supply: &[f64], demand: &[f64]) -> Result<TransportSolution> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::Solver("transport problem has inconsistent sizes".into()));
    }
    if supply.iter().chain(demand).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Solver("transport weights must be finite and nonnegative".into()));
    }
    let rows: Vec<usize> = (0..m).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| demand[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Solver("transport problem has no mass".into()));
    }
    if rows.len() == m && cols.len() == n {
        return solve_positive(cost, supply, demand);
    }
    // zero-mass rows and columns carry no flow; their potentials are set
    // afterwards to the largest dual-feasible values
    let sub: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| cost[i * n + j])).collect();
    let ss: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    let sd: Vec<f64> = cols.iter().map(|&j| demand[j]).collect();
    let inner = solve_positive(&sub, &ss, &sd)?;
    let mut v = vec![f64::NAN; n];
    for (k, &j) in cols.iter().enumerate() {
        v[j] = inner.v[k];
    }
    let mut u = vec![f64::NAN; m];
    for (k, &i) in rows.iter().enumerate() {
        u[i] = inner.u[k];
    }
    for i in 0..m {
        if u[i].is_nan() {
            u[i] = cols.iter().map(|&j| cost[i * n + j] - v[j]).fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..n {
        if v[j].is_nan() {
            v[j] = (0..m).map(|i| cost[i * n + j] - u[i]).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(TransportSolution { u, v, ..inner })
}

/// Primal simplex on strongly feasible trees rooted at row 0: a degenerate
/// basic cell always points towards the root. The northwest-corner start has
/// this property for positive weights, and the leaving rule (last blocking
/// cell from the apex) keeps it, which rules out cycling.
fn solve_positive(cost: &[f64], supply: &[f64], demand: &[f64]) -> Result<TransportSolution> {
    let m = supply.len();
    let n = demand.len();

    // Northwest corner start; exactly m + n - 1 cells.
    let mut cells = Vec::with_capacity(m + n - 1);
    {
        let mut s = supply[0];
        let mut d = demand[0];
        let (mut i, mut j) = (0, 0);
        loop {
            cells.push((i, j));
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s <= d) {
                d -= s;
                i += 1;
                s = supply[i];
            } else {
                s -= d;
                j += 1;
                d = demand[j];
            }
        }
    }
    let mut adj = vec![Vec::new(); m + n];
    for (c, &(i, j)) in cells.iter().enumerate() {
        adj[i].push(c);
        adj[m + j].push(c);
    }
    let mut basis = Basis { m, n, cells, adj };

    let total = m + n;
    let mut ts = TreeState {
        order: Vec::with_capacity(total),
        parent: vec![NONE; total],
        parent_cell: vec![NONE; total],
        depth: vec![0; total],
    };
    let mut pot = vec![0.0; total];
    let mut flow = vec![0.0; m + n - 1];
    let mut excess = vec![0.0; total];

    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
    let eps = 1e-12 * scale;
    let cells_total = m * n;
    let block = (((cells_total as f64).sqrt() as usize) * 4).max(64).min(cells_total);
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let tie_tol = 1e-13 * supply.iter().sum::<f64>();
    let max_pivots = 50 * (m + n) * (m + n).max(16) + 1000;

    let mut path_a: Vec<usize> = Vec::new();
    let mut path_b: Vec<usize> = Vec::new();

    loop {
        walk_tree(&basis, &mut ts)?;
        // potentials: u_i + v_j = c_ij on basic cells, u_0 = 0
        for &node in &ts.order {
            if node == 0 {
                pot[0] = 0.0;
                continue;
            }
            let p = ts.parent[node];
            let (i, j) = basis.cells[ts.parent_cell[node]];
            pot[node] = cost[i * n + j] - pot[p];
        }
        // flows from the tree, leaves first
        for (k, e) in excess.iter_mut().enumerate() {
            *e = if k < m { supply[k] } else { demand[k - m] };
        }
        for &node in ts.order.iter().rev() {
            if node == 0 {
                continue;
            }
            let f = excess[node];
            flow[ts.parent_cell[node]] = f;
            excess[ts.parent[node]] -= f;
        }

        // pricing
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0usize;
        let start = cursor;
        while scanned < cells_total {
            let idx = (start + scanned) % cells_total;
            let (i, j) = (idx / n, idx % n);
            let r = cost[idx] - pot[i] - pot[m + j];
            scanned += 1;
            if r < -eps && best.is_none_or(|(_, br)| r < br) {
                best = Some((idx, r));
            }
            if best.is_some() && scanned.is_multiple_of(block) {
                break;
            }
        }
        cursor = (start + scanned) % cells_total;
        let Some((enter_idx, _)) = best else { break };
        let (ei, ej) = (enter_idx / n, enter_idx % n);

        // cycle: path in the tree from column node ej to row node ei
        let mut a = m + ej;
        let mut b = ei;
        path_a.clear();
        path_b.clear();
        while a != b {
            if ts.depth[a] >= ts.depth[b] {
                path_a.push(ts.parent_cell[a]);
                a = ts.parent[a];
            } else {
                path_b.push(ts.parent_cell[b]);
                b = ts.parent[b];
            }
        }
        // cycle orientation: entering cell row -> column, then up from the
        // column to the apex and down to the row. Cells at even positions
        // after the entering cell (path_a forward, then path_b reversed) lose flow.
        let losing = path_a.iter().copied().enumerate().chain(path_b.iter().rev().copied().enumerate().map(|(k, c)| (k + path_a.len(), c)));
        let theta = losing.clone().filter(|(pos, _)| pos % 2 == 0).map(|(_, c)| flow[c]).fold(f64::INFINITY, f64::min);
        if !theta.is_finite() {
            return Err(Error::Solver("no leaving cell on pivot cycle".into()));
        }
        // last blocking cell when walking from the apex: path_b from the
        // apex down to the row, then path_a from the column up to the apex
        let blocking = |c: usize| flow[c] <= theta + tie_tol;
        let in_a = losing.clone().filter(|(pos, c)| pos % 2 == 0 && *pos < path_a.len() && blocking(*c)).map(|(_, c)| c).next_back();
        let leaving = match in_a {
            Some(c) => c,
            None => losing
                .filter(|(pos, c)| pos % 2 == 0 && *pos >= path_a.len() && blocking(*c))
                .map(|(_, c)| c)
                .next_back()
                .ok_or_else(|| Error::Solver("no leaving cell on pivot cycle".into()))?,
        };
        basis.replace(leaving, (ei, ej));
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("transport simplex exceeded {max_pivots} pivots")));
        }
    }

    let mut primal = crate::stats::NeumaierSum::new();
    for (c, &(i, j)) in basis.cells.iter().enumerate() {
        primal.add(cost[i * n + j] * flow[c].max(0.0));
    }
    let mut dual = crate::stats::NeumaierSum::new();
    for i in 0..m {
        dual.add(pot[i] * supply[i]);
    }
    for j in 0..n {
        dual.add(pot[m + j] * demand[j]);
    }
    Ok(TransportSolution {
        value: primal.value(),
        dual_value: dual.value(),
        u: pot[..m].to_vec(),
        v: pot[m..].to_vec(),
        pivots,
    })
}
