//! Sparse LU factorization of simplex bases with product-form updates.
//!
//! The factorization is a right-looking Markowitz elimination with a column
//! threshold test. Column and row singletons are eliminated first; they never
//! create fill-in. After refactorization, each basis change appends one eta
//! column; the caller refactors after a fixed number of updates.

/// Relative threshold for accepting a pivot within its column.
const THRESHOLD: f64 = 0.1;
/// Pivots smaller than this are treated as structural zeros.
const ABS_PIVOT_TOL: f64 = 1e-11;
/// Number of candidate columns examined by the Markowitz search.
const SEARCH_COLS: usize = 4;

#[derive(Debug)]
pub(crate) struct Singular {
    /// Basis positions that could not be pivoted.
    pub positions: Vec<usize>,
    /// Rows left without a pivot, one per entry in `positions`.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactors {
    m: usize,
    pivot_row: Vec<usize>,
    pivot_col: Vec<usize>,
    pivot_val: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    eta_pos: Vec<usize>,
    eta_piv: Vec<f64>,
    eta_start: Vec<usize>,
    eta_idx: Vec<usize>,
    eta_val: Vec<f64>,
}

/// Doubly linked buckets of active columns keyed by their active count.
struct Buckets {
    head: Vec<usize>,
    next: Vec<usize>,
    prev: Vec<usize>,
    key: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl Buckets {
    fn new(n: usize, max_key: usize) -> Self {
        Buckets { head: vec![NIL; max_key + 2], next: vec![NIL; n], prev: vec![NIL; n], key: vec![NIL; n] }
    }
    fn insert(&mut self, j: usize, k: usize) {
        let k = k.min(self.head.len() - 1);
        self.key[j] = k;
        self.prev[j] = NIL;
        self.next[j] = self.head[k];
        if self.head[k] != NIL {
            self.prev[self.head[k]] = j;
        }
        self.head[k] = j;
    }
    fn remove(&mut self, j: usize) {
        let k = self.key[j];
        if k == NIL {
            return;
        }
        if self.prev[j] != NIL {
            self.next[self.prev[j]] = self.next[j];
        } else {
            self.head[k] = self.next[j];
        }
        if self.next[j] != NIL {
            self.prev[self.next[j]] = self.prev[j];
        }
        self.key[j] = NIL;
    }
    fn update(&mut self, j: usize, k: usize) {
        self.remove(j);
        self.insert(j, k);
    }
}

impl LuFactors {
    /// Factorizes the `m x m` matrix whose columns are given as sparse
    /// `(row, value)` lists.
    pub fn factorize(m: usize, cols: &[Vec<(usize, f64)>]) -> Result<LuFactors, Singular> {
        debug_assert_eq!(cols.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (j, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                if v != 0.0 {
                    rows[i].push((j, v));
                    col_rows[j].push(i);
                }
            }
        }
        let mut col_count: Vec<usize> = col_rows.iter().map(|c| c.len()).collect();
        let mut row_active = vec![true; m];
        let mut col_active = vec![true; m];
        let mut buckets = Buckets::new(m, m);
        for j in (0..m).rev() {
            buckets.insert(j, col_count[j]);
        }
        let mut row_singletons: Vec<usize> = (0..m).filter(|&i| rows[i].len() == 1).collect();
        row_singletons.reverse();

        let mut f = LuFactors { m, ..Default::default() };
        f.l_start.push(0);
        f.u_start.push(0);
        // position of a column inside the row currently being updated
        let mut mark: Vec<usize> = vec![NIL; m];
        let mut singular_cols: Vec<usize> = Vec::new();

        for _step in 0..m {
            // ---- pivot selection ----
            let mut choice: Option<(usize, usize)> = None;
            // column singletons
            while buckets.head[1] != NIL {
                let j = buckets.head[1];
                let i = col_rows[j].iter().copied().find(|&i| row_active[i]);
                match i {
                    Some(i) => {
                        let v = rows[i].iter().find(|e| e.0 == j).map(|e| e.1).unwrap_or(0.0);
                        if v.abs() > ABS_PIVOT_TOL {
                            choice = Some((i, j));
                            break;
                        }
                        // numerically zero singleton: treat column as singular
                        buckets.remove(j);
                        col_active[j] = false;
                        singular_cols.push(j);
                    }
                    None => {
                        buckets.remove(j);
                        col_active[j] = false;
                        singular_cols.push(j);
                    }
                }
            }
            // empty columns are singular
            while choice.is_none() && buckets.head[0] != NIL {
                let j = buckets.head[0];
                buckets.remove(j);
                col_active[j] = false;
                singular_cols.push(j);
            }
            if choice.is_none() {
                while let Some(i) = row_singletons.pop() {
                    if !row_active[i] || rows[i].len() != 1 {
                        continue;
                    }
                    let (j, v) = rows[i][0];
                    if col_active[j] && v.abs() > ABS_PIVOT_TOL {
                        choice = Some((i, j));
                        break;
                    }
                }
            }
            if choice.is_none() {
                choice = markowitz_search(&rows, &col_rows, &row_active, &buckets);
            }
            let (pr, pc) = match choice {
                Some(c) => c,
                None => break,
            };

            // ---- elimination ----
            let pivot = rows[pr].iter().find(|e| e.0 == pc).map(|e| e.1).unwrap();
            row_active[pr] = false;
            col_active[pc] = false;
            buckets.remove(pc);
            f.pivot_row.push(pr);
            f.pivot_col.push(pc);
            f.pivot_val.push(pivot);
            let prow: Vec<(usize, f64)> = rows[pr].iter().copied().filter(|e| e.0 != pc).collect();
            for &(j, v) in &prow {
                f.u_idx.push(j);
                f.u_val.push(v);
                col_count[j] -= 1;
            }
            f.u_start.push(f.u_idx.len());

            let targets: Vec<usize> = col_rows[pc].iter().copied().filter(|&i| row_active[i]).collect();
            for i in targets {
                let pos = match rows[i].iter().position(|e| e.0 == pc) {
                    Some(p) => p,
                    None => continue,
                };
                let aic = rows[i][pos].1;
                rows[i].swap_remove(pos);
                let mult = aic / pivot;
                f.l_idx.push(i);
                f.l_val.push(mult);
                for (k, e) in rows[i].iter().enumerate() {
                    mark[e.0] = k;
                }
                for &(j, v) in &prow {
                    let k = mark[j];
                    if k != NIL {
                        rows[i][k].1 -= mult * v;
                    } else {
                        rows[i].push((j, -mult * v));
                        mark[j] = rows[i].len() - 1;
                        col_rows[j].push(i);
                        col_count[j] += 1;
                    }
                }
                for e in rows[i].iter() {
                    mark[e.0] = NIL;
                }
                // drop cancellations
                let before = rows[i].len();
                rows[i].retain(|e| e.1.abs() > 1e-14);
                if rows[i].len() != before {
                    let keep: std::collections::HashSet<usize> = rows[i].iter().map(|e| e.0).collect();
                    for &(j, _) in &prow {
                        if !keep.contains(&j) && col_active[j] {
                            // entry vanished; recount lazily below
                            col_count[j] = col_rows[j]
                                .iter()
                                .filter(|&&r| row_active[r] && rows[r].iter().any(|e| e.0 == j))
                                .count();
                        }
                    }
                }
                if rows[i].len() == 1 {
                    row_singletons.push(i);
                }
            }
            f.l_start.push(f.l_idx.len());
            for &(j, _) in &prow {
                if col_active[j] {
                    col_rows[j].retain(|&r| row_active[r]);
                    col_count[j] = col_rows[j].len();
                    buckets.update(j, col_count[j]);
                }
            }
        }

        // any column not pivoted is singular
        for j in 0..m {
            if col_active[j] {
                singular_cols.push(j);
            }
        }
        if !singular_cols.is_empty() {
            singular_cols.sort_unstable();
            singular_cols.dedup();
            let mut free_rows: Vec<usize> = (0..m).filter(|&i| row_active[i]).collect();
            free_rows.truncate(singular_cols.len());
            return Err(Singular { positions: singular_cols, rows: free_rows });
        }
        Ok(f)
    }

    pub fn num_updates(&self) -> usize {
        self.eta_pos.len()
    }

    /// Solves `B x = b` in place. On input `x` is indexed by row, on output
    /// by basis position.
    pub fn ftran(&self, x: &mut [f64]) {
        let m = self.m;
        // forward elimination with L
        for k in 0..m {
            let br = x[self.pivot_row[k]];
            if br != 0.0 {
                for p in self.l_start[k]..self.l_start[k + 1] {
                    x[self.l_idx[p]] -= self.l_val[p] * br;
                }
            }
        }
        // back substitution with U, result indexed by column
        let mut y = vec![0.0; m];
        for k in (0..m).rev() {
            let mut s = x[self.pivot_row[k]];
            for p in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[p] * y[self.u_idx[p]];
            }
            y[self.pivot_col[k]] = s / self.pivot_val[k];
        }
        // product-form updates
        for e in 0..self.eta_pos.len() {
            let p = self.eta_pos[e];
            let xp = y[p] / self.eta_piv[e];
            y[p] = xp;
            if xp != 0.0 {
                for q in self.eta_start[e]..self.eta_start[e + 1] {
                    y[self.eta_idx[q]] -= self.eta_val[q] * xp;
                }
            }
        }
        x.copy_from_slice(&y);
    }

    /// Solves `B' y = c` in place. On input `y` is indexed by basis position,
    /// on output by row.
    pub fn btran(&self, y: &mut [f64]) {
        let m = self.m;
        for e in (0..self.eta_pos.len()).rev() {
            let p = self.eta_pos[e];
            let mut s = y[p];
            for q in self.eta_start[e]..self.eta_start[e + 1] {
                s -= self.eta_val[q] * y[self.eta_idx[q]];
            }
            y[p] = s / self.eta_piv[e];
        }
        let mut c = y.to_vec();
        let mut w = vec![0.0; m];
        for k in 0..m {
            let wk = c[self.pivot_col[k]] / self.pivot_val[k];
            w[self.pivot_row[k]] = wk;
            if wk != 0.0 {
                for p in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[p]] -= self.u_val[p] * wk;
                }
            }
        }
        for k in (0..m).rev() {
            let mut s = w[self.pivot_row[k]];
            for p in self.l_start[k]..self.l_start[k + 1] {
                s -= self.l_val[p] * w[self.l_idx[p]];
            }
            w[self.pivot_row[k]] = s;
        }
        y.copy_from_slice(&w);
    }

    /// Records the replacement of basis position `pos` by a column whose
    /// FTRAN image is `alpha`.
    pub fn update(&mut self, pos: usize, alpha: &[f64]) {
        if self.eta_start.is_empty() {
            self.eta_start.push(0);
        }
        self.eta_pos.push(pos);
        self.eta_piv.push(alpha[pos]);
        for (i, &a) in alpha.iter().enumerate() {
            if i != pos && a.abs() > 1e-13 {
                self.eta_idx.push(i);
                self.eta_val.push(a);
            }
        }
        self.eta_start.push(self.eta_idx.len());
    }
}

fn markowitz_search(
    rows: &[Vec<(usize, f64)>],
    col_rows: &[Vec<usize>],
    row_active: &[bool],
    buckets: &Buckets,
) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut best_cost = usize::MAX;
    let mut best_val = 0.0f64;
    let mut examined = 0;
    for k in 1..buckets.head.len() {
        let mut j = buckets.head[k];
        while j != NIL {
            let entries: Vec<(usize, f64)> = col_rows[j]
                .iter()
                .filter(|&&i| row_active[i])
                .filter_map(|&i| rows[i].iter().find(|e| e.0 == j).map(|e| (i, e.1)))
                .collect();
            let colmax = entries.iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
            if colmax > ABS_PIVOT_TOL {
                let cc = entries.len();
                for &(i, v) in &entries {
                    if v.abs() >= THRESHOLD * colmax {
                        let cost = (rows[i].len() - 1) * (cc - 1);
                        if cost < best_cost || (cost == best_cost && v.abs() > best_val) {
                            best_cost = cost;
                            best_val = v.abs();
                            best = Some((i, j));
                        }
                    }
                }
                examined += 1;
            }
            if examined >= SEARCH_COLS && best.is_some() {
                return best;
            }
            j = buckets.next[j];
        }
        if best.is_some() && best_cost <= (k - 1) * (k - 1) {
            return best;
        }
    }
    best
}
