//! Best-bound branch and bound with depth-first dives on the 1-branch.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::presolve::{probe, Cut, Propagator};
use crate::problem::{CscMatrix, MilpProblem, Sense};
use crate::simplex::{LpStatus, Simplex, VarState};
use crate::{BoundRecord, MilpOptions, SolveError, SolveStats, Solution, Status};

const INT_TOL: f64 = 1e-6;
const CUT_VIOLATION: f64 = 1e-6;
const MAX_CUT_ROUNDS: usize = 100;
/// Open nodes beyond this count are stored without a warm-start basis.
const MAX_STORED_BASES: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, u64);

impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

struct Node {
    bound: f64,
    fixes: Vec<(usize, f64)>,
    basis: Option<Rc<Vec<VarState>>>,
}

struct Search<'a> {
    p: &'a MilpProblem,
    opts: &'a MilpOptions,
    spx: Simplex,
    prop_rows: CscMatrix,
    prop_cols: CscMatrix,
    is_int: Vec<bool>,
    int_cols: Vec<usize>,
    root_lo: Vec<f64>,
    root_hi: Vec<f64>,
    incumbent: Option<(f64, Vec<f64>)>,
    stats: SolveStats,
    sign: f64,
}

impl<'a> Search<'a> {
    fn propagator(&self) -> Propagator<'_> {
        Propagator {
            rows: &self.prop_rows,
            cols: &self.prop_cols,
            row_lower: &self.p.lp.row_lower,
            row_upper: &self.p.lp.row_upper,
            is_int: &self.is_int,
        }
    }

    fn work_limit(&self) -> usize {
        50 * (self.p.lp.triplets.len() + self.p.lp.num_rows() + 1)
    }

    /// Objective value below which a node is still worth exploring.
    fn threshold(&self) -> f64 {
        match &self.incumbent {
            Some((v, _)) => v - self.opts.rel_gap * v.abs().max(1e-9),
            None => f64::INFINITY,
        }
    }

    /// Propagates the branching decisions; returns the complete list of
    /// integer bound fixings implied at this node.
    fn propagate_node(&self, fixes: &[(usize, f64)]) -> Option<Vec<(usize, f64)>> {
        let mut lo = self.root_lo.clone();
        let mut hi = self.root_hi.clone();
        let mut seeds = Vec::with_capacity(fixes.len());
        for &(j, v) in fixes {
            if v < lo[j] || v > hi[j] {
                return None;
            }
            lo[j] = v;
            hi[j] = v;
            seeds.push(j);
        }
        if !self.propagator().propagate(&mut lo, &mut hi, &seeds, self.work_limit()) {
            return None;
        }
        let mut out = Vec::new();
        for &j in &self.int_cols {
            if lo[j] == hi[j] && (self.root_lo[j] != self.root_hi[j]) {
                out.push((j, lo[j]));
            } else if lo[j] > hi[j] {
                return None;
            }
        }
        Some(out)
    }

    fn apply_fixes(&mut self, fixes: &[(usize, f64)]) {
        for &j in &self.int_cols {
            self.spx.set_bounds(j, self.root_lo[j], self.root_hi[j]);
        }
        for &(j, v) in fixes {
            self.spx.set_bounds(j, v, v);
        }
    }

    fn solve_lp(&mut self, cutoff: f64) -> Result<LpStatus, SolveError> {
        let before = self.spx.iterations;
        let res = match self.spx.solve(cutoff) {
            Ok(s) => Ok(s),
            Err(e) => {
                log::debug!("retrying node LP from the slack basis after: {e}");
                self.spx.reset_to_slack();
                self.spx.solve(cutoff)
            }
        };
        self.stats.lp_iterations += self.spx.iterations - before;
        res
    }

    /// Fixes the integer columns of `x` and re-solves the continuous part.
    fn polish(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>, SolveError> {
        let fixes: Vec<(usize, f64)> = self.int_cols.iter().map(|&j| (j, x[j].round())).collect();
        for &(j, v) in &fixes {
            if v < self.root_lo[j] - INT_TOL || v > self.root_hi[j] + INT_TOL {
                return Ok(None);
            }
        }
        self.apply_fixes(&fixes);
        match self.solve_lp(f64::INFINITY)? {
            LpStatus::Optimal => {}
            _ => return Ok(None),
        }
        let mut vals = self.spx.values().to_vec();
        let lp = &self.p.lp;
        for j in 0..vals.len() {
            vals[j] = vals[j].clamp(lp.col_lower[j], lp.col_upper[j]);
            if self.is_int[j] {
                vals[j] = vals[j].round();
            }
        }
        if lp.max_violation(&vals) > self.opts.feasibility_tol {
            return Ok(None);
        }
        let obj = self.sign * lp.objective_value(&vals);
        Ok(Some((obj, vals)))
    }

    fn offer(&mut self, x: &[f64]) -> Result<(), SolveError> {
        if let Some((obj, vals)) = self.polish(x)? {
            let better = match &self.incumbent {
                Some((v, _)) => obj < *v - 1e-12 * v.abs().max(1.0),
                None => true,
            };
            if better {
                log::debug!("new incumbent {} after {} nodes", self.sign * obj, self.stats.nodes);
                self.incumbent = Some((obj, vals));
            }
        }
        Ok(())
    }

    fn record(&mut self, bound: f64) {
        let inc = self.incumbent.as_ref().map(|(v, _)| self.sign * v);
        let b = self.sign * bound;
        let last = self.stats.bound_history.last();
        if last.map_or(true, |r| r.bound != b || r.incumbent != inc) {
            self.stats.bound_history.push(BoundRecord { node: self.stats.nodes, bound: b, incumbent: inc });
        }
    }

    fn separate(&mut self, pool: &[Cut], added: &mut [bool]) -> usize {
        let x = self.spx.values().to_vec();
        let mut rows = Vec::new();
        for (k, cut) in pool.iter().enumerate() {
            if !added[k] && cut.violation(&x) > CUT_VIOLATION {
                added[k] = true;
                rows.push((cut.lower, cut.upper, cut.coefs.clone()));
            }
        }
        let count = rows.len();
        if count > 0 {
            self.spx.add_rows(&rows);
            self.stats.cuts_added += count as u64;
        }
        count
    }
}

fn most_fractional(x: &[f64], int_cols: &[usize]) -> Option<usize> {
    let mut best = None;
    let mut best_score = INT_TOL;
    for &j in int_cols {
        let f = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
        if f > best_score + 1e-12 {
            best_score = f;
            best = Some(j);
        }
    }
    best
}

pub(crate) fn branch_and_bound(p: &MilpProblem, opts: &MilpOptions) -> Result<Solution, SolveError> {
    p.validate()?;
    let lp = &p.lp;
    let n = lp.num_cols();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let cost = lp.min_costs();
    let mut is_int = vec![false; n];
    for &j in &p.integer_columns {
        is_int[j] = true;
    }
    let int_cols: Vec<usize> = p.integer_columns.iter().copied().collect();
    let prop_cols = CscMatrix::from_triplets(lp.num_rows(), n, &lp.triplets);
    let prop_rows = prop_cols.transpose();

    let mut lo = lp.col_lower.clone();
    let mut hi = lp.col_upper.clone();
    for &j in &int_cols {
        lo[j] = lo[j].ceil();
        hi[j] = hi[j].floor();
    }
    let infeasible = |stats: SolveStats| Solution {
        status: Status::Infeasible,
        objective: f64::NAN,
        values: Vec::new(),
        gap: f64::INFINITY,
        stats,
    };

    let spx = Simplex::new(n, &cost, &lo, &hi, &lp.row_lower, &lp.row_upper, &lp.triplets, opts.simplex_tol());
    let mut s = Search {
        p,
        opts,
        spx,
        prop_rows,
        prop_cols,
        is_int,
        int_cols,
        root_lo: lo,
        root_hi: hi,
        incumbent: None,
        stats: SolveStats::default(),
        sign,
    };
    s.spx.iteration_limit = opts.lp_iteration_limit;

    // root presolve: propagation and probing
    {
        let mut lo = s.root_lo.clone();
        let mut hi = s.root_hi.clone();
        let prop = s.propagator();
        let wl = s.work_limit();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) || !prop.propagate(&mut lo, &mut hi, &[], wl) {
            return Ok(infeasible(s.stats));
        }
        let mut pool = Vec::new();
        if opts.probing && !s.int_cols.is_empty() {
            let targets: Vec<usize> = (0..n).filter(|&j| cost[j] != 0.0 && !s.is_int[j]).collect();
            let out = probe(&prop, &mut lo, &mut hi, &s.int_cols, &targets, wl);
            if out.infeasible {
                return Ok(infeasible(s.stats));
            }
            pool = out.cuts;
        }
        // only integer bounds are tightened in the LP; continuous ones stay
        // as given so that the relaxation is not distorted by tolerances
        for &j in &s.int_cols.clone() {
            s.root_lo[j] = lo[j];
            s.root_hi[j] = hi[j];
        }
        let root_fixes: Vec<(usize, f64)> = Vec::new();
        s.apply_fixes(&root_fixes);
        s.stats.cut_pool = pool.len() as u64;

        if let Some(x0) = &opts.initial_solution {
            if x0.len() == n {
                s.offer(x0)?;
                s.apply_fixes(&root_fixes);
                s.spx.reset_to_slack();
            }
        }

        // root LP with cut loop
        let mut added = vec![false; pool.len()];
        let mut rounds = 0;
        loop {
            let status = s.solve_lp(f64::INFINITY)?;
            match status {
                LpStatus::Infeasible => return Ok(infeasible(s.stats)),
                LpStatus::Unbounded => {
                    return Ok(Solution {
                        status: Status::Unbounded,
                        objective: sign * f64::NEG_INFINITY,
                        values: Vec::new(),
                        gap: f64::INFINITY,
                        stats: s.stats,
                    })
                }
                _ => {}
            }
            rounds += 1;
            if rounds > MAX_CUT_ROUNDS || s.separate(&pool, &mut added) == 0 {
                break;
            }
        }
        s.stats.root_bound = sign * s.spx.objective();
        // keep the remaining pool for node separation
        let remaining: Vec<Cut> = pool.into_iter().zip(added).filter(|(_, a)| !a).map(|(c, _)| c).collect();
        s.stats.cut_pool = remaining.len() as u64;
        return run_tree(s, remaining);
    }
}

fn run_tree(mut s: Search, mut pool: Vec<Cut>) -> Result<Solution, SolveError> {
    let opts = s.opts;
    let mut open: BTreeMap<Key, Node> = BTreeMap::new();
    let mut next_id = 0u64;
    let root_basis = Rc::new(s.spx.snapshot());
    open.insert(Key(s.spx.objective(), next_id), Node { bound: s.spx.objective(), fixes: Vec::new(), basis: Some(root_basis) });
    next_id += 1;
    let mut budget_hit = false;

    'outer: while let Some((&key, _)) = open.iter().next() {
        let node = open.remove(&key).unwrap();
        if node.bound >= s.threshold() {
            // best-bound order: every remaining node is at least as bad
            open.clear();
            break;
        }
        let mut fixes = node.fixes;
        let mut warm = node.basis;
        let mut bound = node.bound;
        loop {
            if s.stats.nodes >= opts.node_budget {
                open.insert(Key(bound, next_id), Node { bound, fixes, basis: warm });
                budget_hit = true;
                break 'outer;
            }
            s.stats.nodes += 1;
            let global = open.keys().next().map_or(bound, |k| k.0.min(bound));
            s.record(global);

            let full = match s.propagate_node(&fixes) {
                Some(f) => f,
                None => break,
            };
            s.apply_fixes(&full);
            if let Some(b) = &warm {
                s.spx.restore(b);
            }
            let cutoff = s.threshold();
            let status = s.solve_lp(cutoff)?;
            match status {
                LpStatus::Infeasible | LpStatus::Cutoff => break,
                LpStatus::Unbounded => {
                    return Err(SolveError::Numerical("node relaxation unbounded after a bounded root".into()))
                }
                LpStatus::Optimal => {}
            }
            // late separation of pool cuts that this node violates
            if !pool.is_empty() {
                let mut added = vec![false; pool.len()];
                if s.separate(&pool, &mut added) > 0 {
                    pool = pool.into_iter().zip(added).filter(|(_, a)| !a).map(|(c, _)| c).collect();
                    match s.solve_lp(cutoff)? {
                        LpStatus::Optimal => {}
                        _ => break,
                    }
                }
            }
            let obj = s.spx.objective().max(bound);
            if obj >= s.threshold() {
                break;
            }
            let x = s.spx.values().to_vec();
            match most_fractional(&x, &s.int_cols) {
                None => {
                    s.offer(&x)?;
                    break;
                }
                Some(j) => {
                    let snap = if open.len() < MAX_STORED_BASES { Some(Rc::new(s.spx.snapshot())) } else { None };
                    let mut down = full.clone();
                    down.push((j, 0.0));
                    open.insert(Key(obj, next_id), Node { bound: obj, fixes: down, basis: snap });
                    next_id += 1;
                    let mut up = full;
                    up.push((j, 1.0));
                    fixes = up;
                    warm = None;
                    bound = obj;
                }
            }
        }
    }

    let lower = open.keys().next().map(|k| k.0);
    let Search { incumbent, mut stats, sign, .. } = s;
    match incumbent {
        None if budget_hit => Err(SolveError::NoIncumbent { nodes: stats.nodes }),
        None => Ok(Solution { status: Status::Infeasible, objective: f64::NAN, values: Vec::new(), gap: f64::INFINITY, stats }),
        Some((obj, vals)) => {
            let bound = lower.map_or(obj, |b| b.min(obj));
            let gap = ((obj - bound) / obj.abs().max(1e-9)).max(0.0);
            stats.final_bound = sign * bound;
            let status = if gap <= opts.rel_gap { Status::Optimal } else { Status::IncumbentWithGap };
            Ok(Solution { status, objective: sign * obj, values: vals, gap, stats })
        }
    }
}
