//! Activity-based bound propagation and probing on binary columns.

use std::collections::VecDeque;

use crate::problem::CscMatrix;

const FEAS_TOL: f64 = 1e-7;
const INT_TOL: f64 = 1e-6;

/// A valid inequality `lower <= coefs'x <= upper` found by probing.
#[derive(Debug, Clone)]
pub(crate) struct Cut {
    pub lower: f64,
    pub upper: f64,
    pub coefs: Vec<(usize, f64)>,
}

impl Cut {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act: f64 = self.coefs.iter().map(|&(j, a)| a * x[j]).sum();
        (self.lower - act).max(act - self.upper).max(0.0)
    }
}

pub(crate) struct Propagator<'a> {
    /// Row-major copy: "column" `i` of this matrix lists row `i`.
    pub rows: &'a CscMatrix,
    pub cols: &'a CscMatrix,
    pub row_lower: &'a [f64],
    pub row_upper: &'a [f64],
    pub is_int: &'a [bool],
}

struct Activity {
    finite: f64,
    n_inf: usize,
}

impl<'a> Propagator<'a> {
    fn activity(&self, i: usize, lo: &[f64], hi: &[f64]) -> (Activity, Activity) {
        let mut min = Activity { finite: 0.0, n_inf: 0 };
        let mut max = Activity { finite: 0.0, n_inf: 0 };
        for (j, a) in self.rows.col(i) {
            let (bmin, bmax) = if a > 0.0 { (lo[j], hi[j]) } else { (hi[j], lo[j]) };
            if bmin.is_finite() {
                min.finite += a * bmin;
            } else {
                min.n_inf += 1;
            }
            if bmax.is_finite() {
                max.finite += a * bmax;
            } else {
                max.n_inf += 1;
            }
        }
        (min, max)
    }

    /// Tightens `lo`/`hi` to a fixpoint starting from rows touching `seeds`
    /// (or all rows if `seeds` is empty). Returns false on infeasibility.
    pub fn propagate(&self, lo: &mut [f64], hi: &mut [f64], seeds: &[usize], work_limit: usize) -> bool {
        let m = self.rows.ncols;
        let mut queued = vec![false; m];
        let mut queue: VecDeque<usize> = VecDeque::new();
        if seeds.is_empty() {
            queue.extend(0..m);
            queued.iter_mut().for_each(|q| *q = true);
        } else {
            for &j in seeds {
                for (i, _) in self.cols.col(j) {
                    if !queued[i] {
                        queued[i] = true;
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut work = 0usize;
        while let Some(i) = queue.pop_front() {
            queued[i] = false;
            work += self.rows.col_start[i + 1] - self.rows.col_start[i];
            if work > work_limit {
                break;
            }
            let (min, max) = self.activity(i, lo, hi);
            let (rl, ru) = (self.row_lower[i], self.row_upper[i]);
            let scale = 1.0 + rl.abs().min(ru.abs()).min(1e6);
            if min.n_inf == 0 && min.finite > ru + FEAS_TOL * scale {
                return false;
            }
            if max.n_inf == 0 && max.finite < rl - FEAS_TOL * scale {
                return false;
            }
            for (j, a) in self.rows.col(i) {
                let (cmin, cmax) = if a > 0.0 { (a * lo[j], a * hi[j]) } else { (a * hi[j], a * lo[j]) };
                let mut new_lo = lo[j];
                let mut new_hi = hi[j];
                if ru.is_finite() {
                    let rest = if cmin.is_finite() {
                        (min.n_inf == 0).then(|| min.finite - cmin)
                    } else {
                        (min.n_inf == 1).then_some(min.finite)
                    };
                    if let Some(rest) = rest {
                        let b = (ru - rest) / a;
                        if a > 0.0 {
                            new_hi = new_hi.min(b);
                        } else {
                            new_lo = new_lo.max(b);
                        }
                    }
                }
                if rl.is_finite() {
                    let rest = if cmax.is_finite() {
                        (max.n_inf == 0).then(|| max.finite - cmax)
                    } else {
                        (max.n_inf == 1).then_some(max.finite)
                    };
                    if let Some(rest) = rest {
                        let b = (rl - rest) / a;
                        if a > 0.0 {
                            new_lo = new_lo.max(b);
                        } else {
                            new_hi = new_hi.min(b);
                        }
                    }
                }
                if self.is_int[j] {
                    new_hi = (new_hi + INT_TOL).floor();
                    new_lo = (new_lo - INT_TOL).ceil();
                }
                let mut changed = false;
                if new_hi < hi[j] && significant(hi[j], new_hi) {
                    hi[j] = new_hi;
                    changed = true;
                }
                if new_lo > lo[j] && significant(lo[j], new_lo) {
                    lo[j] = new_lo;
                    changed = true;
                }
                if lo[j] > hi[j] {
                    if lo[j] > hi[j] + FEAS_TOL * (1.0 + hi[j].abs()) {
                        return false;
                    }
                    let mid = 0.5 * (lo[j] + hi[j]);
                    lo[j] = mid;
                    hi[j] = mid;
                }
                if changed {
                    for (r, _) in self.cols.col(j) {
                        if !queued[r] && r != i {
                            queued[r] = true;
                            queue.push_back(r);
                        }
                    }
                }
            }
        }
        true
    }
}

fn significant(old: f64, new: f64) -> bool {
    !old.is_finite() || (old - new).abs() > 1e-6 * (1.0 + old.abs())
}

pub(crate) struct ProbeOutcome {
    pub infeasible: bool,
    pub cuts: Vec<Cut>,
}

/// Probes every unfixed binary column. Fixings and implied global bounds
/// are written into `lo`/`hi`; implied-bound inequalities on the columns
/// in `targets` are returned as cuts.
pub(crate) fn probe(
    prop: &Propagator,
    lo: &mut [f64],
    hi: &mut [f64],
    binaries: &[usize],
    targets: &[usize],
    work_limit: usize,
) -> ProbeOutcome {
    let mut cuts = Vec::new();
    for &j in binaries {
        if lo[j] != 0.0 || hi[j] != 1.0 {
            continue;
        }
        let mut branches: Vec<Option<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(2);
        for v in [0.0, 1.0] {
            let mut l = lo.to_vec();
            let mut h = hi.to_vec();
            l[j] = v;
            h[j] = v;
            if prop.propagate(&mut l, &mut h, &[j], work_limit) {
                branches.push(Some((l, h)));
            } else {
                branches.push(None);
            }
        }
        match (&branches[0], &branches[1]) {
            (None, None) => return ProbeOutcome { infeasible: true, cuts },
            (None, Some(_)) | (Some(_), None) => {
                let v = if branches[0].is_none() { 1.0 } else { 0.0 };
                lo[j] = v;
                hi[j] = v;
                if !prop.propagate(lo, hi, &[j], work_limit) {
                    return ProbeOutcome { infeasible: true, cuts };
                }
            }
            (Some((l0, h0)), Some((l1, h1))) => {
                for &k in targets {
                    if k == j {
                        continue;
                    }
                    let (u0, u1) = (h0[k], h1[k]);
                    if u0.is_finite() && u1.is_finite() && (u0 - u1).abs() > 1e-6 * (1.0 + u0.abs()) {
                        // x_k <= u0 + (u1 - u0) z_j
                        cuts.push(Cut { lower: f64::NEG_INFINITY, upper: u0, coefs: vec![(k, 1.0), (j, u0 - u1)] });
                    }
                    let (w0, w1) = (l0[k], l1[k]);
                    if w0.is_finite() && w1.is_finite() && (w0 - w1).abs() > 1e-6 * (1.0 + w0.abs()) {
                        // x_k >= w0 + (w1 - w0) z_j
                        cuts.push(Cut { lower: w0, upper: f64::INFINITY, coefs: vec![(k, 1.0), (j, w0 - w1)] });
                    }
                }
                // anything implied on both sides holds globally
                let mut changed = Vec::new();
                for k in 0..lo.len() {
                    let h = h0[k].max(h1[k]);
                    let l = l0[k].min(l1[k]);
                    if h < hi[k] && significant(hi[k], h) {
                        hi[k] = h;
                        changed.push(k);
                    }
                    if l > lo[k] && significant(lo[k], l) {
                        lo[k] = l;
                        changed.push(k);
                    }
                }
                if !changed.is_empty() && !prop.propagate(lo, hi, &changed, work_limit) {
                    return ProbeOutcome { infeasible: true, cuts };
                }
            }
        }
    }
    ProbeOutcome { infeasible: false, cuts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagates_through_a_chain() {
        // x0 + x1 <= 1, x1 - x2 = 0, x2 >= 0.75, all in [0, 1]
        let trip = vec![(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0), (1, 2, -1.0)];
        let a = CscMatrix::from_triplets(2, 3, &trip);
        let at = a.transpose();
        let rl = [f64::NEG_INFINITY, 0.0];
        let ru = [1.0, 0.0];
        let is_int = [false; 3];
        let p = Propagator { rows: &at, cols: &a, row_lower: &rl, row_upper: &ru, is_int: &is_int };
        let mut lo = vec![0.0, 0.0, 0.75];
        let mut hi = vec![1.0; 3];
        assert!(p.propagate(&mut lo, &mut hi, &[], 10_000));
        assert!((lo[1] - 0.75).abs() < 1e-12);
        assert!((hi[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn probing_finds_implied_bound() {
        // y <= 5 z written as y - 5 z <= 0; y in [0, 5], z binary
        let trip = vec![(0, 0, 1.0), (0, 1, -5.0)];
        let a = CscMatrix::from_triplets(1, 2, &trip);
        let at = a.transpose();
        let rl = [f64::NEG_INFINITY];
        let ru = [0.0];
        let is_int = [false, true];
        let p = Propagator { rows: &at, cols: &a, row_lower: &rl, row_upper: &ru, is_int: &is_int };
        let mut lo = vec![0.0, 0.0];
        let mut hi = vec![5.0, 1.0];
        let out = probe(&p, &mut lo, &mut hi, &[1], &[0], 10_000);
        assert!(!out.infeasible);
        assert_eq!(out.cuts.len(), 1);
        assert_eq!(out.cuts[0].coefs, vec![(0, 1.0), (1, -5.0)]);
    }
}
