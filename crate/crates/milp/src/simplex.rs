//! Bounded revised simplex.
//!
//! Internally every row `i` gets a logical variable `r_i` with `A x - r = 0`
//! and bounds `[row_lower_i, row_upper_i]`, so all constraints become variable
//! bounds. Variables `0..n` are structural and `n..n+m` logical.
//!
//! Both a primal simplex (composite phase 1) and a dual simplex are
//! available. The dual method is used whenever the starting basis is dual
//! feasible, which is the normal case after a bound change in branch and
//! bound. A long run of degenerate dual steps first perturbs the costs
//! slightly (the true costs are restored before optimality is declared) and
//! then falls back to Bland's rule.

use crate::lu::LuFactors;
use crate::problem::CscMatrix;
use crate::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarState {
    Basic,
    Lower,
    Upper,
    /// Free nonbasic variable resting at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The dual bound exceeded the caller's cutoff.
    Cutoff,
}

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 60;
const REFACTOR_EVERY: usize = 80;
const MAX_ROUNDS: usize = 20;

pub(crate) struct Simplex {
    pub m: usize,
    pub n: usize,
    triplets: Vec<(usize, usize, f64)>,
    a: CscMatrix,
    at: CscMatrix,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x: Vec<f64>,
    pub state: Vec<VarState>,
    basis: Vec<usize>,
    lu: LuFactors,
    d: Vec<f64>,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub iterations: u64,
    pub iteration_limit: u64,
    fresh: bool,
    /// True costs while the working costs are perturbed.
    saved_cost: Option<Vec<f64>>,
}

impl Simplex {
    /// Sets up the slack basis for `min cost'x` over the given data.
    pub fn new(
        n: usize,
        cost: &[f64],
        col_lower: &[f64],
        col_upper: &[f64],
        row_lower: &[f64],
        row_upper: &[f64],
        triplets: &[(usize, usize, f64)],
        tol: f64,
    ) -> Self {
        let m = row_lower.len();
        let a = CscMatrix::from_triplets(m, n, triplets);
        let at = a.transpose();
        let mut lower = col_lower.to_vec();
        lower.extend_from_slice(row_lower);
        let mut upper = col_upper.to_vec();
        upper.extend_from_slice(row_upper);
        let mut c = cost.to_vec();
        c.resize(n + m, 0.0);
        let mut s = Simplex {
            m,
            n,
            triplets: triplets.to_vec(),
            a,
            at,
            cost: c,
            lower,
            upper,
            x: vec![0.0; n + m],
            state: vec![VarState::Lower; n + m],
            basis: (n..n + m).collect(),
            lu: LuFactors::default(),
            d: vec![0.0; n + m],
            tol_primal: tol,
            tol_dual: tol,
            iterations: 0,
            iteration_limit: u64::MAX,
            fresh: false,
            saved_cost: None,
        };
        for j in 0..n {
            s.state[j] = s.default_state(j);
        }
        for i in 0..m {
            s.state[n + i] = VarState::Basic;
        }
        s
    }

    fn default_state(&self, j: usize) -> VarState {
        let (l, u) = (self.lower[j], self.upper[j]);
        match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                if self.cost[j] < 0.0 {
                    VarState::Upper
                } else {
                    VarState::Lower
                }
            }
            (true, false) => VarState::Lower,
            (false, true) => VarState::Upper,
            (false, false) => VarState::Zero,
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Lower => self.lower[j],
            VarState::Upper => self.upper[j],
            VarState::Zero | VarState::Basic => 0.0,
        }
    }

    /// Appends rows `lower <= coefs'x <= upper`; their logicals enter the basis.
    pub fn add_rows(&mut self, rows: &[(f64, f64, Vec<(usize, f64)>)]) {
        for (lo, hi, coefs) in rows {
            let i = self.m;
            for &(j, v) in coefs {
                self.triplets.push((i, j, v));
            }
            self.lower.push(*lo);
            self.upper.push(*hi);
            self.cost.push(0.0);
            self.x.push(0.0);
            self.d.push(0.0);
            self.state.push(VarState::Basic);
            self.basis.push(self.n + i);
            self.m += 1;
        }
        self.a = CscMatrix::from_triplets(self.m, self.n, &self.triplets);
        self.at = self.a.transpose();
        self.fresh = false;
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
        match self.state[j] {
            VarState::Basic => {}
            VarState::Lower if !lo.is_finite() => self.state[j] = self.default_state(j),
            VarState::Upper if !hi.is_finite() => self.state[j] = self.default_state(j),
            VarState::Zero if lo.is_finite() || hi.is_finite() => self.state[j] = self.default_state(j),
            _ => {}
        }
        self.fresh = false;
    }

    /// Returns to the all-logical basis.
    pub fn reset_to_slack(&mut self) {
        for j in 0..self.n {
            self.state[j] = self.default_state(j);
        }
        for i in 0..self.m {
            self.state[self.n + i] = VarState::Basic;
        }
        self.basis = (self.n..self.n + self.m).collect();
        self.fresh = false;
    }

    pub fn snapshot(&self) -> Vec<VarState> {
        self.state.clone()
    }

    /// Installs a basis from a snapshot; rows added after the snapshot was
    /// taken keep their logicals basic.
    pub fn restore(&mut self, snap: &[VarState]) {
        let k = snap.len().min(self.n + self.m);
        self.state[..k].copy_from_slice(&snap[..k]);
        for j in k..self.n + self.m {
            self.state[j] = VarState::Basic;
        }
        for j in 0..self.n + self.m {
            let bad = match self.state[j] {
                VarState::Lower => !self.lower[j].is_finite(),
                VarState::Upper => !self.upper[j].is_finite(),
                VarState::Zero => self.lower[j].is_finite() || self.upper[j].is_finite(),
                VarState::Basic => false,
            };
            if bad {
                self.state[j] = self.default_state(j);
            }
        }
        let mut basis: Vec<usize> = (0..self.n + self.m).filter(|&j| self.state[j] == VarState::Basic).collect();
        // keep the basis square: demote extra structurals or promote logicals
        while basis.len() > self.m {
            let j = basis.pop().unwrap();
            self.state[j] = self.default_state(j);
        }
        if basis.len() < self.m {
            for i in 0..self.m {
                if basis.len() == self.m {
                    break;
                }
                let j = self.n + i;
                if self.state[j] != VarState::Basic {
                    self.state[j] = VarState::Basic;
                    basis.push(j);
                }
            }
        }
        self.basis = basis;
        self.fresh = false;
    }

    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.a.col(j).collect()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    fn dense_column(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        if j < self.n {
            for (i, a) in self.a.col(j) {
                v[i] = a;
            }
        } else {
            v[j - self.n] = -1.0;
        }
        v
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.a.col(j).map(|(i, a)| a * y[i]).sum()
        } else {
            -y[j - self.n]
        }
    }

    /// Refactorizes the basis, repairing singularities with logicals, and
    /// recomputes primal values and reduced costs from scratch.
    fn refactor(&mut self) {
        for _ in 0..self.m + 1 {
            let cols: Vec<Vec<(usize, f64)>> = self.basis.iter().map(|&j| self.column(j)).collect();
            match LuFactors::factorize(self.m, &cols) {
                Ok(lu) => {
                    self.lu = lu;
                    break;
                }
                Err(sing) => {
                    log::debug!("repairing {} singular basis columns", sing.positions.len());
                    for (&p, &r) in sing.positions.iter().zip(&sing.rows) {
                        let old = self.basis[p];
                        self.state[old] = self.default_state(old);
                        self.basis[p] = self.n + r;
                        self.state[self.n + r] = VarState::Basic;
                    }
                }
            }
        }
        for j in 0..self.n + self.m {
            if self.state[j] != VarState::Basic {
                self.x[j] = self.nonbasic_value(j);
            }
        }
        self.compute_primal();
        self.compute_duals();
        self.fresh = true;
    }

    fn compute_primal(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.state[j] != VarState::Basic {
                let v = self.x[j];
                if v != 0.0 {
                    if j < self.n {
                        for (i, a) in self.a.col(j) {
                            rhs[i] -= a * v;
                        }
                    } else {
                        rhs[j - self.n] += v;
                    }
                }
            }
        }
        self.lu.ftran(&mut rhs);
        for (p, &j) in self.basis.iter().enumerate() {
            self.x[j] = rhs[p];
        }
    }

    fn compute_duals_for(&self, cb: &[f64], cost: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let mut y = cb.to_vec();
        self.lu.btran(&mut y);
        let mut d = vec![0.0; self.n + self.m];
        for j in 0..self.n + self.m {
            if self.state[j] != VarState::Basic {
                d[j] = cost(j) - self.dot_column(j, &y);
            }
        }
        d
    }

    fn compute_duals(&mut self) {
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        let cost = self.cost.clone();
        self.d = self.compute_duals_for(&cb, &|j| cost[j]);
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] {
            self.lower[j] - v
        } else if v > self.upper[j] {
            v - self.upper[j]
        } else {
            0.0
        }
    }

    fn max_primal_infeasibility(&self) -> f64 {
        self.basis.iter().map(|&j| self.infeasibility(j)).fold(0.0, f64::max)
    }

    fn dual_infeasibility(&self, j: usize) -> f64 {
        let d = self.d[j];
        match self.state[j] {
            VarState::Basic => 0.0,
            _ if self.lower[j] == self.upper[j] => 0.0,
            VarState::Lower => (-d).max(0.0),
            VarState::Upper => d.max(0.0),
            VarState::Zero => d.abs(),
        }
    }

    fn max_dual_infeasibility(&self) -> f64 {
        (0..self.n + self.m).map(|j| self.dual_infeasibility(j)).fold(0.0, f64::max)
    }

    /// Moves boxed nonbasic variables with wrong-signed reduced costs to
    /// their other bound.
    fn flip_boxed(&mut self) -> bool {
        let mut flipped = false;
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic || !(self.lower[j].is_finite() && self.upper[j].is_finite()) {
                continue;
            }
            if self.state[j] == VarState::Lower && self.d[j] < -self.tol_dual {
                self.state[j] = VarState::Upper;
                self.x[j] = self.upper[j];
                flipped = true;
            } else if self.state[j] == VarState::Upper && self.d[j] > self.tol_dual {
                self.state[j] = VarState::Lower;
                self.x[j] = self.lower[j];
                flipped = true;
            }
        }
        if flipped {
            self.compute_primal();
        }
        flipped
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    fn check_limit(&self) -> Result<(), SolveError> {
        if self.iterations >= self.iteration_limit {
            Err(SolveError::Numerical(format!("simplex iteration limit {} reached", self.iteration_limit)))
        } else {
            Ok(())
        }
    }

    /// Solves from the current basis. `cutoff` stops the dual simplex once
    /// its bound exceeds the given objective value.
    pub fn solve(&mut self, cutoff: f64) -> Result<LpStatus, SolveError> {
        self.refactor();
        let mut infeasible_claims = 0;
        for _round in 0..MAX_ROUNDS {
            self.flip_boxed();
            let pinf = self.max_primal_infeasibility() > self.tol_primal;
            let dinf = self.max_dual_infeasibility() > self.tol_dual;
            if !pinf && !dinf {
                return Ok(LpStatus::Optimal);
            }
            let status = if dinf { self.primal()? } else { self.dual(cutoff)? };
            if self.restore_costs() {
                // re-check with the true costs before trusting the status
                self.refactor();
                if status == LpStatus::Optimal {
                    continue;
                }
            }
            match status {
                LpStatus::Optimal => {}
                LpStatus::Cutoff => return Ok(LpStatus::Cutoff),
                LpStatus::Unbounded => return Ok(LpStatus::Unbounded),
                LpStatus::Infeasible => {
                    infeasible_claims += 1;
                    if infeasible_claims >= 2 {
                        return Ok(LpStatus::Infeasible);
                    }
                }
            }
            self.refactor();
        }
        Err(SolveError::Numerical("simplex failed to reach a verified optimum".into()))
    }

    fn pivot_row(&self, rho: &[f64]) -> Vec<f64> {
        // alpha_j = rho' col_j for every variable; basic entries are unused
        let mut alpha = vec![0.0; self.n + self.m];
        let nnz = rho.iter().filter(|v| **v != 0.0).count();
        if nnz * 8 < self.m {
            for (i, &r) in rho.iter().enumerate() {
                if r != 0.0 {
                    for (j, a) in self.at.col(i) {
                        alpha[j] += r * a;
                    }
                    alpha[self.n + i] = -r;
                }
            }
        } else {
            for j in 0..self.n {
                if self.state[j] != VarState::Basic {
                    alpha[j] = self.a.col(j).map(|(i, a)| a * rho[i]).sum();
                }
            }
            for i in 0..self.m {
                alpha[self.n + i] = -rho[i];
            }
        }
        alpha
    }

    /// Shifts the cost of every movable nonbasic variable away from dual
    /// degeneracy by a small deterministic amount.
    fn perturb_costs(&mut self) {
        if self.saved_cost.is_some() {
            return;
        }
        self.saved_cost = Some(self.cost.clone());
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic || self.lower[j] == self.upper[j] {
                continue;
            }
            // spread the shifts so ties between columns are broken
            let u = ((j as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0;
            let delta = 1e-7 * (1.0 + self.cost[j].abs()) * (1.0 + u);
            let shift = match self.state[j] {
                VarState::Lower => delta,
                VarState::Upper => -delta,
                _ => continue,
            };
            self.cost[j] += shift;
            self.d[j] += shift;
        }
    }

    /// Removes small dual infeasibilities left by round-off after a
    /// refactorization: boxed variables move to their other bound, the rest
    /// get their cost shifted (undone with the perturbation). Returns false
    /// when an infeasibility is too large to be round-off.
    fn repair_dual_drift(&mut self) -> bool {
        if self.max_dual_infeasibility() <= self.tol_dual {
            return true;
        }
        self.flip_boxed();
        let bad: Vec<usize> = (0..self.n + self.m).filter(|&j| self.dual_infeasibility(j) > self.tol_dual).collect();
        if bad.iter().any(|&j| self.dual_infeasibility(j) > 1e-4) {
            return false;
        }
        if !bad.is_empty() && self.saved_cost.is_none() {
            self.saved_cost = Some(self.cost.clone());
        }
        for j in bad {
            self.cost[j] -= self.d[j];
            self.d[j] = 0.0;
        }
        true
    }

    /// Restores the true costs; returns whether they were perturbed.
    fn restore_costs(&mut self) -> bool {
        match self.saved_cost.take() {
            Some(c) => {
                self.cost = c;
                true
            }
            None => false,
        }
    }

    fn dual(&mut self, cutoff: f64) -> Result<LpStatus, SolveError> {
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            self.check_limit()?;
            if self.lu.num_updates() >= REFACTOR_EVERY {
                self.refactor();
                if !self.repair_dual_drift() {
                    return Ok(LpStatus::Optimal); // let the caller clean up
                }
            }
            // leaving variable
            let mut r = usize::MAX;
            let mut best = self.tol_primal;
            for (p, &j) in self.basis.iter().enumerate() {
                let inf = self.infeasibility(j);
                if bland {
                    if inf > self.tol_primal && (r == usize::MAX || j < self.basis[r]) {
                        r = p;
                    }
                } else if inf > best {
                    best = inf;
                    r = p;
                }
            }
            if r == usize::MAX {
                return Ok(LpStatus::Optimal);
            }
            let leave = self.basis[r];
            let to_lower = self.x[leave] < self.lower[leave];
            let target = if to_lower { self.lower[leave] } else { self.upper[leave] };
            let s = if to_lower { 1.0 } else { -1.0 };

            let mut rho = vec![0.0; self.m];
            rho[r] = 1.0;
            self.lu.btran(&mut rho);
            let alpha = self.pivot_row(&rho);

            // Harris two-pass ratio test
            let cand = |j: usize| -> bool {
                let a = alpha[j];
                if a.abs() < PIVOT_TOL || self.lower[j] == self.upper[j] {
                    return false;
                }
                match self.state[j] {
                    VarState::Basic => false,
                    VarState::Lower => s * a < 0.0,
                    VarState::Upper => s * a > 0.0,
                    VarState::Zero => true,
                }
            };
            let mut q = usize::MAX;
            if bland {
                let mut tmin = f64::INFINITY;
                for j in 0..self.n + self.m {
                    if cand(j) {
                        let t = self.d[j].abs() / alpha[j].abs();
                        if t < tmin - 1e-12 {
                            tmin = t;
                            q = j;
                        }
                    }
                }
            } else {
                let mut tmax = f64::INFINITY;
                for j in 0..self.n + self.m {
                    if cand(j) {
                        let t = (self.d[j].abs() + self.tol_dual) / alpha[j].abs();
                        if t < tmax {
                            tmax = t;
                        }
                    }
                }
                let mut amax = 0.0;
                for j in 0..self.n + self.m {
                    if cand(j) && self.d[j].abs() / alpha[j].abs() <= tmax && alpha[j].abs() > amax {
                        amax = alpha[j].abs();
                        q = j;
                    }
                }
            }
            if q == usize::MAX {
                return Ok(LpStatus::Infeasible);
            }

            let mut col = self.dense_column(q);
            self.lu.ftran(&mut col);
            let arq = col[r];
            if (arq - alpha[q]).abs() > 1e-7 * (1.0 + arq.abs()) || arq.abs() < PIVOT_TOL {
                if self.lu.num_updates() == 0 {
                    return Err(SolveError::Numerical("unstable dual simplex pivot".into()));
                }
                self.refactor();
                continue;
            }
            self.iterations += 1;

            // dual update
            let theta_d = self.d[q] / arq;
            if theta_d.abs() < 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_RUN && self.saved_cost.is_none() {
                    self.perturb_costs();
                    degenerate = 0;
                } else if degenerate > DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            for j in 0..self.n + self.m {
                if self.state[j] != VarState::Basic && alpha[j] != 0.0 {
                    self.d[j] -= theta_d * alpha[j];
                }
            }
            self.d[q] = 0.0;
            self.d[leave] = -theta_d;

            // primal update
            let delta_q = (self.x[leave] - target) / arq;
            for (p, &j) in self.basis.iter().enumerate() {
                if col[p] != 0.0 {
                    self.x[j] -= delta_q * col[p];
                }
            }
            self.x[q] += delta_q;
            self.x[leave] = target;
            self.state[leave] = if to_lower { VarState::Lower } else { VarState::Upper };
            self.state[q] = VarState::Basic;
            self.basis[r] = q;
            self.lu.update(r, &col);
            self.fresh = false;

            if cutoff.is_finite() && self.saved_cost.is_none() && self.objective() > cutoff + 1e-9 * (1.0 + cutoff.abs()) {
                // confirm with fresh factors before giving up on the node
                self.refactor();
                if self.max_dual_infeasibility() <= self.tol_dual && self.objective() > cutoff + 1e-9 * (1.0 + cutoff.abs()) {
                    return Ok(LpStatus::Cutoff);
                }
            }
        }
    }

    fn primal(&mut self) -> Result<LpStatus, SolveError> {
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            self.check_limit()?;
            if self.lu.num_updates() >= REFACTOR_EVERY {
                self.refactor();
            }
            // phase-dependent costs
            let mut cb = vec![0.0; self.m];
            let mut phase1 = false;
            for (p, &j) in self.basis.iter().enumerate() {
                let v = self.x[j];
                if v < self.lower[j] - self.tol_primal {
                    cb[p] = -1.0;
                    phase1 = true;
                } else if v > self.upper[j] + self.tol_primal {
                    cb[p] = 1.0;
                    phase1 = true;
                }
            }
            if !phase1 {
                for (p, &j) in self.basis.iter().enumerate() {
                    cb[p] = self.cost[j];
                }
                self.compute_duals();
            } else {
                self.d = self.compute_duals_for(&cb, &|_| 0.0);
            }

            // entering variable
            let mut q = usize::MAX;
            let mut best = self.tol_dual;
            for j in 0..self.n + self.m {
                let inf = self.dual_infeasibility(j);
                if inf > self.tol_dual {
                    if bland {
                        q = j;
                        break;
                    }
                    if inf > best {
                        best = inf;
                        q = j;
                    }
                }
            }
            if q == usize::MAX {
                if phase1 {
                    return Ok(LpStatus::Infeasible);
                }
                return Ok(LpStatus::Optimal);
            }
            let dir = if self.d[q] < 0.0 { 1.0 } else { -1.0 };
            let mut col = self.dense_column(q);
            self.lu.ftran(&mut col);

            // ratio test over basic variables moving by -dir * col * theta
            let ratio = |p: usize, relaxed: bool| -> Option<(f64, f64)> {
                let delta = -dir * col[p];
                if delta.abs() < PIVOT_TOL {
                    return None;
                }
                let j = self.basis[p];
                let (v, l, u) = (self.x[j], self.lower[j], self.upper[j]);
                let tol = if relaxed { self.tol_primal } else { 0.0 };
                let target = if delta < 0.0 {
                    if v > u + self.tol_primal {
                        u
                    } else if v >= l - self.tol_primal {
                        l
                    } else {
                        return None;
                    }
                } else if v < l - self.tol_primal {
                    l
                } else if v <= u + self.tol_primal {
                    u
                } else {
                    return None;
                };
                if !target.is_finite() {
                    return None;
                }
                let t = ((target - v).abs() + tol) / delta.abs();
                Some((t, target))
            };
            let flip = if self.lower[q].is_finite() && self.upper[q].is_finite() {
                self.upper[q] - self.lower[q]
            } else {
                f64::INFINITY
            };
            let mut leave_pos = usize::MAX;
            let mut theta;
            if bland {
                theta = f64::INFINITY;
                for p in 0..self.m {
                    if let Some((t, _)) = ratio(p, false) {
                        if t < theta - 1e-12 || (t <= theta + 1e-12 && leave_pos != usize::MAX && self.basis[p] < self.basis[leave_pos]) {
                            theta = t.min(theta);
                            leave_pos = p;
                        }
                    }
                }
            } else {
                let mut tmax = f64::INFINITY;
                for p in 0..self.m {
                    if let Some((t, _)) = ratio(p, true) {
                        tmax = tmax.min(t);
                    }
                }
                let mut amax = 0.0;
                theta = f64::INFINITY;
                for p in 0..self.m {
                    if let Some((t, _)) = ratio(p, false) {
                        if t <= tmax && col[p].abs() > amax {
                            amax = col[p].abs();
                            leave_pos = p;
                            theta = t;
                        }
                    }
                }
            }
            if flip.is_finite() && flip <= theta {
                // bound flip of the entering variable
                self.iterations += 1;
                for (p, &j) in self.basis.iter().enumerate() {
                    self.x[j] -= dir * col[p] * flip;
                }
                if self.state[q] == VarState::Lower {
                    self.state[q] = VarState::Upper;
                    self.x[q] = self.upper[q];
                } else {
                    self.state[q] = VarState::Lower;
                    self.x[q] = self.lower[q];
                }
                degenerate = 0;
                bland = false;
                continue;
            }
            if leave_pos == usize::MAX {
                if phase1 {
                    return Err(SolveError::Numerical("unbounded phase-one direction".into()));
                }
                return Ok(LpStatus::Unbounded);
            }
            self.iterations += 1;
            let (_, target) = ratio(leave_pos, false).unwrap();
            let theta = theta.max(0.0);
            if theta < 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            let leave = self.basis[leave_pos];
            for (p, &j) in self.basis.iter().enumerate() {
                if col[p] != 0.0 {
                    self.x[j] -= dir * col[p] * theta;
                }
            }
            self.x[q] += dir * theta;
            self.x[leave] = target;
            self.state[leave] = if target == self.lower[leave] { VarState::Lower } else { VarState::Upper };
            self.state[q] = VarState::Basic;
            self.basis[leave_pos] = q;
            self.lu.update(leave_pos, &col);
            self.fresh = false;
        }
    }
}
