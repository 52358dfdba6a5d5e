//! Primal-dual interior point method for small dense nonlinear programs
//!
//! ```text
//!     min f(x)   s.t.   g(x) = 0,   h(x) <= 0
//! ```
//!
//! Inequalities get slacks `z > 0` with `h(x) + z = 0`; each iteration takes
//! a Newton step on the perturbed KKT conditions, with the slack and
//! multiplier updates eliminated so that only the `(x, lambda)` block is
//! factorized.

use log::trace;
use nalgebra::{DMatrix, DVector};

/// First- and second-order information of a nonlinear program.
pub(crate) trait Nlp {
    fn n(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_in(&self) -> usize;
    /// Objective value and gradient.
    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
    /// Equality values and Jacobian (`n_eq x n`).
    fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
    /// Inequality values and Jacobian (`n_in x n`).
    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
    /// Hessian of the Lagrangian `f + lam' g + mu' h`.
    fn hessian(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub cost_tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { feas_tol: 1e-9, grad_tol: 1e-8, comp_tol: 1e-9, cost_tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub x: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

const XI: f64 = 0.99995;
const SIGMA: f64 = 0.1;
const Z0: f64 = 1.0;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn solve<P: Nlp>(p: &P, x0: DVector<f64>, opts: &IpmOptions) -> IpmResult {
    let (n, n_eq, n_in) = (p.n(), p.n_eq(), p.n_in());
    let mut x = x0;
    let (mut f, mut df) = p.objective(&x);
    let (mut g, mut jg) = p.equalities(&x);
    let (mut h, mut jh) = p.inequalities(&x);

    let mut gamma = 1.0;
    let mut lam = DVector::zeros(n_eq);
    let mut z = DVector::from_element(n_in, Z0);
    let mut mu = DVector::from_element(n_in, Z0);
    for k in 0..n_in {
        if h[k] < -Z0 {
            z[k] = -h[k];
        }
        if gamma / z[k] > Z0 {
            mu[k] = gamma / z[k];
        }
    }

    let mut best = (f64::INFINITY, x.clone(), f);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let lx = &df + jg.tr_mul(&lam) + jh.tr_mul(&mu);
        let lxx = p.hessian(&x, &lam, &mu);

        // reduced system in (dx, dlam)
        let w = DVector::from_iterator(n_in, (0..n_in).map(|k| mu[k] / z[k]));
        let mut m = lxx;
        for k in 0..n_in {
            let row = jh.row(k);
            let nz: Vec<(usize, f64)> = row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
            for &(a, va) in &nz {
                for &(b, vb) in &nz {
                    m[(a, b)] += w[k] * va * vb;
                }
            }
        }
        let rhs_h = DVector::from_iterator(n_in, (0..n_in).map(|k| (mu[k] * h[k] + gamma) / z[k]));
        let nvec = &lx + jh.tr_mul(&rhs_h);

        let dim = n + n_eq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((n, 0), (n_eq, n)).copy_from(&jg);
        kkt.view_mut((0, n), (n, n_eq)).copy_from(&jg.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&nvec));
        rhs.rows_mut(n, n_eq).copy_from(&(-&g));

        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                // regularize a singular step
                for i in 0..n {
                    kkt[(i, i)] += 1e-8;
                }
                for i in n..dim {
                    kkt[(i, i)] -= 1e-10;
                }
                match kkt.lu().solve(&rhs) {
                    Some(s) if s.iter().all(|v| v.is_finite()) => s,
                    _ => break,
                }
            }
        };
        let dx = sol.rows(0, n).into_owned();
        let dlam = sol.rows(n, n_eq).into_owned();
        let dz = -&h - &z - &jh * &dx;
        let dmu = DVector::from_iterator(n_in, (0..n_in).map(|k| -mu[k] + (gamma - mu[k] * dz[k]) / z[k]));

        let mut alpha_p: f64 = 1.0;
        let mut alpha_d: f64 = 1.0;
        for k in 0..n_in {
            if dz[k] < 0.0 {
                alpha_p = alpha_p.min(XI * z[k] / -dz[k]);
            }
            if dmu[k] < 0.0 {
                alpha_d = alpha_d.min(XI * mu[k] / -dmu[k]);
            }
        }
        x += alpha_p * &dx;
        z += alpha_p * &dz;
        lam += alpha_d * &dlam;
        mu += alpha_d * &dmu;
        if n_in > 0 {
            gamma = SIGMA * z.dot(&mu) / n_in as f64;
        }

        let f0 = f;
        (f, df) = p.objective(&x);
        (g, jg) = p.equalities(&x);
        (h, jh) = p.inequalities(&x);
        if !f.is_finite() || x.iter().any(|v| !v.is_finite()) {
            break;
        }

        let lx = &df + jg.tr_mul(&lam) + jh.tr_mul(&mu);
        let max_h = h.iter().fold(0.0f64, |m, v| m.max(*v));
        let infeas = inf_norm(&g).max(max_h);
        let feas = infeas / (1.0 + inf_norm(&x).max(inf_norm(&z)));
        let grad = inf_norm(&lx) / (1.0 + inf_norm(&lam).max(inf_norm(&mu)));
        let comp = z.dot(&mu) / (1.0 + inf_norm(&x));
        let cost = (f - f0).abs() / (1.0 + f0.abs());
        trace!("ipm it {it}: f={f:.9} feas={feas:.2e} grad={grad:.2e} comp={comp:.2e}");

        if infeas < best.0 || (infeas <= opts.feas_tol && f < best.2) {
            best = (infeas, x.clone(), f);
        }
        if feas < opts.feas_tol && grad < opts.grad_tol && comp < opts.comp_tol && cost < opts.cost_tol {
            converged = true;
            break;
        }
        if alpha_p < 1e-12 && alpha_d < 1e-12 {
            break;
        }
    }
    if converged {
        IpmResult { x, converged, iterations }
    } else {
        IpmResult { x: best.1, converged, iterations }
    }
}
