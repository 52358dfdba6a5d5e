use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::SolveError;

/// Objective direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A linear program in the row-bounded form
///
/// ```text
///   opt  c'x
///   s.t. row_lower <= A x <= row_upper
///        col_lower <=  x  <= col_upper
/// ```
///
/// The constraint matrix is kept as a list of `(row, col, value)` triplets so
/// that model builders can emit coefficients in whatever order is natural to
/// them. Duplicate triplets are summed when the matrix is compressed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    pub col_names: Vec<String>,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub row_names: Vec<String>,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            objective: Vec::new(),
            col_lower: Vec::new(),
            col_upper: Vec::new(),
            col_names: Vec::new(),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            row_names: Vec::new(),
            triplets: Vec::new(),
        }
    }

    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.row_lower.len()
    }

    /// Adds a column and returns its index.
    pub fn add_col(&mut self, name: impl Into<String>, obj: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(obj);
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.col_names.push(name.into());
        self.objective.len() - 1
    }

    /// Adds a row `lower <= sum(coef * x[col]) <= upper` and returns its index.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        coefs: &[(usize, f64)],
    ) -> usize {
        let r = self.row_lower.len();
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        self.row_names.push(name.into());
        for &(c, v) in coefs {
            if v != 0.0 {
                self.triplets.push((r, c, v));
            }
        }
        r
    }

    /// Checks dimensions, bound ordering and finiteness of the data.
    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_cols();
        let m = self.num_rows();
        if self.col_lower.len() != n || self.col_upper.len() != n || self.col_names.len() != n {
            return Err(SolveError::Malformed("column arrays differ in length".into()));
        }
        if self.row_upper.len() != m || self.row_names.len() != m {
            return Err(SolveError::Malformed("row arrays differ in length".into()));
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(SolveError::Malformed(format!(
                    "objective coefficient of column {} is not finite",
                    self.col_names[j]
                )));
            }
            if self.col_lower[j].is_nan()
                || self.col_upper[j].is_nan()
                || self.col_lower[j] > self.col_upper[j]
                || self.col_lower[j] == f64::INFINITY
                || self.col_upper[j] == f64::NEG_INFINITY
            {
                return Err(SolveError::Malformed(format!(
                    "column {} has invalid bounds [{}, {}]",
                    self.col_names[j], self.col_lower[j], self.col_upper[j]
                )));
            }
        }
        for i in 0..m {
            if self.row_lower[i].is_nan()
                || self.row_upper[i].is_nan()
                || self.row_lower[i] > self.row_upper[i]
                || self.row_lower[i] == f64::INFINITY
                || self.row_upper[i] == f64::NEG_INFINITY
            {
                return Err(SolveError::Malformed(format!(
                    "row {} has invalid bounds [{}, {}]",
                    self.row_names[i], self.row_lower[i], self.row_upper[i]
                )));
            }
        }
        for &(r, c, v) in &self.triplets {
            if r >= m || c >= n {
                return Err(SolveError::Malformed(format!(
                    "triplet ({r}, {c}) outside a {m}x{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(SolveError::Malformed(format!(
                    "coefficient ({}, {}) is not finite",
                    self.row_names[r], self.col_names[c]
                )));
            }
        }
        Ok(())
    }

    /// Objective coefficients for the equivalent minimization problem.
    pub(crate) fn min_costs(&self) -> Vec<f64> {
        match self.sense {
            Sense::Minimize => self.objective.clone(),
            Sense::Maximize => self.objective.iter().map(|c| -c).collect(),
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Row activities `A x`.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.num_rows()];
        for &(r, c, v) in &self.triplets {
            act[r] += v * x[c];
        }
        act
    }

    /// Largest violation of any row or column bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.num_cols() {
            worst = worst.max(self.col_lower[j] - x[j]).max(x[j] - self.col_upper[j]);
        }
        for (i, a) in self.row_activity(x).into_iter().enumerate() {
            worst = worst.max(self.row_lower[i] - a).max(a - self.row_upper[i]);
        }
        worst
    }
}

/// A linear program with a subset of columns restricted to integer values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MilpProblem {
    pub lp: LinearProgram,
    pub integer_columns: BTreeSet<usize>,
}

impl MilpProblem {
    pub fn new(lp: LinearProgram) -> Self {
        MilpProblem { lp, integer_columns: BTreeSet::new() }
    }

    /// Adds a binary column.
    pub fn add_binary(&mut self, name: impl Into<String>, obj: f64) -> usize {
        let c = self.lp.add_col(name, obj, 0.0, 1.0);
        self.integer_columns.insert(c);
        c
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        self.lp.validate()?;
        for &c in &self.integer_columns {
            if c >= self.lp.num_cols() {
                return Err(SolveError::Malformed(format!("integer column {c} does not exist")));
            }
            if self.lp.col_lower[c] < 0.0 || self.lp.col_upper[c] > 1.0 {
                return Err(SolveError::Malformed(format!(
                    "integer column {} must have bounds within [0, 1]",
                    self.lp.col_names[c]
                )));
            }
        }
        Ok(())
    }

    /// Largest distance of an integer column from the nearest integer.
    pub fn max_integrality_violation(&self, x: &[f64]) -> f64 {
        self.integer_columns
            .iter()
            .map(|&c| (x[c] - x[c].round()).abs())
            .fold(0.0, f64::max)
    }
}

/// Compressed sparse column copy of a constraint matrix.
#[derive(Debug, Clone)]
pub(crate) struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub col_start: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_start = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_idx.push(r);
            values.push(v);
            col_start[c + 1] += 1;
        }
        for c in 0..ncols {
            col_start[c + 1] += col_start[c];
        }
        // drop entries that cancelled to zero
        let mut m = CscMatrix { nrows, ncols, col_start, row_idx, values };
        m.prune();
        m
    }

    fn prune(&mut self) {
        let mut start = vec![0usize; self.ncols + 1];
        let mut ri = Vec::with_capacity(self.row_idx.len());
        let mut vs = Vec::with_capacity(self.values.len());
        for c in 0..self.ncols {
            for k in self.col_start[c]..self.col_start[c + 1] {
                if self.values[k] != 0.0 {
                    ri.push(self.row_idx[k]);
                    vs.push(self.values[k]);
                }
            }
            start[c + 1] = ri.len();
        }
        self.col_start = start;
        self.row_idx = ri;
        self.values = vs;
    }

    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_start[c]..self.col_start[c + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut count = vec![0usize; self.nrows + 1];
        for &r in &self.row_idx {
            count[r + 1] += 1;
        }
        for r in 0..self.nrows {
            count[r + 1] += count[r];
        }
        let mut pos = count.clone();
        let mut ri = vec![0usize; self.row_idx.len()];
        let mut vs = vec![0.0; self.values.len()];
        for c in 0..self.ncols {
            for (r, v) in self.col(c) {
                ri[pos[r]] = c;
                vs[pos[r]] = v;
                pos[r] += 1;
            }
        }
        CscMatrix { nrows: self.ncols, ncols: self.nrows, col_start: count, row_idx: ri, values: vs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_triplets_are_summed() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0), (1, 0, 1.0), (1, 0, -1.0)]);
        let c0: Vec<_> = m.col(0).collect();
        assert_eq!(c0, vec![(0, 4.0)]);
        let t = m.transpose();
        assert_eq!(t.col(1).collect::<Vec<_>>(), vec![(1, 2.0)]);
    }

    #[test]
    fn validation_rejects_inverted_bounds() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        lp.add_col("x", 1.0, 2.0, 1.0);
        assert!(lp.validate().is_err());
    }

    #[test]
    fn integer_columns_must_be_binary_bounded() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        lp.add_col("x", 1.0, 0.0, 2.0);
        let mut p = MilpProblem::new(lp);
        p.integer_columns.insert(0);
        assert!(p.validate().is_err());
    }
}
