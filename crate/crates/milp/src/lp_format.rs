//! CPLEX LP text export, for cross-checking models with external solvers.

use std::fmt::Write;

use crate::problem::{CscMatrix, MilpProblem, Sense};

fn sanitize(name: &str, fallback: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("{fallback}_{s}")
    } else {
        s
    }
}

fn term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {coef} {name}");
    } else {
        let _ = write!(out, " + {coef} {name}");
    }
}

/// Renders the problem in LP format.
pub fn write_lp(p: &MilpProblem) -> String {
    let lp = &p.lp;
    let cols: Vec<String> = lp.col_names.iter().enumerate().map(|(j, n)| sanitize(n, &format!("x{j}"))).collect();
    let mut out = String::new();
    out.push_str(match lp.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    let mut first = true;
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            term(&mut out, c, &cols[j], first);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    let a = CscMatrix::from_triplets(lp.num_rows(), lp.num_cols(), &lp.triplets).transpose();
    for i in 0..lp.num_rows() {
        let name = sanitize(&lp.row_names[i], &format!("r{i}"));
        let mut body = String::new();
        let mut first = true;
        for (j, v) in a.col(i) {
            term(&mut body, v, &cols[j], first);
            first = false;
        }
        if first {
            continue;
        }
        let (lo, hi) = (lp.row_lower[i], lp.row_upper[i]);
        if lo == hi {
            let _ = writeln!(out, " {name}:{body} = {lo}");
        } else {
            if lo.is_finite() {
                let _ = writeln!(out, " {name}_lo:{body} >= {lo}");
            }
            if hi.is_finite() {
                let _ = writeln!(out, " {name}_hi:{body} <= {hi}");
            }
        }
    }
    out.push_str("Bounds\n");
    for j in 0..lp.num_cols() {
        let (lo, hi) = (lp.col_lower[j], lp.col_upper[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {} free", cols[j]);
            }
            (true, true) if lo == hi => {
                let _ = writeln!(out, " {} = {lo}", cols[j]);
            }
            (true, true) => {
                let _ = writeln!(out, " {lo} <= {} <= {hi}", cols[j]);
            }
            (true, false) => {
                let _ = writeln!(out, " {} >= {lo}", cols[j]);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {} <= {hi}", cols[j]);
            }
        }
    }
    if !p.integer_columns.is_empty() {
        out.push_str("Binaries\n");
        for &j in &p.integer_columns {
            let _ = writeln!(out, " {}", cols[j]);
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LinearProgram;

    #[test]
    fn renders_sections() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let a = lp.add_col("a", 2.0, 0.0, 1.0);
        let b = lp.add_col("b", 3.0, 0.0, 1.0);
        lp.add_row("pick one", f64::NEG_INFINITY, 1.0, &[(a, 1.0), (b, 1.0)]);
        let mut p = MilpProblem::new(lp);
        p.integer_columns.extend([a, b]);
        let text = write_lp(&p);
        assert!(text.starts_with("Maximize\n obj: 2 a + 3 b\n"));
        assert!(text.contains(" pick_one_hi: 1 a + 1 b <= 1\n"));
        assert!(text.contains("Binaries\n a\n b\nEnd\n"));
    }
}
