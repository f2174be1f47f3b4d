//! Linear programs and the backends that solve them.
//!
//! A [`LinearProgram`] is `min c'y` subject to sparse `<=` and `=` rows, with
//! each variable either free or nonnegative. Any such program can be
//! rewritten as `G y <= r` with `y` free; keeping equalities and sign
//! constraints explicit avoids doubling rows.

mod simplex;
mod sparse;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use simplex::DenseSimplex;
pub use sparse::SparseSimplex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub nonneg: Vec<bool>,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, nonneg: bool) -> usize {
        self.objective.push(cost);
        self.nonneg.push(nonneg);
        self.objective.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, cost: f64, nonneg: bool) -> std::ops::Range<usize> {
        let start = self.num_vars();
        for _ in 0..count {
            self.add_var(cost, nonneg);
        }
        start..self.num_vars()
    }

    fn push(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        let coeffs = merge_terms(coeffs);
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars()));
        self.rows.push(LpRow { coeffs, kind, rhs });
    }

    /// `coeffs . y <= rhs`
    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.push(coeffs, RowKind::Le, rhs);
    }

    /// `coeffs . y >= rhs`
    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let neg = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.push(neg, RowKind::Le, -rhs);
    }

    /// `coeffs . y = rhs`
    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.push(coeffs, RowKind::Eq, rhs);
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    pub fn row_activity(row: &LpRow, y: &[f64]) -> f64 {
        row.coeffs.iter().map(|&(j, a)| a * y[j]).sum()
    }

    /// Largest violation of any row or sign constraint at `y`.
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let lhs = Self::row_activity(row, y);
            let v = match row.kind {
                RowKind::Le => lhs - row.rhs,
                RowKind::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &nn) in self.nonneg.iter().enumerate() {
            if nn {
                worst = worst.max(-y[j]);
            }
        }
        worst
    }

    pub fn rhs_inf_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max)
    }

    /// Plain-text dump: a header, the objective, the sign constraints and one
    /// dense row per constraint.
    ///
    /// ```text
    /// lp <num_vars> <num_rows>
    /// min c_0 c_1 ...
    /// nonneg j_0 j_1 ...
    /// le|eq a_0 a_1 ... rhs
    /// ```
    pub fn to_text(&self) -> String {
        let n = self.num_vars();
        let mut out = String::new();
        let _ = writeln!(out, "lp {} {}", n, self.rows.len());
        out.push_str("min");
        for c in &self.objective {
            let _ = write!(out, " {c:e}");
        }
        out.push_str("\nnonneg");
        for (j, &nn) in self.nonneg.iter().enumerate() {
            if nn {
                let _ = write!(out, " {j}");
            }
        }
        out.push('\n');
        let mut dense = vec![0.0; n];
        for row in &self.rows {
            dense.iter_mut().for_each(|x| *x = 0.0);
            for &(j, a) in &row.coeffs {
                dense[j] += a;
            }
            out.push_str(match row.kind {
                RowKind::Le => "le",
                RowKind::Eq => "eq",
            });
            for a in &dense {
                let _ = write!(out, " {a:e}");
            }
            let _ = writeln!(out, " {:e}", row.rhs);
        }
        out
    }

    /// Inverse of [`LinearProgram::to_text`].
    pub fn from_text(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()?
            .strip_prefix("lp ")?
            .split_whitespace()
            .map(|t| t.parse().ok())
            .collect::<Option<_>>()?;
        let (n, m) = (*header.first()?, *header.get(1)?);
        let objective: Vec<f64> = lines
            .next()?
            .strip_prefix("min")?
            .split_whitespace()
            .map(|t| t.parse().ok())
            .collect::<Option<_>>()?;
        let mut nonneg = vec![false; n];
        for t in lines.next()?.strip_prefix("nonneg")?.split_whitespace() {
            *nonneg.get_mut(t.parse::<usize>().ok()?)? = true;
        }
        let mut rows = Vec::with_capacity(m);
        for line in lines.take(m) {
            let mut toks = line.split_whitespace();
            let kind = match toks.next()? {
                "le" => RowKind::Le,
                "eq" => RowKind::Eq,
                _ => return None,
            };
            let vals: Vec<f64> = toks.map(|t| t.parse().ok()).collect::<Option<_>>()?;
            if vals.len() != n + 1 {
                return None;
            }
            let coeffs = vals[..n]
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, a)| (j, *a))
                .collect();
            rows.push(LpRow {
                coeffs,
                kind,
                rhs: vals[n],
            });
        }
        (objective.len() == n && rows.len() == m).then_some(LinearProgram {
            objective,
            nonneg,
            rows,
        })
    }
}

/// Sort by column and sum duplicate entries, dropping exact zeros.
fn merge_terms(mut coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
    for (j, a) in coeffs {
        match out.last_mut() {
            Some((lj, la)) if *lj == j => *la += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|&(_, a)| a != 0.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Largest |dual * slack| or |reduced cost * value| product, when the
    /// backend exposes duals.
    pub complementarity: Option<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn failed(status: LpStatus, lp: &LinearProgram, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![0.0; lp.num_vars()],
            objective: f64::NAN,
            max_violation: f64::NAN,
            complementarity: None,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

pub trait LpBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, lp: &LinearProgram) -> LpSolution;
}

/// Dense simplex for small programs, sparse revised simplex above a size
/// threshold (rows x columns of the dense tableau).
#[derive(Debug, Clone)]
pub struct AutoBackend {
    pub dense: DenseSimplex,
    pub sparse: SparseSimplex,
    pub dense_limit: usize,
}

impl Default for AutoBackend {
    fn default() -> Self {
        AutoBackend {
            dense: DenseSimplex::default(),
            sparse: SparseSimplex,
            dense_limit: 400_000,
        }
    }
}

impl AutoBackend {
    pub fn uses_dense(&self, lp: &LinearProgram) -> bool {
        let cols = lp.num_vars() + lp.nonneg.iter().filter(|&&n| !n).count() + lp.rows.len();
        lp.rows.len() * cols <= self.dense_limit
    }
}

impl LpBackend for AutoBackend {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        if self.uses_dense(lp) {
            self.dense.solve(lp)
        } else {
            let sol = self.sparse.solve(lp);
            // Fall back to the dense method if the sparse one errs numerically.
            if sol.status == LpStatus::IterationLimit {
                return self.dense.solve(lp);
            }
            sol
        }
    }
}

/// Solve with the default backend.
pub fn solve_lp(lp: &LinearProgram) -> LpSolution {
    AutoBackend::default().solve(lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, true);
        let y = lp.add_var(-2.0, false);
        lp.add_le(vec![(x, 1.0), (y, 3.0)], 4.0);
        lp.add_eq(vec![(y, 1.0)], 0.5);
        let text = lp.to_text();
        assert!(text.starts_with("lp 2 2\nmin "));
        assert_eq!(LinearProgram::from_text(&text).unwrap(), lp);
    }

    #[test]
    fn duplicate_terms_merge() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, true);
        lp.add_le(vec![(x, 1.0), (x, 2.0)], 1.0);
        assert_eq!(lp.rows[0].coeffs, vec![(x, 3.0)]);
    }
}
