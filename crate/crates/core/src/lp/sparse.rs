//! Sparse revised simplex, backed by `minilp`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{LinearProgram, LpBackend, LpSolution, LpStatus, RowKind};

/// Does not expose duals, so [`LpSolution::complementarity`] is `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseSimplex;

impl LpBackend for SparseSimplex {
    fn name(&self) -> &'static str {
        "sparse-simplex"
    }

    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = lp
            .objective
            .iter()
            .zip(&lp.nonneg)
            .map(|(&c, &nn)| {
                let lo = if nn { 0.0 } else { f64::NEG_INFINITY };
                problem.add_var(c, (lo, f64::INFINITY))
            })
            .collect();
        for row in &lp.rows {
            let expr: Vec<_> = row.coeffs.iter().map(|&(j, a)| (vars[j], a)).collect();
            let op = match row.kind {
                RowKind::Le => ComparisonOp::Le,
                RowKind::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(expr, op, row.rhs);
        }
        match problem.solve() {
            Ok(sol) => {
                let x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
                LpSolution {
                    status: LpStatus::Optimal,
                    objective: lp.objective_value(&x),
                    max_violation: lp.max_violation(&x),
                    complementarity: None,
                    x,
                    iterations: 0,
                }
            }
            Err(minilp::Error::Infeasible) => LpSolution::failed(LpStatus::Infeasible, lp, 0),
            Err(minilp::Error::Unbounded) => LpSolution::failed(LpStatus::Unbounded, lp, 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_small_program() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-3.0, true);
        let y = lp.add_var(-5.0, true);
        lp.add_le(vec![(x, 1.0)], 4.0);
        lp.add_le(vec![(y, 2.0)], 12.0);
        lp.add_le(vec![(x, 3.0), (y, 2.0)], 18.0);
        let sol = SparseSimplex.solve(&lp);
        assert!((sol.objective + 36.0).abs() < 1e-8);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, false);
        lp.add_le(vec![(x, 1.0)], 0.0);
        lp.add_ge(vec![(x, 1.0)], 1.0);
        assert_eq!(SparseSimplex.solve(&lp).status, LpStatus::Infeasible);
    }
}
