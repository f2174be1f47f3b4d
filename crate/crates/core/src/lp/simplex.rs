//! Two-phase dense tableau simplex.
//!
//! Pricing is Dantzig's most-negative reduced cost until a run of degenerate
//! pivots, then Bland's smallest-index rule until the objective moves again.
//! Ratio-test ties always go to the smallest basic column index, so the
//! pivot sequence is a pure function of the input.

use nalgebra::{DMatrix, DVector};

use super::{LinearProgram, LpBackend, LpSolution, LpStatus, RowKind};

#[derive(Debug, Clone)]
pub struct DenseSimplex {
    pub max_iterations: usize,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    pub feasibility_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
    /// Recompute the final basic solution and duals with an LU solve.
    pub refine_limit: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex {
            max_iterations: 200_000,
            pivot_tol: 1e-9,
            optimality_tol: 1e-10,
            feasibility_tol: 1e-9,
            degenerate_switch: 25,
            refine_limit: 1500,
        }
    }
}

struct Tableau {
    m: usize,
    width: usize, // columns + rhs
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    allowed: Vec<bool>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, s: usize) {
        let w = self.width;
        let p = self.data[r * w + s];
        let row: Vec<f64> = self.data[r * w..(r + 1) * w].iter().map(|x| x / p).collect();
        self.data[r * w..(r + 1) * w].copy_from_slice(&row);
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + s];
            if f == 0.0 {
                continue;
            }
            let target = &mut self.data[i * w..(i + 1) * w];
            for (t, &v) in target.iter_mut().zip(&row) {
                *t -= f * v;
            }
            target[s] = 0.0;
        }
        let f = self.obj[s];
        if f != 0.0 {
            for (t, &v) in self.obj.iter_mut().zip(&row) {
                *t -= f * v;
            }
            self.obj[s] = 0.0;
        }
        self.basis[r] = s;
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj = cost.to_vec();
        self.obj.push(0.0);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                self.obj[j] -= cb * self.data[i * w + j];
            }
        }
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl DenseSimplex {
    fn run_phase(&self, t: &mut Tableau, iterations: &mut usize) -> PhaseEnd {
        let ncols = t.width - 1;
        let mut degenerate_run = 0usize;
        loop {
            if *iterations >= self.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            let bland = degenerate_run >= self.degenerate_switch;
            let mut entering = None;
            let mut best = -self.optimality_tol;
            for j in 0..ncols {
                if !t.allowed[j] {
                    continue;
                }
                let d = t.obj[j];
                if d < -self.optimality_tol {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if d < best {
                        best = d;
                        entering = Some(j);
                    }
                }
            }
            let Some(s) = entering else {
                return PhaseEnd::Optimal;
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..t.m {
                let a = t.at(i, s);
                if a <= self.pivot_tol {
                    continue;
                }
                let ratio = t.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best_ratio)) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if (ratio < best_ratio && !tie) || (tie && t.basis[i] < t.basis[r]) {
                            Some((i, ratio))
                        } else {
                            Some((r, best_ratio))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return PhaseEnd::Unbounded;
            };
            if ratio <= self.feasibility_tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            t.pivot(r, s);
            *iterations += 1;
        }
    }
}

/// Column layout of the standard-form tableau.
struct Layout {
    pos: Vec<usize>,
    neg: Vec<Option<usize>>,
    n_struct: usize,
    slack: Vec<Option<usize>>,
    art: Vec<Option<usize>>,
    ncols: usize,
    sign: Vec<f64>,
}

fn layout(lp: &LinearProgram) -> Layout {
    let n = lp.num_vars();
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    let mut c = 0;
    for j in 0..n {
        pos.push(c);
        c += 1;
        if lp.nonneg[j] {
            neg.push(None);
        } else {
            neg.push(Some(c));
            c += 1;
        }
    }
    let n_struct = c;
    let mut slack = Vec::with_capacity(lp.rows.len());
    for row in &lp.rows {
        if row.kind == RowKind::Le {
            slack.push(Some(c));
            c += 1;
        } else {
            slack.push(None);
        }
    }
    let mut sign = Vec::with_capacity(lp.rows.len());
    let mut art = Vec::with_capacity(lp.rows.len());
    for row in &lp.rows {
        let s = if row.rhs < 0.0 { -1.0 } else { 1.0 };
        sign.push(s);
        if row.kind == RowKind::Eq || s < 0.0 {
            art.push(Some(c));
            c += 1;
        } else {
            art.push(None);
        }
    }
    Layout {
        pos,
        neg,
        n_struct,
        slack,
        art,
        ncols: c,
        sign,
    }
}

impl LpBackend for DenseSimplex {
    fn name(&self) -> &'static str {
        "dense-simplex"
    }

    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        let m = lp.rows.len();
        let lay = layout(lp);
        let width = lay.ncols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        for (i, row) in lp.rows.iter().enumerate() {
            let s = lay.sign[i];
            let base = i * width;
            for &(j, a) in &row.coeffs {
                data[base + lay.pos[j]] += s * a;
                if let Some(nj) = lay.neg[j] {
                    data[base + nj] -= s * a;
                }
            }
            if let Some(sc) = lay.slack[i] {
                data[base + sc] = s;
            }
            if let Some(ac) = lay.art[i] {
                data[base + ac] = 1.0;
                basis[i] = ac;
            } else {
                basis[i] = lay.slack[i].expect("row without artificial has a slack");
            }
            data[base + width - 1] = s * row.rhs;
        }
        // Original columns are kept for refinement.
        let original = data.clone();
        let mut t = Tableau {
            m,
            width,
            data,
            obj: Vec::new(),
            basis,
            allowed: vec![true; lay.ncols],
        };
        let mut iterations = 0;

        let is_art: Vec<bool> = {
            let mut v = vec![false; lay.ncols];
            for a in lay.art.iter().flatten() {
                v[*a] = true;
            }
            v
        };
        if lay.art.iter().any(Option::is_some) {
            let phase1: Vec<f64> = (0..lay.ncols).map(|j| if is_art[j] { 1.0 } else { 0.0 }).collect();
            t.set_objective(&phase1);
            match self.run_phase(&mut t, &mut iterations) {
                PhaseEnd::Optimal => {}
                PhaseEnd::IterationLimit => return LpSolution::failed(LpStatus::IterationLimit, lp, iterations),
                PhaseEnd::Unbounded => return LpSolution::failed(LpStatus::Infeasible, lp, iterations),
            }
            let infeasibility: f64 = (0..m).filter(|&i| is_art[t.basis[i]]).map(|i| t.rhs(i)).sum();
            if infeasibility > 1e-8 * (1.0 + lp.rhs_inf_norm()) {
                return LpSolution::failed(LpStatus::Infeasible, lp, iterations);
            }
            // Drive remaining artificials out of the basis where possible.
            for i in 0..m {
                if !is_art[t.basis[i]] {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for j in 0..lay.ncols {
                    if is_art[j] {
                        continue;
                    }
                    let a = t.at(i, j).abs();
                    if a > 1e-9 && best.is_none_or(|(_, b)| a > b) {
                        best = Some((j, a));
                    }
                }
                if let Some((j, _)) = best {
                    t.pivot(i, j);
                }
            }
            for j in 0..lay.ncols {
                if is_art[j] {
                    t.allowed[j] = false;
                }
            }
        }

        let mut cost = vec![0.0; lay.ncols];
        for j in 0..lp.num_vars() {
            cost[lay.pos[j]] = lp.objective[j];
            if let Some(nj) = lay.neg[j] {
                cost[nj] = -lp.objective[j];
            }
        }
        t.set_objective(&cost);
        match self.run_phase(&mut t, &mut iterations) {
            PhaseEnd::Optimal => {}
            PhaseEnd::IterationLimit => return LpSolution::failed(LpStatus::IterationLimit, lp, iterations),
            PhaseEnd::Unbounded => return LpSolution::failed(LpStatus::Unbounded, lp, iterations),
        }

        let mut values = vec![0.0; lay.ncols];
        for i in 0..m {
            values[t.basis[i]] = t.rhs(i).max(0.0);
        }
        let mut complementarity = None;
        // Rows still carrying an artificial are redundant.
        let active: Vec<usize> = (0..m).filter(|&i| !is_art[t.basis[i]]).collect();
        if !active.is_empty() && active.len() <= self.refine_limit {
            let k = active.len();
            let bmat = DMatrix::from_fn(k, k, |r, c| original[active[r] * width + t.basis[active[c]]]);
            let rhs = DVector::from_fn(k, |r, _| original[active[r] * width + width - 1]);
            let cb = DVector::from_fn(k, |r, _| cost[t.basis[active[r]]]);
            let lu = bmat.clone().lu();
            if let Some(xb) = lu.solve(&rhs) {
                if xb.iter().all(|v| *v >= -1e-7) {
                    for (r, &i) in active.iter().enumerate() {
                        values[t.basis[i]] = xb[r].max(0.0);
                    }
                }
            }
            if let Some(pi_norm) = bmat.transpose().lu().solve(&cb) {
                let mut pi = vec![0.0; m];
                for (r, &i) in active.iter().enumerate() {
                    pi[i] = pi_norm[r] * lay.sign[i];
                }
                complementarity = Some(complementarity_residual(lp, &pi, &structural(&lay, &values, lp)));
            }
        }
        let x = structural(&lay, &values, lp);
        LpSolution {
            status: LpStatus::Optimal,
            objective: lp.objective_value(&x),
            max_violation: lp.max_violation(&x),
            complementarity,
            x,
            iterations,
        }
    }
}

fn structural(lay: &Layout, values: &[f64], lp: &LinearProgram) -> Vec<f64> {
    debug_assert!(lay.n_struct <= values.len());
    (0..lp.num_vars())
        .map(|j| values[lay.pos[j]] - lay.neg[j].map_or(0.0, |nj| values[nj]))
        .collect()
}

/// Largest complementary-slackness product for duals `pi` of the rows.
fn complementarity_residual(lp: &LinearProgram, pi: &[f64], x: &[f64]) -> f64 {
    let mut reduced = lp.objective.clone();
    let mut worst = 0.0f64;
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            reduced[j] -= pi[i] * a;
        }
        if row.kind == RowKind::Le {
            let slack = row.rhs - LinearProgram::row_activity(row, x);
            worst = worst.max((pi[i] * slack).abs());
        }
    }
    for (j, &nn) in lp.nonneg.iter().enumerate() {
        if nn {
            worst = worst.max((reduced[j] * x[j]).abs());
        } else {
            worst = worst.max(reduced[j].abs());
        }
    }
    worst
}
