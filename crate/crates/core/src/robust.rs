//! Robust finite-horizon programs under affine disturbance feedback.
//!
//! Inputs follow `u = h + M w` with `M` strictly block lower triangular, so
//! `u_t` only reacts to errors that have already been realized. Every
//! constraint row `a(h, M)' w + b(h) <= r` that must hold for all `w` in a
//! polytope `{w : E w + F z <= g}` is replaced by its dual certificate
//! `exists lambda >= 0 : g' lambda + b(h) <= r, E' lambda = a(h, M), F' lambda = 0`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpBackend, LpSolution, LpStatus};
use crate::thermal::LiftedModel;
use crate::uncertainty::{PolytopeForm, SetKind, UncertaintySet};
use crate::weather::ErrorField;

/// Column of a forecast-error channel in the model's `B_w`.
pub fn error_channel(field: ErrorField) -> usize {
    match field {
        ErrorField::Solar => crate::thermal::SOLAR,
        ErrorField::Temperature => crate::thermal::AMBIENT_TEMP,
    }
}

/// `u = h + M w` over the stacked horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfPolicy {
    pub horizon: usize,
    pub n_inputs: usize,
    pub n_errors: usize,
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl AdfPolicy {
    pub fn inputs(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.h + &self.m * w
    }

    pub fn first_input(&self) -> DVector<f64> {
        self.h.rows(0, self.n_inputs).into_owned()
    }

    /// True when every block `M_{t,j}` with `j >= t` is zero.
    pub fn is_causal(&self) -> bool {
        (0..self.horizon).all(|t| {
            (t..self.horizon).all(|j| {
                self.m
                    .view((t * self.n_inputs, j * self.n_errors), (self.n_inputs, self.n_errors))
                    .iter()
                    .all(|&x| x == 0.0)
            })
        })
    }
}

/// One factor of a product uncertainty set: a set over selected coordinates
/// of the stacked error vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceBlock {
    pub indices: Vec<usize>,
    pub set: UncertaintySet,
    pub polytope: PolytopeForm,
    /// Deepest point of the set: a minimizer of the membership function.
    pub center: Vec<f64>,
}

/// Cartesian product of blocks; coordinates outside every block are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSet {
    pub dim: usize,
    pub blocks: Vec<DisturbanceBlock>,
}

impl DisturbanceSet {
    pub fn new(dim: usize, blocks: Vec<(Vec<usize>, UncertaintySet)>) -> Result<Self> {
        let mut seen = vec![false; dim];
        let mut out = Vec::with_capacity(blocks.len());
        for (indices, set) in blocks {
            if indices.len() != set.dim() {
                return Err(Error::Dimension {
                    what: "uncertainty block",
                    expected: indices.len(),
                    got: set.dim(),
                });
            }
            for &k in &indices {
                if k >= dim || seen[k] {
                    return Err(Error::InvalidArgument(format!("error coordinate {k} out of range or repeated")));
                }
                seen[k] = true;
            }
            let polytope = set.to_polytope()?;
            let center = match &set.kind {
                SetKind::Svc(m) => svc_center(m, &polytope)?,
                _ => vec![0.0; set.dim()],
            };
            out.push(DisturbanceBlock {
                indices,
                set,
                polytope,
                center,
            });
        }
        Ok(DisturbanceSet { dim, blocks: out })
    }

    /// Product of per-channel sets over the horizon: block for channel `c`
    /// covers coordinates `j * n_errors + error_channel(c)`.
    pub fn per_channel(horizon: usize, n_errors: usize, sets: &[UncertaintySet]) -> Result<Self> {
        let blocks = sets
            .iter()
            .map(|s| {
                let c = error_channel(s.channel);
                let idx = (0..horizon).map(|j| j * n_errors + c).collect();
                (idx, s.clone())
            })
            .collect();
        Self::new(horizon * n_errors, blocks)
    }

    /// One L1 ball of radius `omega` over the whole stacked error vector.
    pub fn joint_l1(dim: usize, omega: f64) -> Result<Self> {
        Self::new(
            dim,
            vec![((0..dim).collect(), UncertaintySet::l1_ball(omega, dim, ErrorField::Temperature))],
        )
    }

    pub fn singleton(dim: usize) -> Self {
        DisturbanceSet { dim, blocks: Vec::new() }
    }

    /// Block centers scattered into the stacked error vector.
    pub fn center(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for b in &self.blocks {
            for (l, &k) in b.indices.iter().enumerate() {
                c[k] = b.center[l];
            }
        }
        c
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        let mut covered = vec![false; self.dim];
        for b in &self.blocks {
            let sub: Vec<f64> = b.indices.iter().map(|&k| w[k]).collect();
            if !b.set.contains(&sub) {
                return false;
            }
            b.indices.iter().for_each(|&k| covered[k] = true);
        }
        (0..self.dim).all(|k| covered[k] || w[k] == 0.0)
    }

    /// `max a'w` over the set by solving each block's dual LP.
    pub fn worst_case(&self, a: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for b in &self.blocks {
            let sub: Vec<f64> = b.indices.iter().map(|&k| a[k]).collect();
            total += dual_support(&b.polytope, &sub)?;
        }
        Ok(total)
    }
}

/// Minimize the membership function over the lifted polytope without the
/// radius row. Errors when the minimum exceeds the radius.
fn svc_center(model: &crate::uncertainty::SvcModel, poly: &PolytopeForm) -> Result<Vec<f64>> {
    let d = poly.dim();
    let k = poly.n_aux();
    let budget = poly.n_rows() - 1;
    let mut lp = LinearProgram::new();
    lp.add_vars(d + k, 0.0, false);
    for c in 0..k {
        lp.objective[d + c] = poly.f[(budget, c)];
    }
    for r in 0..budget {
        let mut coeffs: Vec<(usize, f64)> = (0..d).map(|c| (c, poly.e[(r, c)])).collect();
        coeffs.extend((0..k).map(|c| (d + c, poly.f[(r, c)])));
        lp.add_le(coeffs, poly.g[r]);
    }
    let sol = crate::lp::solve_lp(&lp);
    if !sol.is_optimal() {
        return Err(Error::Solver(format!("set center LP ended {:?}", sol.status)));
    }
    let theta = model.theta.unwrap_or(f64::INFINITY);
    if sol.objective > theta + 1e-9 * (1.0 + theta) {
        return Err(Error::EmptySet);
    }
    Ok(sol.x[..d].to_vec())
}

/// Affine expression `constant + sum coeff * y_j` in LP variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|&(_, a)| a == 0.0)
    }
}

/// Add `det . y + max_{w in D} exposure(y)' w <= rhs` to `lp`, introducing
/// one nonnegative dual block per factor of `D` that the row is exposed
/// to. Returns the ranges of the new dual variables.
pub fn robustify_row(
    lp: &mut LinearProgram,
    det: Vec<(usize, f64)>,
    rhs: f64,
    exposure: &[AffineExpr],
    set: &DisturbanceSet,
) -> Result<Vec<Range<usize>>> {
    if exposure.len() != set.dim {
        return Err(Error::Dimension {
            what: "row exposure",
            expected: set.dim,
            got: exposure.len(),
        });
    }
    let mut main = det;
    let mut duals = Vec::new();
    for b in &set.blocks {
        if matches!(b.set.kind, SetKind::Point { .. }) || b.indices.iter().all(|&k| exposure[k].is_zero()) {
            continue;
        }
        let p = &b.polytope;
        let lam = lp.add_vars(p.n_rows(), 0.0, true);
        for (r, var) in lam.clone().enumerate() {
            if p.g[r] != 0.0 {
                main.push((var, p.g[r]));
            }
        }
        // E' lambda - a = 0
        for (l, &k) in b.indices.iter().enumerate() {
            let mut coeffs: Vec<(usize, f64)> = lam
                .clone()
                .enumerate()
                .filter(|&(r, _)| p.e[(r, l)] != 0.0)
                .map(|(r, var)| (var, p.e[(r, l)]))
                .collect();
            coeffs.extend(exposure[k].terms.iter().map(|&(j, a)| (j, -a)));
            lp.add_eq(coeffs, exposure[k].constant);
        }
        // F' lambda = 0
        for c in 0..p.n_aux() {
            let coeffs: Vec<(usize, f64)> = lam
                .clone()
                .enumerate()
                .filter(|&(r, _)| p.f[(r, c)] != 0.0)
                .map(|(r, var)| (var, p.f[(r, c)]))
                .collect();
            lp.add_eq(coeffs, 0.0);
        }
        duals.push(lam);
    }
    lp.add_le(main, rhs);
    Ok(duals)
}

/// `max a'w` over a polytope, via `min g'lambda : E'lambda = a, F'lambda = 0, lambda >= 0`.
pub fn dual_support(poly: &PolytopeForm, a: &[f64]) -> Result<f64> {
    let set = DisturbanceSet {
        dim: a.len(),
        blocks: vec![DisturbanceBlock {
            indices: (0..a.len()).collect(),
            set: UncertaintySet::l1_ball(0.0, a.len(), ErrorField::Temperature),
            polytope: poly.clone(),
            center: vec![0.0; a.len()],
        }],
    };
    let mut lp = LinearProgram::new();
    let exposure: Vec<AffineExpr> = a.iter().map(|&x| AffineExpr::constant(x)).collect();
    let duals = robustify_row(&mut lp, Vec::new(), 0.0, &exposure, &set)?;
    let Some(lam) = duals.first().cloned() else {
        return Ok(0.0);
    };
    // Drop the budget row: only its dual cost matters here.
    lp.rows.pop();
    for (r, var) in lam.enumerate() {
        lp.objective[var] = poly.g[r];
    }
    let sol = crate::lp::solve_lp(&lp);
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(Error::RobustInfeasibleRow),
        LpStatus::Unbounded => Err(Error::EmptySet),
        LpStatus::IterationLimit => Err(Error::Solver("support dual hit the iteration limit".into())),
    }
}

/// `min c'(h + M w_c)` with `w_c` the set center, subject to `F_x x <= f_x` and `F_u u <= f_u` for every error in the set,
/// with `x` the stacked predicted states `x_1..x_H`.
#[derive(Debug, Clone)]
pub struct RobustProgram {
    pub lifted: LiftedModel,
    pub x0: DVector<f64>,
    /// Stacked nominal disturbances `v_0..v_{H-1}`.
    pub forecast: DVector<f64>,
    /// Cost per unit of each stacked input.
    pub cost: DVector<f64>,
    pub fx: DMatrix<f64>,
    pub f_x: DVector<f64>,
    pub fu: DMatrix<f64>,
    pub f_u: DVector<f64>,
    pub set: DisturbanceSet,
    /// Typical input magnitude; decision variables are divided by it.
    pub input_scale: f64,
    /// When set, every state row gets a nonnegative slack with this cost.
    pub soft_penalty: Option<f64>,
}

/// Where each policy entry lives in the LP.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableMap {
    pub h: Range<usize>,
    /// `(row of M, column of M, variable)`
    pub m: Vec<(usize, usize, usize)>,
    pub slack: Option<Range<usize>>,
    pub duals: Vec<Vec<Range<usize>>>,
    pub scale: f64,
    pub horizon: usize,
    pub n_inputs: usize,
    pub n_errors: usize,
}

#[derive(Debug, Clone)]
pub struct LpStandardForm {
    pub lp: LinearProgram,
    pub map: VariableMap,
}

impl RobustProgram {
    fn check(&self) -> Result<()> {
        let l = &self.lifted;
        let (hn, hm, hp, hq) = (
            l.horizon * l.n_states,
            l.horizon * l.n_inputs,
            l.horizon * l.n_disturbances,
            l.horizon * l.n_errors,
        );
        let checks: [(&'static str, usize, usize); 9] = [
            ("initial state", l.n_states, self.x0.len()),
            ("stacked forecast", hp, self.forecast.len()),
            ("input cost", hm, self.cost.len()),
            ("state constraint columns", hn, self.fx.ncols()),
            ("state constraint rhs", self.fx.nrows(), self.f_x.len()),
            ("input constraint columns", hm, self.fu.ncols()),
            ("input constraint rhs", self.fu.nrows(), self.f_u.len()),
            ("uncertainty dimension", hq, self.set.dim),
            ("input scale", 1, usize::from(self.input_scale > 0.0 && self.input_scale.is_finite())),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    /// Nominal state contribution `A_bar x0 + Bv_bar v`.
    fn free_response(&self) -> DVector<f64> {
        &self.lifted.a_bar * &self.x0 + &self.lifted.bv_bar * &self.forecast
    }

    /// Predicted stacked states under `policy` and error realization `w`.
    pub fn predict(&self, policy: &AdfPolicy, w: &DVector<f64>) -> DVector<f64> {
        self.free_response() + &self.lifted.bu_bar * policy.inputs(w) + &self.lifted.bw_bar * w
    }

    /// Largest violation of any state or input row for the realization `w`.
    pub fn violation(&self, policy: &AdfPolicy, w: &DVector<f64>) -> f64 {
        let x = self.predict(policy, w);
        let u = policy.inputs(w);
        let sx = &self.fx * x - &self.f_x;
        let su = &self.fu * u - &self.f_u;
        sx.iter().chain(su.iter()).fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    /// Worst-case value of each state row under `policy`, minus its rhs.
    pub fn worst_state_rows(&self, policy: &AdfPolicy) -> Result<Vec<f64>> {
        let base = self.free_response() + &self.lifted.bu_bar * &policy.h;
        let exposure = &self.lifted.bu_bar * &policy.m + &self.lifted.bw_bar;
        (0..self.fx.nrows())
            .map(|r| {
                let a = self.fx.row(r);
                let y = (a * &exposure).transpose();
                Ok((a * &base)[0] + self.set.worst_case(y.as_slice())? - self.f_x[r])
            })
            .collect()
    }

    pub fn build_lp(&self) -> Result<LpStandardForm> {
        self.check()?;
        let l = &self.lifted;
        let (hh, m, q) = (l.horizon, l.n_inputs, l.n_errors);
        let s = self.input_scale;
        let mut lp = LinearProgram::new();
        let h = lp.add_vars(hh * m, 0.0, false);
        for (k, var) in h.clone().enumerate() {
            lp.objective[var] = self.cost[k] * s;
        }
        // column index of M -> variables per row of M
        let mut mvars = Vec::new();
        let mut by_row: Vec<Vec<(usize, usize)>> = vec![Vec::new(); hh * m];
        for t in 0..hh {
            for i in 0..m {
                for col in 0..t * q {
                    let var = lp.add_var(0.0, false);
                    mvars.push((t * m + i, col, var));
                    by_row[t * m + i].push((col, var));
                }
            }
        }
        // Inputs are costed at the set center, where u = h + M w_c.
        let center = self.set.center();
        for &(row, col, var) in &mvars {
            lp.objective[var] = self.cost[row] * s * center[col];
        }
        let slack = self.soft_penalty.map(|p| lp.add_vars(self.fx.nrows(), p, true));
        let free = self.free_response();
        let mut duals = Vec::new();

        // A row with input-side coefficients `au` (per stacked input) and
        // fixed error coefficients `aw`.
        let mut add_row = |lp: &mut LinearProgram,
                           au: &[f64],
                           aw: DVector<f64>,
                           constant: f64,
                           rhs: f64,
                           slack_var: Option<usize>|
         -> Result<()> {
            let mut det: Vec<(usize, f64)> = au
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(k, a)| (h.start + k, a * s))
                .collect();
            if let Some(sv) = slack_var {
                det.push((sv, -1.0));
            }
            let mut exposure: Vec<AffineExpr> = aw.iter().map(|&c| AffineExpr::constant(c)).collect();
            for (row, a) in au.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for &(col, var) in &by_row[row] {
                    exposure[col].terms.push((var, a * s));
                }
            }
            let d = robustify_row(lp, det, rhs - constant, &exposure, &self.set)?;
            duals.push(d);
            Ok(())
        };

        for r in 0..self.fx.nrows() {
            let a = self.fx.row(r);
            let au = (a * &l.bu_bar).transpose();
            let aw = (a * &l.bw_bar).transpose();
            let constant = (a * &free)[0];
            let sv = slack.as_ref().map(|sl| sl.start + r);
            add_row(&mut lp, au.as_slice(), aw, constant, self.f_x[r], sv)?;
        }
        for r in 0..self.fu.nrows() {
            let au: Vec<f64> = self.fu.row(r).iter().copied().collect();
            add_row(&mut lp, &au, DVector::zeros(self.set.dim), 0.0, self.f_u[r], None)?;
        }
        Ok(LpStandardForm {
            lp,
            map: VariableMap {
                h,
                m: mvars,
                slack,
                duals,
                scale: s,
                horizon: hh,
                n_inputs: m,
                n_errors: q,
            },
        })
    }
}

/// Alias used by the data-driven controller.
pub fn build_ddrmpc_lp(program: &RobustProgram) -> Result<LpStandardForm> {
    program.build_lp()
}

pub fn extract_policy(solution: &LpSolution, map: &VariableMap) -> Result<AdfPolicy> {
    if solution.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("cannot extract a policy from a {:?} solution", solution.status)));
    }
    let (hh, m, q) = (map.horizon, map.n_inputs, map.n_errors);
    let h = DVector::from_iterator(hh * m, map.h.clone().map(|v| solution.x[v] * map.scale));
    let mut mm = DMatrix::zeros(hh * m, hh * q);
    for &(r, c, v) in &map.m {
        mm[(r, c)] = solution.x[v] * map.scale;
    }
    let policy = AdfPolicy {
        horizon: hh,
        n_inputs: m,
        n_errors: q,
        m: mm,
        h,
    };
    debug_assert!(policy.is_causal());
    Ok(policy)
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub policy: AdfPolicy,
    pub objective: f64,
    pub lp: LpSolution,
    /// Total state-row slack (zero unless the soft program was solved).
    pub slack: f64,
}

pub fn solve_program(program: &RobustProgram, backend: &dyn LpBackend) -> Result<RobustSolution> {
    let form = program.build_lp()?;
    let sol = backend.solve(&form.lp);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Solver("robust program is infeasible".into())),
        LpStatus::Unbounded => return Err(Error::Solver("robust program is unbounded".into())),
        LpStatus::IterationLimit => return Err(Error::Solver("LP iteration limit reached".into())),
    }
    let policy = extract_policy(&sol, &form.map)?;
    let slack = form
        .map
        .slack
        .as_ref()
        .map_or(0.0, |r| r.clone().map(|v| sol.x[v]).sum());
    let center = DVector::from_vec(program.set.center());
    Ok(RobustSolution {
        objective: (program.cost.transpose() * policy.inputs(&center))[0],
        policy,
        lp: sol,
        slack,
    })
}
