//! Support-vector-clustering uncertainty sets with the weighted generalized
//! intersection kernel `K(u, v) = L - |Q(u - v)|_1`.
//!
//! With this kernel the SVC dual reduces to maximizing `a' D a` over the
//! capped simplex, where `D` holds pairwise weighted L1 distances. The
//! induced set `{w : sum_i a_i |Q(w - w_i)|_1 <= theta}` is a polytope.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus};
use crate::weather::{split_for_guarantee, ErrorField, ErrorSample};

/// Weights below this are not support vectors.
pub const SUPPORT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// Rows of the weighting matrix.
    pub q: Vec<Vec<f64>>,
    pub theta: Option<f64>,
    pub nu: f64,
    /// Kernel offset `L`.
    pub kernel_offset: f64,
    pub dual_objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub n_train: usize,
    pub n_calib: Option<usize>,
    pub eps: Option<f64>,
    pub beta: Option<f64>,
}

/// Inverse principal square root of the sample covariance.
///
/// A ridge of `1e-8 trace / d` is added when the covariance is numerically
/// singular; an all-zero covariance yields the identity.
pub fn weighting_matrix(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "weighting matrix needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = check_dims(samples)?;
    let cov = sample_covariance(samples, d);
    let trace = cov.trace();
    if trace <= 0.0 {
        return Ok(DMatrix::identity(d, d));
    }
    let mut eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= 1e-12 * max {
        let ridged = cov + DMatrix::identity(d, d) * (1e-8 * trace / d as f64);
        eig = ridged.symmetric_eigen();
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let q = v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose();
    // Symmetrize against round-off.
    Ok((&q + q.transpose()) * 0.5)
}

pub fn sample_covariance(samples: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0)
}

fn check_dims(samples: &[Vec<f64>]) -> Result<usize> {
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::InvalidArgument("samples must have positive dimension".into()));
    }
    for s in samples {
        if s.len() != d {
            return Err(Error::Dimension {
                what: "sample",
                expected: d,
                got: s.len(),
            });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
    }
    Ok(d)
}

/// `|Q (u - v)|_1`
pub fn weighted_l1(q: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    (0..q.nrows())
        .map(|r| (0..d).map(|c| q[(r, c)] * (u[c] - v[c])).sum::<f64>().abs())
        .sum()
}

/// Kernel value `L - |Q(u - v)|_1`.
pub fn wgik(u: &[f64], v: &[f64], q: &DMatrix<f64>, offset: f64) -> f64 {
    offset - weighted_l1(q, u, v)
}

/// Collapse exact duplicates, keeping first-occurrence order and counts.
fn deduplicate(samples: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .iter()
            .zip(&samples[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut first_of = vec![usize::MAX; samples.len()];
    let mut prev: Option<usize> = None;
    for &i in &order {
        match prev {
            Some(p) if samples[p] == samples[i] => first_of[i] = first_of[p],
            _ => first_of[i] = i,
        }
        prev = Some(i);
    }
    let mut unique = Vec::new();
    let mut counts = Vec::new();
    let mut slot = vec![usize::MAX; samples.len()];
    for i in 0..samples.len() {
        let f = first_of[i];
        if slot[f] == usize::MAX {
            slot[f] = unique.len();
            unique.push(samples[f].clone());
            counts.push(0);
        }
        counts[slot[f]] += 1;
    }
    (unique, counts)
}

/// Pairwise `|Q(w_i - w_j)|_1`.
pub fn distance_matrix(samples: &[Vec<f64>], q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.len();
    let qw: Vec<DVector<f64>> = samples.iter().map(|s| q * DVector::from_column_slice(s)).collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (&qw[i] - &qw[j]).lp_norm(1);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Result of maximizing `a' D a` over `{0 <= a <= cap, sum a = 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Residual `2 (max_{a_i < cap_i} g_i - min_{a_j > 0} g_j)` with `g = D a`,
/// which is zero exactly at a maximizer.
pub fn kkt_residual(d: &DMatrix<f64>, alpha: &[f64], caps: &[f64]) -> f64 {
    let g = d * DVector::from_column_slice(alpha);
    let (up, low) = kkt_extremes(g.as_slice(), alpha, caps);
    (2.0 * (up - low)).max(0.0)
}

fn kkt_extremes(g: &[f64], alpha: &[f64], caps: &[f64]) -> (f64, f64) {
    let slack = |i: usize| caps[i] - alpha[i] > 1e-15 * caps[i].max(1.0);
    let up = (0..g.len()).filter(|&i| slack(i)).map(|i| g[i]).fold(f64::NEG_INFINITY, f64::max);
    let low = (0..g.len()).filter(|&i| alpha[i] > 1e-15).map(|i| g[i]).fold(f64::INFINITY, f64::min);
    (up, low)
}

/// Sequential minimal optimization on the pair with the largest second-order gain.
pub fn solve_dual(d: &DMatrix<f64>, caps: &[f64], opts: SmoOptions) -> Result<DualSolution> {
    let n = d.nrows();
    let total: f64 = caps.iter().sum();
    if total < 1.0 - 1e-12 {
        return Err(Error::InvalidArgument("weight caps sum below one: dual infeasible".into()));
    }
    let mut alpha: Vec<f64> = caps.iter().map(|c| c / total).collect();
    if n == 1 {
        return Ok(DualSolution {
            alpha: vec![1.0],
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    let mut g: Vec<f64> = (d * DVector::from_column_slice(&alpha)).as_slice().to_vec();
    let mut iterations = 0;
    let mut fresh = true;
    loop {
        let (mut i, mut gi) = (usize::MAX, f64::NEG_INFINITY);
        let mut low = f64::INFINITY;
        for k in 0..n {
            if caps[k] - alpha[k] > 1e-15 * caps[k].max(1.0) && g[k] > gi {
                gi = g[k];
                i = k;
            }
            if alpha[k] > 1e-15 {
                low = low.min(g[k]);
            }
        }
        let residual = (2.0 * (gi - low)).max(0.0);
        if residual <= opts.tolerance || i == usize::MAX {
            if !fresh {
                // Recompute the gradient so round-off drift cannot fake convergence.
                g = (d * DVector::from_column_slice(&alpha)).as_slice().to_vec();
                fresh = true;
                continue;
            }
            let a = DVector::from_column_slice(&alpha);
            return Ok(DualSolution {
                objective: a.dot(&(d * &a)),
                kkt_residual: residual,
                alpha,
                iterations,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::QpNonConvergence { iterations, residual });
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n {
            if k == i || alpha[k] <= 1e-15 || g[k] >= gi {
                continue;
            }
            let dik = d[(i, k)];
            if dik <= 0.0 {
                continue;
            }
            let gain = (gi - g[k]).powi(2) / dik;
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some((k, gain));
            }
        }
        let Some((j, _)) = best else {
            return Err(Error::QpNonConvergence { iterations, residual });
        };
        let step = ((gi - g[j]) / (2.0 * d[(i, j)])).min(caps[i] - alpha[i]).min(alpha[j]);
        alpha[i] += step;
        alpha[j] -= step;
        if alpha[j] < 1e-300 {
            alpha[j] = 0.0;
        }
        for k in 0..n {
            g[k] += step * (d[(k, i)] - d[(k, j)]);
        }
        iterations += 1;
        fresh = false;
        if iterations % 1000 == 0 {
            g = (d * DVector::from_column_slice(&alpha)).as_slice().to_vec();
            fresh = true;
        }
    }
}

/// Train the SVC dual on `samples` with regularization `nu` and weighting `q`.
/// The returned model has no radius yet; see [`calibrate_theta`].
pub fn train_svc(samples: &[Vec<f64>], nu: f64, q: &DMatrix<f64>) -> Result<SvcModel> {
    train_svc_with(samples, nu, q, SmoOptions::default())
}

pub fn train_svc_with(samples: &[Vec<f64>], nu: f64, q: &DMatrix<f64>, opts: SmoOptions) -> Result<SvcModel> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "SVC training needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")));
    }
    let d = check_dims(samples)?;
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::Dimension {
            what: "weighting matrix",
            expected: d,
            got: q.nrows(),
        });
    }
    let n = samples.len();
    // Merging k identical samples into one with cap k/(nu N) leaves the
    // dual unchanged.
    let (unique, counts) = deduplicate(samples);
    let cap = 1.0 / (nu * n as f64);
    let caps: Vec<f64> = counts.iter().map(|&c| c as f64 * cap).collect();
    let dist = distance_matrix(&unique, q);
    let sol = solve_dual(&dist, &caps, opts)?;

    let keep: Vec<usize> = (0..unique.len()).filter(|&i| sol.alpha[i] > SUPPORT_TOL).collect();
    let mass: f64 = keep.iter().map(|&i| sol.alpha[i]).sum();
    Ok(SvcModel {
        support_vectors: keep.iter().map(|&i| unique[i].clone()).collect(),
        alphas: keep.iter().map(|&i| sol.alpha[i] / mass).collect(),
        q: (0..d).map(|r| q.row(r).iter().copied().collect()).collect(),
        theta: None,
        nu,
        kernel_offset: dist.max(),
        dual_objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        n_train: n,
        n_calib: None,
        eps: None,
        beta: None,
    })
}

impl SvcModel {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.q[r][c])
    }

    /// `f(w) = sum_i a_i |Q(w - w_i)|_1`
    pub fn membership_value(&self, w: &[f64]) -> f64 {
        let q = self.q_matrix();
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * weighted_l1(&q, w, sv))
            .sum()
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        self.theta.is_some_and(|t| self.membership_value(w) <= t + 1e-12)
    }

    /// Check the stored invariants.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.q.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("weighting matrix must be square and nonempty".into()));
        }
        if self.support_vectors.len() != self.alphas.len() || self.support_vectors.is_empty() {
            return Err(Error::InvalidArgument("support vectors and weights disagree".into()));
        }
        if self.support_vectors.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension {
                what: "support vector",
                expected: d,
                got: self.support_vectors.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0),
            });
        }
        let sum: f64 = self.alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.alphas.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidArgument(format!("weights must be nonnegative and sum to 1, sum is {sum}")));
        }
        if let Some(t) = self.theta {
            if !(t >= 0.0) {
                return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Radius = largest membership value over the calibration samples. Rejects
/// calibration sets smaller than `ceil(ln beta / ln(1 - eps))`.
pub fn calibrate_theta(model: &SvcModel, calibration: &[Vec<f64>], eps: f64, beta: f64) -> Result<SvcModel> {
    let required = crate::weather::required_calibration_size(eps, beta)?;
    if calibration.len() < required {
        return Err(Error::InsufficientCalibration {
            required,
            got: calibration.len(),
            eps,
            beta,
        });
    }
    let d = model.dim();
    for s in calibration {
        if s.len() != d {
            return Err(Error::Dimension {
                what: "calibration sample",
                expected: d,
                got: s.len(),
            });
        }
    }
    let theta = calibration
        .iter()
        .map(|w| model.membership_value(w))
        .fold(0.0, f64::max);
    Ok(SvcModel {
        theta: Some(theta),
        n_calib: Some(calibration.len()),
        eps: Some(eps),
        beta: Some(beta),
        ..model.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnOptions {
    pub eps: f64,
    pub beta: f64,
    pub nu: f64,
    /// Calibration size; the guarantee minimum when unset.
    pub n_calib: Option<usize>,
    pub seed: u64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            eps: 0.05,
            beta: 0.10,
            nu: 0.05,
            n_calib: None,
            seed: 0,
        }
    }
}

/// Split, whiten, train and calibrate in one go.
pub fn learn_svc(samples: &[ErrorSample], opts: &LearnOptions) -> Result<SvcModel> {
    let split = split_for_guarantee(samples, opts.eps, opts.beta, opts.n_calib, opts.seed)?;
    let training: Vec<Vec<f64>> = split.training.into_iter().map(|s| s.lead_errors).collect();
    let calibration: Vec<Vec<f64>> = split.calibration.into_iter().map(|s| s.lead_errors).collect();
    let q = weighting_matrix(&training)?;
    let model = train_svc(&training, opts.nu, &q)?;
    calibrate_theta(&model, &calibration, opts.eps, opts.beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetKind {
    Svc(SvcModel),
    L1Ball { omega: f64, dim: usize },
    Point { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    pub kind: SetKind,
    pub channel: ErrorField,
}

impl UncertaintySet {
    pub fn svc(model: SvcModel, channel: ErrorField) -> Self {
        UncertaintySet {
            kind: SetKind::Svc(model),
            channel,
        }
    }

    pub fn l1_ball(omega: f64, dim: usize, channel: ErrorField) -> Self {
        UncertaintySet {
            kind: SetKind::L1Ball { omega, dim },
            channel,
        }
    }

    pub fn point(dim: usize, channel: ErrorField) -> Self {
        UncertaintySet {
            kind: SetKind::Point { dim },
            channel,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::Svc(m) => m.dim(),
            SetKind::L1Ball { dim, .. } | SetKind::Point { dim } => *dim,
        }
    }

    /// Closed-form membership test.
    pub fn contains(&self, w: &[f64]) -> bool {
        match &self.kind {
            SetKind::Svc(m) => m.contains(w),
            SetKind::L1Ball { omega, .. } => w.iter().map(|x| x.abs()).sum::<f64>() <= omega + 1e-12,
            SetKind::Point { .. } => w.iter().all(|&x| x == 0.0),
        }
    }

    pub fn to_polytope(&self) -> Result<PolytopeForm> {
        match &self.kind {
            SetKind::Svc(m) => svc_polytope(m),
            SetKind::L1Ball { omega, dim } => l1_polytope(*omega, *dim),
            SetKind::Point { dim } => {
                let d = *dim;
                let mut e = DMatrix::zeros(2 * d, d);
                e.view_mut((0, 0), (d, d)).fill_with_identity();
                e.view_mut((d, 0), (d, d)).copy_from(&-DMatrix::<f64>::identity(d, d));
                Ok(PolytopeForm {
                    e,
                    f: DMatrix::zeros(2 * d, 0),
                    g: DVector::zeros(2 * d),
                })
            }
        }
    }
}

/// `{w : exists z, E w + F z <= g}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeForm {
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
}

fn svc_polytope(m: &SvcModel) -> Result<PolytopeForm> {
    m.validate()?;
    let theta = m.theta.ok_or_else(|| Error::InvalidArgument("SVC set is not calibrated".into()))?;
    if !theta.is_finite() {
        return Err(Error::UnboundedSet);
    }
    let d = m.dim();
    let s = m.support_vectors.len();
    let q = m.q_matrix();
    let rows = 2 * s * d + 1;
    let mut e = DMatrix::zeros(rows, d);
    let mut f = DMatrix::zeros(rows, s * d);
    let mut g = DVector::zeros(rows);
    for (i, sv) in m.support_vectors.iter().enumerate() {
        let qs = &q * DVector::from_column_slice(sv);
        for r in 0..d {
            let up = 2 * i * d + r;
            let dn = up + d;
            for c in 0..d {
                e[(up, c)] = q[(r, c)];
                e[(dn, c)] = -q[(r, c)];
            }
            f[(up, i * d + r)] = -1.0;
            f[(dn, i * d + r)] = -1.0;
            g[up] = qs[r];
            g[dn] = -qs[r];
        }
        for r in 0..d {
            f[(rows - 1, i * d + r)] = m.alphas[i];
        }
    }
    g[rows - 1] = theta;
    Ok(PolytopeForm { e, f, g })
}

fn l1_polytope(omega: f64, d: usize) -> Result<PolytopeForm> {
    if !omega.is_finite() {
        return Err(Error::UnboundedSet);
    }
    if omega < 0.0 {
        return Err(Error::EmptySet);
    }
    let rows = 2 * d + 1;
    let mut e = DMatrix::zeros(rows, d);
    let mut f = DMatrix::zeros(rows, d);
    for r in 0..d {
        e[(r, r)] = 1.0;
        f[(r, r)] = -1.0;
        e[(d + r, r)] = -1.0;
        f[(d + r, r)] = -1.0;
        f[(2 * d, r)] = 1.0;
    }
    let mut g = DVector::zeros(rows);
    g[2 * d] = omega;
    Ok(PolytopeForm { e, f, g })
}

impl PolytopeForm {
    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn n_aux(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.g.len()
    }

    fn lp_over(&self, fixed_w: Option<&[f64]>) -> (LinearProgram, usize) {
        let d = self.dim();
        let k = self.n_aux();
        let mut lp = LinearProgram::new();
        let wvars = if fixed_w.is_none() { d } else { 0 };
        lp.add_vars(wvars + k, 0.0, false);
        for r in 0..self.n_rows() {
            let mut coeffs = Vec::new();
            let mut rhs = self.g[r];
            for c in 0..d {
                let a = self.e[(r, c)];
                if a != 0.0 {
                    match fixed_w {
                        Some(w) => rhs -= a * w[c],
                        None => coeffs.push((c, a)),
                    }
                }
            }
            for c in 0..k {
                let a = self.f[(r, c)];
                if a != 0.0 {
                    coeffs.push((wvars + c, a));
                }
            }
            lp.add_le(coeffs, rhs);
        }
        (lp, wvars)
    }

    /// Membership by LP feasibility of the lifted system.
    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        if self.n_aux() == 0 {
            let ew = &self.e * DVector::from_column_slice(w);
            return (0..self.n_rows()).all(|r| ew[r] <= self.g[r] + tol);
        }
        let (mut lp, _) = self.lp_over(Some(w));
        for row in &mut lp.rows {
            row.rhs += tol;
        }
        solve_lp(&lp).status == LpStatus::Optimal
    }

    /// `max c'w` over the set, by LP. Errors when empty or unbounded.
    pub fn support(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (mut lp, _) = self.lp_over(None);
        for (j, ci) in c.iter().enumerate() {
            lp.objective[j] = -ci;
        }
        let sol = solve_lp(&lp);
        match sol.status {
            LpStatus::Optimal => Ok((-sol.objective, sol.x[..self.dim()].to_vec())),
            LpStatus::Unbounded => Err(Error::UnboundedSet),
            LpStatus::Infeasible => Err(Error::EmptySet),
            LpStatus::IterationLimit => Err(Error::Solver("support LP hit the iteration limit".into())),
        }
    }
}
