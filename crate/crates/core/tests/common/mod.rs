//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use greenhouse_core::uncertainty::SvcModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Calibrated SVC set with random support vectors in `[1, 4]^d`, random
/// weights and a well-conditioned weighting matrix. The radius sits above
/// the value at the weighted centroid, so the set is nonempty and bounded.
pub fn random_svc<R: Rng>(rng: &mut R, d: usize, s: usize) -> SvcModel {
    let support_vectors: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..d).map(|_| rng.gen_range(1.0..4.0)).collect())
        .collect();
    let raw: Vec<f64> = (0..s).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let alphas: Vec<f64> = raw.iter().map(|a| a / total).collect();
    let mut q = DMatrix::<f64>::identity(d, d);
    for r in 0..d {
        for c in 0..d {
            q[(r, c)] += rng.gen_range(-0.3..0.3);
        }
    }
    let mut model = SvcModel {
        support_vectors,
        alphas,
        q: (0..d).map(|r| q.row(r).iter().copied().collect()).collect(),
        theta: None,
        nu: 1.0,
        kernel_offset: 0.0,
        dual_objective: 0.0,
        kkt_residual: 0.0,
        iterations: 0,
        n_train: s,
        n_calib: None,
        eps: None,
        beta: None,
    };
    let centroid = weighted_centroid(&model);
    model.theta = Some(model.membership_value(&centroid) * rng.gen_range(1.2..2.0) + 0.1);
    model
}

pub fn weighted_centroid(m: &SvcModel) -> Vec<f64> {
    let d = m.dim();
    (0..d)
        .map(|c| m.support_vectors.iter().zip(&m.alphas).map(|(sv, a)| a * sv[c]).sum())
        .collect()
}

/// Breakpoint hyperplanes `q_r . w = q_r . sv_i` of the membership function.
fn breakpoint_planes(m: &SvcModel) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for sv in &m.support_vectors {
        for row in &m.q {
            let off: f64 = row.iter().zip(sv).map(|(a, b)| a * b).sum();
            out.push((row.clone(), off));
        }
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Points where the line `p + t e` meets the level set `f = theta`.
/// Along the line `f` is convex piecewise linear, so each crossing is found
/// exactly by interpolating between consecutive breakpoints.
fn level_crossings(m: &SvcModel, p: &[f64], e: &[f64]) -> Vec<Vec<f64>> {
    let theta = m.theta.expect("calibrated");
    let at = |t: f64| -> Vec<f64> { p.iter().zip(e).map(|(a, b)| a + t * b).collect() };
    let g = |t: f64| m.membership_value(&at(t));
    let mut knots = Vec::new();
    for sv in &m.support_vectors {
        for row in &m.q {
            let beta: f64 = row.iter().zip(p).zip(sv).map(|((q, a), s)| q * (a - s)).sum();
            let gamma: f64 = row.iter().zip(e).map(|(q, b)| q * b).sum();
            if gamma.abs() > 1e-12 {
                knots.push(-beta / gamma);
            }
        }
    }
    if knots.is_empty() {
        return Vec::new();
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let vals: Vec<f64> = knots.iter().map(|&t| g(t) - theta).collect();
    let mut out = Vec::new();
    for k in 0..knots.len() {
        if vals[k] == 0.0 {
            out.push(at(knots[k]));
        }
        if k + 1 < knots.len() && vals[k] * vals[k + 1] < 0.0 {
            let (t0, t1) = (knots[k], knots[k + 1]);
            out.push(at(t0 + (t1 - t0) * vals[k] / (vals[k] - vals[k + 1])));
        }
    }
    // g is linear beyond the outer knots
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    let slope_left = vals[0] - (g(first - 1.0) - theta);
    if vals[0] < 0.0 && slope_left < 0.0 {
        out.push(at(first - vals[0] / slope_left));
    }
    let slope_right = (g(last + 1.0) - theta) - vals[vals.len() - 1];
    if vals[vals.len() - 1] < 0.0 && slope_right > 0.0 {
        out.push(at(last - vals[vals.len() - 1] / slope_right));
    }
    out
}

/// Vertices of `{w : f(w) <= theta}`, found on every line cut out by `d - 1`
/// independent breakpoint hyperplanes.
pub fn svc_vertices(m: &SvcModel) -> Vec<Vec<f64>> {
    let d = m.dim();
    let planes = breakpoint_planes(m);
    let mut out = Vec::new();
    for subset in combinations(planes.len(), d - 1) {
        let (p, e) = if subset.is_empty() {
            (vec![0.0; d], {
                let mut e = vec![0.0; d];
                e[0] = 1.0;
                e
            })
        } else {
            let k = subset.len();
            let mut n = DMatrix::zeros(d, d);
            let mut c = DVector::zeros(d);
            for (r, &i) in subset.iter().enumerate() {
                for j in 0..d {
                    n[(r, j)] = planes[i].0[j];
                }
                c[r] = planes[i].1;
            }
            let svd = n.clone().svd(true, true);
            let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..d).collect();
            sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            if sv[k - 1].0 < 1e-9 * sv[0].0.max(1.0) {
                continue;
            }
            let v_t = svd.v_t.as_ref().unwrap();
            let e: Vec<f64> = v_t.row(sv[d - 1].1).iter().copied().collect();
            let p = svd.solve(&c, 1e-12).unwrap();
            (p.iter().copied().collect(), e)
        };
        out.extend(level_crossings(m, &p, &e));
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max a.w` over the set by vertex enumeration.
pub fn vertex_support(m: &SvcModel, a: &[f64]) -> f64 {
    svc_vertices(m)
        .iter()
        .map(|v| dot(a, v))
        .fold(f64::NEG_INFINITY, f64::max)
}
