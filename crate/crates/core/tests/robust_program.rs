use greenhouse_core::control::{mpc_program, rmpc_step, ControllerConfig};
use greenhouse_core::lp::{AutoBackend, DenseSimplex};
use greenhouse_core::robust::{extract_policy, solve_program, DisturbanceSet, RobustProgram};
use greenhouse_core::thermal::{build_rc_model, LiftedModel, RcNetwork, ThermalModel};
use greenhouse_core::uncertainty::{learn_svc, LearnOptions, SetKind, UncertaintySet};
use greenhouse_core::weather::synthetic::SyntheticWeather;
use greenhouse_core::weather::{extract_errors, ErrorField, IntervalWeather};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const JAN1: i64 = 1_514_782_800; // 2018-01-01T05:00Z, local midnight

struct Fixture {
    model: ThermalModel,
    lifted: LiftedModel,
    cfg: ControllerConfig,
    sets: Vec<UncertaintySet>,
    forecast: Vec<IntervalWeather>,
    t: i64,
}

fn fixture() -> Fixture {
    let train = SyntheticWeather {
        seed: 2,
        days: 11,
        start: "2017-12-01T05:00:00Z".into(),
        ..Default::default()
    }
    .generate()
    .unwrap();
    let cfg = ControllerConfig::default();
    let sets = [ErrorField::Temperature, ErrorField::Solar]
        .into_iter()
        .map(|f| {
            let (samples, _) = extract_errors(&train, cfg.horizon, f).unwrap();
            UncertaintySet::svc(learn_svc(&samples, &LearnOptions::default()).unwrap(), f)
        })
        .collect();
    let test = SyntheticWeather { seed: 1, days: 12, ..Default::default() }.generate().unwrap();
    // 18:00 local: the window spans the evening switch and the night
    let t = JAN1 + 9 * 86_400 + 18 * 3600;
    let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
    Fixture {
        lifted: model.lift(cfg.horizon).unwrap(),
        model,
        cfg,
        sets,
        forecast: test.forecast_window(t, cfg.horizon).unwrap(),
        t,
    }
}

fn ddrmpc_program(f: &Fixture, sets: &[UncertaintySet]) -> RobustProgram {
    let set = DisturbanceSet::per_channel(f.cfg.horizon, f.model.n_errors(), sets).unwrap();
    mpc_program(&f.lifted, &f.model, &DVector::from_element(4, 17.0), f.t, &f.forecast, &f.cfg, set).unwrap()
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Interior samples by accept-reject in the bounding box, plus points just
/// inside the boundary along random rays from the center.
fn block_samples(set: &UncertaintySet, center: &[f64], poly: &greenhouse_core::uncertainty::PolytopeForm, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = set.dim();
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        hi[k] = poly.support(&e).unwrap().0;
        e[k] = -1.0;
        lo[k] = -poly.support(&e).unwrap().0;
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n / 2 {
        let w: Vec<f64> = (0..d).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
        if set.contains(&w) {
            out.push(w);
        }
    }
    while out.len() < n {
        let dir = unit_direction(rng, d);
        let at = |r: f64| -> Vec<f64> { center.iter().zip(&dir).map(|(c, e)| c + r * e).collect() };
        let (mut a, mut b) = (0.0, 1.0);
        while set.contains(&at(b)) {
            b *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if set.contains(&at(mid)) {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(at(a));
    }
    out
}

#[test]
fn ddrmpc_policy_is_feasible_throughout_the_learned_set() {
    let f = fixture();
    let program = ddrmpc_program(&f, &f.sets);
    let sol = solve_program(&program, &AutoBackend::default()).unwrap();
    assert!(sol.policy.is_causal());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let per_block: Vec<Vec<Vec<f64>>> = program
        .set
        .blocks
        .iter()
        .map(|b| block_samples(&b.set, &b.center, &b.polytope, n, &mut rng))
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut row_max = vec![f64::NEG_INFINITY; program.fx.nrows()];
    for i in 0..n {
        let mut w = DVector::zeros(program.set.dim);
        for (b, samples) in program.set.blocks.iter().zip(&per_block) {
            for (l, &k) in b.indices.iter().enumerate() {
                w[k] = samples[i][l];
            }
        }
        assert!(program.set.contains(w.as_slice()));
        worst = worst.max(program.violation(&sol.policy, &w));
        let rows = &program.fx * program.predict(&sol.policy, &w) - &program.f_x;
        for (m, r) in row_max.iter_mut().zip(rows.iter()) {
            *m = m.max(*r);
        }
    }
    assert!(worst <= 1e-6, "sampled violation {worst}");

    // the dual bound of every state row is attained inside the set
    let bounds = program.worst_state_rows(&sol.policy).unwrap();
    let exposure = &program.lifted.bu_bar * &sol.policy.m + &program.lifted.bw_bar;
    let mut tight = 0;
    for r in 0..program.fx.nrows() {
        assert!(row_max[r] <= bounds[r] + 1e-6, "row {r}: sample {} above bound {}", row_max[r], bounds[r]);
        let a = (program.fx.row(r) * &exposure).transpose();
        let mut w_star = DVector::zeros(program.set.dim);
        for b in &program.set.blocks {
            let sub: Vec<f64> = b.indices.iter().map(|&k| a[k]).collect();
            let (_, arg) = b.polytope.support(&sub).unwrap();
            for (l, &k) in b.indices.iter().enumerate() {
                w_star[k] = arg[l];
            }
        }
        let attained = (program.fx.row(r) * program.predict(&sol.policy, &w_star))[0] - program.f_x[r];
        let scale = 1.0 + program.f_x[r].abs();
        assert!((attained - bounds[r]).abs() <= 1e-6 * scale, "row {r}: attained {attained}, bound {}", bounds[r]);
        if bounds[r].abs() <= 1e-6 * scale {
            tight += 1;
        }
    }
    assert!(tight > 0, "no comfort row is active in the fixture");
}

#[test]
fn policy_extraction_round_trips() {
    let f = fixture();
    let program = ddrmpc_program(&f, &f.sets);
    let form = program.build_lp().unwrap();
    let backend = AutoBackend::default();
    let lp_sol = greenhouse_core::lp::LpBackend::solve(&backend, &form.lp);
    let policy = extract_policy(&lp_sol, &form.map).unwrap();
    let sol = solve_program(&program, &backend).unwrap();
    assert!((sol.objective - lp_sol.objective).abs() <= 1e-9 * (1.0 + lp_sol.objective.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let w = DVector::from_fn(program.set.dim, |_, _| rng.gen_range(-3.0..3.0));
        let mut u: Vec<f64> = form.map.h.clone().map(|v| lp_sol.x[v] * form.map.scale).collect();
        for &(row, col, v) in &form.map.m {
            u[row] += lp_sol.x[v] * form.map.scale * w[col];
        }
        let got = policy.inputs(&w);
        for (a, b) in u.iter().zip(got.iter()) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}

fn scaled(sets: &[UncertaintySet], factor: f64) -> Vec<UncertaintySet> {
    sets.iter()
        .map(|s| {
            let mut s = s.clone();
            if let SetKind::Svc(m) = &mut s.kind {
                m.theta = m.theta.map(|t| t * factor);
            }
            s
        })
        .collect()
}

#[test]
fn larger_radius_never_lowers_the_cost() {
    let f = fixture();
    let mut last = f64::NEG_INFINITY;
    for factor in [0.8, 0.9, 1.0, 1.25, 1.5] {
        // an infeasible program costs +inf, which keeps the order
        let obj = match solve_program(&ddrmpc_program(&f, &scaled(&f.sets, factor)), &AutoBackend::default()) {
            Ok(sol) => sol.objective,
            Err(_) => f64::INFINITY,
        };
        assert!(factor > 1.0 || obj.is_finite(), "theta x{factor} infeasible");
        assert!(obj >= last || obj >= last - 1e-9 * (1.0 + last.abs()), "theta x{factor}: {obj} < {last}");
        last = obj;
    }
}

#[test]
fn budget_sweep_is_monotone_under_a_cold_forecast() {
    let f = fixture();
    let cold: Vec<IntervalWeather> = (0..f.cfg.horizon).map(|_| IntervalWeather { solar: 0.0, temp: -8.0 }).collect();
    let x0 = DVector::from_element(4, 17.0);
    let (mut last_u, mut last_obj) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..=12 {
        let omega = 0.5 * f64::from(k);
        let step = rmpc_step(&f.lifted, &f.model, &x0, f.t, &cold, omega, &f.cfg).unwrap();
        assert!(!step.soft, "omega {omega} needed comfort slack");
        assert!(step.u >= last_u - 1e-6, "omega {omega}: u0 {} < {last_u}", step.u);
        let set = DisturbanceSet::joint_l1(f.cfg.horizon * f.model.n_errors(), omega).unwrap();
        let program = mpc_program(&f.lifted, &f.model, &x0, f.t, &cold, &f.cfg, set).unwrap();
        let obj = solve_program(&program, &AutoBackend::default()).unwrap().objective;
        assert!(obj >= last_obj - 1e-9 * (1.0 + last_obj.abs()), "omega {omega}: cost {obj} < {last_obj}");
        last_u = step.u;
        last_obj = obj;
    }
}

/// `x+ = 0.8 x + u + w`, `x_0 = 0`, `x_1, x_2 >= 1`, `0 <= u <= 4`,
/// `|w_0| + |w_1| <= 1`, policy `u_0 = h_0`, `u_1 = h_1 + m w_0`.
fn toy_program() -> RobustProgram {
    let model = ThermalModel {
        a: DMatrix::from_element(1, 1, 0.8),
        b_u: DMatrix::from_element(1, 1, 1.0),
        b_v: DMatrix::zeros(1, 1),
        b_w: DMatrix::from_element(1, 1, 1.0),
        dt: 3600.0,
        state_names: vec!["x".into()],
        input_names: vec!["u".into()],
        disturbance_names: vec!["v".into()],
        error_names: vec!["w".into()],
    };
    let lifted = model.lift(2).unwrap();
    RobustProgram {
        lifted,
        x0: DVector::zeros(1),
        forecast: DVector::zeros(2),
        cost: DVector::from_element(2, 1.0),
        fx: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
        f_x: DVector::from_element(2, -1.0),
        fu: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        f_u: DVector::from_row_slice(&[4.0, 4.0, 0.0, 0.0]),
        set: DisturbanceSet::joint_l1(2, 1.0).unwrap(),
        input_scale: 1.0,
        soft_penalty: None,
    }
}

#[test]
fn two_step_toy_matches_grid_search() {
    let program = toy_program();
    let sol = solve_program(&program, &DenseSimplex::default()).unwrap();
    // constraints are affine in w, so the four vertices of the ball suffice
    let vertices = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
    let feasible = |h0: f64, h1: f64, m: f64| {
        vertices.iter().all(|&(w0, w1)| {
            let u1 = h1 + m * w0;
            let x1 = h0 + w0;
            let x2 = 0.8 * x1 + u1 + w1;
            (0.0..=4.0).contains(&h0) && (-1e-12..=4.0 + 1e-12).contains(&u1) && x1 >= 1.0 - 1e-12 && x2 >= 1.0 - 1e-12
        })
    };
    let step = 0.02;
    let mut best = f64::INFINITY;
    for i in 0..=200 {
        let h0 = i as f64 * step;
        for k in 0..=200 {
            let m = -2.0 + k as f64 * step;
            for j in 0..=200 {
                let h1 = j as f64 * step;
                if h0 + h1 >= best {
                    break;
                }
                if feasible(h0, h1, m) {
                    best = h0 + h1;
                    break;
                }
            }
        }
    }
    assert!((best - 2.4).abs() < 1e-9, "grid optimum {best}");
    assert!((sol.objective - best).abs() <= 1e-4, "LP {} vs grid {best}", sol.objective);
    let p = &sol.policy;
    assert!(feasible(p.h[0], p.h[1], p.m[(1, 0)]) || program.violation(p, &DVector::zeros(2)) <= 1e-9);
    for &(w0, w1) in &vertices {
        assert!(program.violation(p, &DVector::from_row_slice(&[w0, w1])) <= 1e-9);
    }
}
