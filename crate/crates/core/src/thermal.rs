//! Lumped resistance-capacitance thermal model of a single-zone greenhouse.
//!
//! Nodes carry a thermal capacitance (J/K) and are joined by conductances
//! (W/K) either to each other or to one of two boundary nodes, `ambient` and
//! `ground`. The continuous dynamics
//!
//! ```text
//!     C_i dT_i/dt = sum_j G_ij (T_j - T_i) + heating_i * u + aperture_i * solar
//! ```
//!
//! are discretized with an exact zero-order hold, giving
//! `x+ = A x + B_u u + B_v v + B_w w` where `v = (solar, ambient, ground)` and
//! `w = (solar error, ambient error)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AMBIENT: &str = "ambient";
pub const GROUND: &str = "ground";

/// Column order of the disturbance vector `v`.
pub const DISTURBANCE_NAMES: [&str; 3] = ["solar_wm2", "ambient_c", "ground_c"];
/// Column order of the forecast-error vector `w`.
pub const ERROR_NAMES: [&str; 2] = ["solar_error_wm2", "ambient_error_c"];

pub const SOLAR: usize = 0;
pub const AMBIENT_TEMP: usize = 1;
pub const GROUND_TEMP: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalNode {
    pub name: String,
    /// J/K
    pub capacitance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalEdge {
    pub a: String,
    /// Node name, `ambient` or `ground`.
    pub b: String,
    /// W/K
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcNetwork {
    pub nodes: Vec<ThermalNode>,
    pub edges: Vec<ThermalEdge>,
    /// Share of the heating power delivered to each node.
    #[serde(default)]
    pub heating_gain: BTreeMap<String, f64>,
    /// Effective solar aperture per node, m² of glazing times transmittance.
    #[serde(default)]
    pub solar_gain: BTreeMap<String, f64>,
}

enum Endpoint {
    Node(usize),
    Ambient,
    Ground,
}

impl RcNetwork {
    /// Four-node model of a 40 m x 13 m x 4 m greenhouse with a concrete
    /// floor slab and a 10 mm twin-wall polycarbonate roof and walls.
    ///
    /// Handbook magnitudes: envelope U = 3.0 W/m²K split into an inner film
    /// (7.7 W/m²K) and the remaining outer path; air capacitance is
    /// rho*cp*volume with a 10x internal-mass multiplier; 0.1 m concrete slab;
    /// solar transmittance 0.8 over the floor area, delivered to the air.
    pub fn reference_greenhouse() -> Self {
        let (length, width, height) = (40.0, 13.0, 4.0);
        let floor_area = length * width;
        let roof_area = floor_area;
        let wall_area = 2.0 * (length + width) * height;
        let volume = floor_area * height;

        let u_envelope = 3.0;
        let h_inner = 7.7;
        let g_outer = 1.0 / (1.0 / u_envelope - 1.0 / h_inner);

        let air_c = 1.2 * 1005.0 * volume * 10.0;
        let cover_c_per_m2 = 2500.0;
        let floor_c_per_m2 = 2300.0 * 880.0 * 0.1;

        let node = |name: &str, capacitance: f64| ThermalNode {
            name: name.into(),
            capacitance,
        };
        let edge = |a: &str, b: &str, conductance: f64| ThermalEdge {
            a: a.into(),
            b: b.into(),
            conductance,
        };
        RcNetwork {
            nodes: vec![
                node("air", air_c),
                node("floor", floor_c_per_m2 * floor_area),
                node("ceiling", cover_c_per_m2 * roof_area),
                node("wall", cover_c_per_m2 * wall_area),
            ],
            edges: vec![
                edge("air", "floor", 5.0 * floor_area),
                edge("air", "ceiling", h_inner * roof_area),
                edge("air", "wall", h_inner * wall_area),
                edge("ceiling", AMBIENT, g_outer * roof_area),
                edge("wall", AMBIENT, g_outer * wall_area),
                edge("floor", GROUND, 1.5 * floor_area),
            ],
            heating_gain: BTreeMap::from([("air".to_string(), 1.0)]),
            solar_gain: BTreeMap::from([("air".to_string(), 0.8 * floor_area)]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.index().map(|_| ())
    }

    fn index(&self) -> Result<HashMap<&str, usize>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidNetwork("network has no nodes".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.name == AMBIENT || n.name == GROUND {
                return Err(Error::InvalidNetwork(format!(
                    "node name `{}` is reserved for a boundary",
                    n.name
                )));
            }
            if !(n.capacitance > 0.0 && n.capacitance.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "node `{}` has non-positive capacitance {}",
                    n.name, n.capacitance
                )));
            }
            if index.insert(n.name.as_str(), i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate node `{}`", n.name)));
            }
        }
        for e in &self.edges {
            if !(e.conductance >= 0.0 && e.conductance.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "edge {}-{} has negative conductance {}",
                    e.a, e.b, e.conductance
                )));
            }
            for end in [&e.a, &e.b] {
                if end != AMBIENT && end != GROUND && !index.contains_key(end.as_str()) {
                    return Err(Error::InvalidNetwork(format!(
                        "edge endpoint `{end}` is not a node"
                    )));
                }
            }
            if e.a == e.b {
                return Err(Error::InvalidNetwork(format!("self-loop on `{}`", e.a)));
            }
        }
        for (map, what) in [(&self.heating_gain, "heating"), (&self.solar_gain, "solar")] {
            for (name, gain) in map {
                if !index.contains_key(name.as_str()) {
                    return Err(Error::InvalidNetwork(format!(
                        "{what} gain names unknown node `{name}`"
                    )));
                }
                if !gain.is_finite() {
                    return Err(Error::InvalidNetwork(format!("{what} gain on `{name}` is not finite")));
                }
            }
        }
        Ok(index)
    }

    /// Continuous-time `(A_c, B_c)` with `B_c` columns `[heating, solar, ambient, ground]`.
    pub fn continuous(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let index = self.index()?;
        let n = self.nodes.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, 4);
        let endpoint = |name: &str| match name {
            AMBIENT => Endpoint::Ambient,
            GROUND => Endpoint::Ground,
            other => Endpoint::Node(index[other]),
        };
        let cap: Vec<f64> = self.nodes.iter().map(|n| n.capacitance).collect();

        for e in &self.edges {
            let g = e.conductance;
            match (endpoint(&e.a), endpoint(&e.b)) {
                (Endpoint::Node(i), Endpoint::Node(j)) => {
                    a[(i, i)] -= g / cap[i];
                    a[(i, j)] += g / cap[i];
                    a[(j, j)] -= g / cap[j];
                    a[(j, i)] += g / cap[j];
                }
                (Endpoint::Node(i), boundary) | (boundary, Endpoint::Node(i)) => {
                    let col = match boundary {
                        Endpoint::Ambient => 2,
                        Endpoint::Ground => 3,
                        Endpoint::Node(_) => unreachable!(),
                    };
                    a[(i, i)] -= g / cap[i];
                    b[(i, col)] += g / cap[i];
                }
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "edge {}-{} joins two boundary nodes",
                        e.a, e.b
                    )))
                }
            }
        }
        for (name, gain) in &self.heating_gain {
            let i = index[name.as_str()];
            b[(i, 0)] += gain / cap[i];
        }
        for (name, gain) in &self.solar_gain {
            let i = index[name.as_str()];
            b[(i, 1)] += gain / cap[i];
        }
        Ok((a, b))
    }
}

/// Discrete-time model `x+ = A x + B_u u + B_v v + B_w w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_v: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub disturbance_names: Vec<String>,
    pub error_names: Vec<String>,
}

/// Assemble the network ODE and discretize it with a zero-order hold.
pub fn build_rc_model(network: &RcNetwork, dt: f64) -> Result<ThermalModel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("sampling interval must be positive, got {dt}")));
    }
    let (ac, bc) = network.continuous()?;
    let (a, bd) = zero_order_hold(&ac, &bc, dt);
    let n = a.nrows();
    let b_u = bd.columns(0, 1).into_owned();
    let b_v = bd.columns(1, 3).into_owned();
    let b_w = b_v.columns(0, 2).into_owned();
    debug_assert_eq!(b_u.nrows(), n);
    Ok(ThermalModel {
        a,
        b_u,
        b_v,
        b_w,
        dt,
        state_names: network.nodes.iter().map(|n| n.name.clone()).collect(),
        input_names: vec!["heating_w".into()],
        disturbance_names: DISTURBANCE_NAMES.iter().map(|s| s.to_string()).collect(),
        error_names: ERROR_NAMES.iter().map(|s| s.to_string()).collect(),
    })
}

/// Exact discretization via the exponential of the augmented matrix
/// `[[A_c, B_c], [0, 0]] * dt`.
pub fn zero_order_hold(ac: &DMatrix<f64>, bc: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

impl ThermalModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn n_disturbances(&self) -> usize {
        self.b_v.ncols()
    }
    pub fn n_errors(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    /// One step of `x+ = A x + B_u u + B_v v + B_w w`.
    pub fn simulate_step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("state", self.n_states(), x.len())?;
        check_len("input", self.n_inputs(), u.len())?;
        check_len("disturbance", self.n_disturbances(), v.len())?;
        check_len("forecast error", self.n_errors(), w.len())?;
        Ok(&self.a * x + &self.b_u * u + &self.b_v * v + &self.b_w * w)
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Long-format CSV (`matrix,row,col,value`) of all four matrices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("matrix,row,col,value\n");
        let blocks: [(&str, &DMatrix<f64>, &[String]); 4] = [
            ("A", &self.a, &self.state_names),
            ("B_u", &self.b_u, &self.input_names),
            ("B_v", &self.b_v, &self.disturbance_names),
            ("B_w", &self.b_w, &self.error_names),
        ];
        for (name, mat, cols) in blocks {
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    let _ = writeln!(
                        out,
                        "{name},{},{},{:e}",
                        self.state_names[r], cols[c], mat[(r, c)]
                    );
                }
            }
        }
        out
    }

    pub fn lift(&self, horizon: usize) -> Result<LiftedModel> {
        lift(self, horizon)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

/// Stacked prediction `x = A_bar x0 + Bu_bar u + Bv_bar v + Bw_bar w` for
/// `x = (x_1, ..., x_H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub horizon: usize,
    pub n_states: usize,
    pub n_inputs: usize,
    pub n_disturbances: usize,
    pub n_errors: usize,
    pub a_bar: DMatrix<f64>,
    pub bu_bar: DMatrix<f64>,
    pub bv_bar: DMatrix<f64>,
    pub bw_bar: DMatrix<f64>,
}

pub fn lift(model: &ThermalModel, horizon: usize) -> Result<LiftedModel> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = model.n_states();
    let (m, p, q) = (model.n_inputs(), model.n_disturbances(), model.n_errors());

    // powers[k] = A^k
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 0..horizon {
        let next = &model.a * &powers[k];
        powers.push(next);
    }

    let mut a_bar = DMatrix::zeros(horizon * n, n);
    let mut bu_bar = DMatrix::zeros(horizon * n, horizon * m);
    let mut bv_bar = DMatrix::zeros(horizon * n, horizon * p);
    let mut bw_bar = DMatrix::zeros(horizon * n, horizon * q);
    for k in 0..horizon {
        a_bar.view_mut((k * n, 0), (n, n)).copy_from(&powers[k + 1]);
        for j in 0..=k {
            let pw = &powers[k - j];
            bu_bar
                .view_mut((k * n, j * m), (n, m))
                .copy_from(&(pw * &model.b_u));
            bv_bar
                .view_mut((k * n, j * p), (n, p))
                .copy_from(&(pw * &model.b_v));
            bw_bar
                .view_mut((k * n, j * q), (n, q))
                .copy_from(&(pw * &model.b_w));
        }
    }
    Ok(LiftedModel {
        horizon,
        n_states: n,
        n_inputs: m,
        n_disturbances: p,
        n_errors: q,
        a_bar,
        bu_bar,
        bv_bar,
        bw_bar,
    })
}

impl LiftedModel {
    pub fn predict(
        &self,
        x0: &DVector<f64>,
        u: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len("state", self.n_states, x0.len())?;
        check_len("stacked input", self.horizon * self.n_inputs, u.len())?;
        check_len("stacked disturbance", self.horizon * self.n_disturbances, v.len())?;
        check_len("stacked forecast error", self.horizon * self.n_errors, w.len())?;
        Ok(&self.a_bar * x0 + &self.bu_bar * u + &self.bv_bar * v + &self.bw_bar * w)
    }

    /// Row index of state `state` at prediction step `k` (1-based, `1..=H`).
    pub fn row(&self, k: usize, state: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        (k - 1) * self.n_states + state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
            assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
        }};
    }

    fn single_node(c: f64, g: f64) -> RcNetwork {
        RcNetwork {
            nodes: vec![ThermalNode { name: "air".into(), capacitance: c }],
            edges: vec![ThermalEdge { a: "air".into(), b: AMBIENT.into(), conductance: g }],
            heating_gain: BTreeMap::from([("air".into(), 1.0)]),
            solar_gain: BTreeMap::new(),
        }
    }

    #[test]
    fn scalar_rc_decay() {
        let (c, g, dt) = (2.0e6, 500.0, 3600.0);
        let model = build_rc_model(&single_node(c, g), dt).unwrap();
        assert_close!(model.a[(0, 0)], (-g * dt / c).exp(), 1e-14);
        // ambient column: 1 - e^{-G dt / C}
        assert_close!(model.b_v[(0, 1)], 1.0 - (-g * dt / c).exp(), 1e-13);
        // heating: (1 - e^{-G dt/C}) / G
        assert_close!(model.b_u[(0, 0)], (1.0 - (-g * dt / c).exp()) / g, 1e-15);
    }

    #[test]
    fn no_heat_paths_gives_identity() {
        let mut net = RcNetwork::reference_greenhouse();
        for e in &mut net.edges {
            e.conductance = 0.0;
        }
        let model = build_rc_model(&net, 3600.0).unwrap();
        let n = model.n_states();
        assert!((model.a.clone() - DMatrix::identity(n, n)).abs().max() < 1e-15);
        let air = model.state_index("air").unwrap();
        for r in 0..n {
            for c in 0..3 {
                let v = model.b_v[(r, c)];
                if r == air && c == SOLAR {
                    let expected = net.solar_gain["air"] * 3600.0 / net.nodes[air].capacitance;
                    assert_close!(v, expected, 1e-12);
                } else {
                    assert_eq!(v, 0.0, "B_v[{r},{c}]");
                }
            }
        }
    }

    #[test]
    fn reference_network_shape_and_stability() {
        let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
        assert_eq!(model.n_states(), 4);
        assert_eq!(model.n_inputs(), 1);
        assert_eq!(model.n_disturbances(), 3);
        assert_eq!(model.n_errors(), 2);
        assert_eq!(model.b_w, model.b_v.columns(0, 2).into_owned());
        let rho = model.spectral_radius();
        assert!(rho < 1.0, "spectral radius {rho}");
    }

    #[test]
    fn rejects_bad_networks() {
        let mut net = RcNetwork::reference_greenhouse();
        net.nodes[2].capacitance = 0.0;
        match build_rc_model(&net, 3600.0) {
            Err(Error::InvalidNetwork(msg)) => assert!(msg.contains("ceiling"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let mut net = RcNetwork::reference_greenhouse();
        net.edges[0].conductance = -1.0;
        assert!(build_rc_model(&net, 3600.0).is_err());
        let mut net = RcNetwork::reference_greenhouse();
        net.edges[0].b = "attic".into();
        assert!(build_rc_model(&net, 3600.0).is_err());
        assert!(build_rc_model(&RcNetwork::reference_greenhouse(), 0.0).is_err());
    }

    #[test]
    fn lift_single_step_is_the_model() {
        let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
        let lifted = model.lift(1).unwrap();
        assert_eq!(lifted.a_bar, model.a);
        assert_eq!(lifted.bu_bar, model.b_u);
        assert_eq!(lifted.bv_bar, model.b_v);
        assert_eq!(lifted.bw_bar, model.b_w);
        assert!(model.lift(0).is_err());
    }

    #[test]
    fn lift_integrator_counts_copies() {
        let b = DMatrix::from_column_slice(2, 1, &[0.5, 2.0]);
        let model = ThermalModel {
            a: DMatrix::identity(2, 2),
            b_u: b.clone(),
            b_v: DMatrix::zeros(2, 1),
            b_w: DMatrix::zeros(2, 1),
            dt: 1.0,
            state_names: vec!["x".into(), "y".into()],
            input_names: vec!["u".into()],
            disturbance_names: vec!["v".into()],
            error_names: vec!["w".into()],
        };
        let lifted = model.lift(4).unwrap();
        for k in 0..4 {
            for j in 0..4 {
                let block = lifted.bu_bar.view((2 * k, j), (2, 1)).into_owned();
                if j <= k {
                    assert_eq!(block, b);
                } else {
                    assert_eq!(block, DMatrix::zeros(2, 1));
                }
            }
        }
    }

    #[test]
    fn simulate_step_zero_and_mismatch() {
        let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
        let x = DVector::zeros(4);
        let out = model
            .simulate_step(&x, &DVector::zeros(1), &DVector::zeros(3), &DVector::zeros(2))
            .unwrap();
        assert_eq!(out, DVector::zeros(4));
        assert!(matches!(
            model.simulate_step(&DVector::zeros(3), &DVector::zeros(1), &DVector::zeros(3), &DVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn simulate_step_fixed_point() {
        let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
        let v = DVector::from_vec(vec![150.0, 4.0, 18.0]);
        let rhs = &model.b_v * &v;
        let lhs = DMatrix::identity(4, 4) - &model.a;
        let x_star = lhs.lu().solve(&rhs).unwrap();
        let next = model
            .simulate_step(&x_star, &DVector::zeros(1), &v, &DVector::zeros(2))
            .unwrap();
        assert!((next - &x_star).abs().max() < 1e-10);
    }

    #[test]
    fn csv_export_lists_every_entry() {
        let model = build_rc_model(&RcNetwork::reference_greenhouse(), 3600.0).unwrap();
        let csv = model.to_csv();
        assert_eq!(csv.lines().count(), 1 + 16 + 4 + 12 + 8);
        assert!(csv.starts_with("matrix,row,col,value\nA,air,air,"));
    }

    #[test]
    fn network_json_round_trip() {
        let net = RcNetwork::reference_greenhouse();
        let json = serde_json::to_string(&net).unwrap();
        let back: RcNetwork = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }
}
