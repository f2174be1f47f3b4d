//! Receding-horizon controllers: rule-based, certainty-equivalent MPC,
//! budget-robust MPC, data-driven robust MPC and the perfect-forecast bound.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{AutoBackend, LinearProgram, LpBackend, LpStatus};
use crate::robust::{solve_program, DisturbanceSet, RobustProgram};
use crate::thermal::{LiftedModel, ThermalModel};
use crate::uncertainty::UncertaintySet;
use crate::weather::IntervalWeather;

/// Lower comfort bound by local time of day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComfortSchedule {
    /// Local hour at which the day bound starts (inclusive).
    pub day_start: f64,
    /// Local hour at which the night bound resumes.
    pub day_end: f64,
    pub day_min: f64,
    pub night_min: f64,
    pub utc_offset_hours: f64,
}

impl Default for ComfortSchedule {
    fn default() -> Self {
        ComfortSchedule {
            day_start: 6.0,
            day_end: 22.0,
            day_min: 25.0,
            night_min: 18.0,
            utc_offset_hours: -5.0,
        }
    }
}

impl ComfortSchedule {
    pub fn constant(bound: f64) -> Self {
        ComfortSchedule {
            day_min: bound,
            night_min: bound,
            ..Default::default()
        }
    }

    pub fn local_hour(&self, timestamp: i64) -> f64 {
        ((timestamp as f64 / 3600.0 + self.utc_offset_hours) % 24.0 + 24.0) % 24.0
    }

    pub fn bound_at(&self, timestamp: i64) -> f64 {
        let h = self.local_hour(timestamp);
        if h >= self.day_start && h < self.day_end {
            self.day_min
        } else {
            self.night_min
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.day_min < self.night_min {
            return Err(Error::Config(format!(
                "day bound {} is below the night bound {}",
                self.day_min, self.night_min
            )));
        }
        if !(0.0..=24.0).contains(&self.day_start) || !(0.0..=24.0).contains(&self.day_end) {
            return Err(Error::Config("schedule hours must lie in [0, 24]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbcParams {
    /// Heating power when on, W.
    pub power: f64,
    /// Switching offset above the comfort bound, K.
    pub delta: f64,
}

impl Default for RbcParams {
    fn default() -> Self {
        RbcParams {
            power: 60_000.0,
            delta: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon: usize,
    /// Heating capacity, W.
    pub u_max: f64,
    pub schedule: ComfortSchedule,
    pub rbc: RbcParams,
    /// Objective weight of comfort slack, per K h, relative to 1 per W h of heat.
    pub soft_penalty: f64,
    /// Ground temperature used in predictions, °C.
    pub ground_temp: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            horizon: 5,
            u_max: 300_000.0,
            schedule: ComfortSchedule::default(),
            rbc: RbcParams::default(),
            soft_penalty: 1e6,
            ground_temp: 18.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::Config(format!("u_max must be positive, got {}", self.u_max)));
        }
        if self.rbc.power > self.u_max || self.rbc.power < 0.0 {
            return Err(Error::Config(format!(
                "RBC power {} must lie in [0, u_max = {}]",
                self.rbc.power, self.u_max
            )));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerKind {
    Rbc,
    Cempc,
    Rmpc { omega: f64 },
    Ddrmpc { sets: Vec<UncertaintySet> },
    Pb,
}

impl ControllerKind {
    pub fn label(&self) -> String {
        match self {
            ControllerKind::Rbc => "rbc".into(),
            ControllerKind::Cempc => "cempc".into(),
            ControllerKind::Rmpc { omega } => format!("rmpc_omega{omega}"),
            ControllerKind::Ddrmpc { .. } => "ddrmpc".into(),
            ControllerKind::Pb => "pb".into(),
        }
    }
}

/// Bang-bang rule: full power `C` while `x_air <= T_t + delta`.
pub fn rbc_step(x_air: f64, timestamp: i64, cfg: &ControllerConfig) -> f64 {
    if x_air <= cfg.schedule.bound_at(timestamp) + cfg.rbc.delta {
        cfg.rbc.power
    } else {
        0.0
    }
}

/// Stacked disturbance `(solar, ambient, ground)` per interval.
pub fn stack_disturbances(weather: &[IntervalWeather], ground_temp: f64) -> DVector<f64> {
    DVector::from_iterator(
        weather.len() * 3,
        weather.iter().flat_map(|w| [w.solar, w.temp, ground_temp]),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// First input, W, clamped to `[0, u_max]`.
    pub u: f64,
    /// The hard program was infeasible and comfort slack was used.
    pub soft: bool,
    pub lp_iterations: usize,
}

fn air_index(model: &ThermalModel) -> usize {
    model.state_index("air").unwrap_or(0)
}

fn bounds(t: i64, dt: f64, cfg: &ControllerConfig) -> Vec<f64> {
    (1..=cfg.horizon)
        .map(|k| cfg.schedule.bound_at(t + k as i64 * dt.round() as i64))
        .collect()
}

fn check_window(forecast: &[IntervalWeather], horizon: usize) -> Result<()> {
    if forecast.len() < horizon {
        return Err(Error::Dimension {
            what: "forecast window",
            expected: horizon,
            got: forecast.len(),
        });
    }
    Ok(())
}

/// Deterministic MPC over explicit state trajectories: variables `x_1..x_H`
/// and `u_0..u_{H-1}` tied by the one-step dynamics.
pub fn cempc_step(
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    forecast: &[IntervalWeather],
    cfg: &ControllerConfig,
) -> Result<StepOutcome> {
    check_window(forecast, cfg.horizon)?;
    let hard = cempc_lp(model, x0, t, forecast, cfg, None);
    let backend = AutoBackend::default();
    let sol = backend.solve(&hard.0);
    let (sol, soft) = if sol.status == LpStatus::Infeasible {
        let soft = cempc_lp(model, x0, t, forecast, cfg, Some(cfg.soft_penalty));
        (backend.solve(&soft.0), true)
    } else {
        (sol, false)
    };
    if !sol.is_optimal() {
        return Err(Error::Solver(format!("certainty-equivalent LP ended {:?}", sol.status)));
    }
    let u = sol.x[hard.1] * cfg.u_max;
    Ok(StepOutcome {
        u: u.clamp(0.0, cfg.u_max),
        soft,
        lp_iterations: sol.iterations,
    })
}

fn cempc_lp(
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    forecast: &[IntervalWeather],
    cfg: &ControllerConfig,
    soft: Option<f64>,
) -> (LinearProgram, usize) {
    let n = model.n_states();
    let dt_h = model.dt / 3600.0;
    let air = air_index(model);
    let bound = bounds(t, model.dt, cfg);
    let mut lp = LinearProgram::new();
    // heat in MWh, comfort slack in MWh-equivalent
    let u = lp.add_vars(cfg.horizon, cfg.u_max * dt_h * 1e-6, true);
    let x = lp.add_vars(cfg.horizon * n, 0.0, false);
    let slack = soft.map(|p| lp.add_vars(cfg.horizon, p * dt_h * 1e-6, true));
    for k in 0..cfg.horizon {
        let v = [forecast[k].solar, forecast[k].temp, cfg.ground_temp];
        for i in 0..n {
            // x_{k+1,i} - sum_j A_ij x_{k,j} - Bu_i u_k = Bv_i v_k (+ A x0 at k = 0)
            let mut coeffs = vec![(x.start + k * n + i, 1.0), (u.start + k, -model.b_u[(i, 0)] * cfg.u_max)];
            let mut rhs: f64 = (0..3).map(|c| model.b_v[(i, c)] * v[c]).sum();
            for j in 0..n {
                if k == 0 {
                    rhs += model.a[(i, j)] * x0[j];
                } else {
                    coeffs.push((x.start + (k - 1) * n + j, -model.a[(i, j)]));
                }
            }
            lp.add_eq(coeffs, rhs);
        }
        lp.add_le(vec![(u.start + k, 1.0)], 1.0);
        let mut comfort = vec![(x.start + k * n + air, 1.0)];
        if let Some(s) = &slack {
            comfort.push((s.start + k, 1.0));
        }
        lp.add_ge(comfort, bound[k]);
    }
    (lp, u.start)
}

/// Robust program for the air-temperature lower bounds and input limits
/// over the horizon, against the disturbance set `set`.
pub fn mpc_program(
    lifted: &LiftedModel,
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    forecast: &[IntervalWeather],
    cfg: &ControllerConfig,
    set: DisturbanceSet,
) -> Result<RobustProgram> {
    check_window(forecast, cfg.horizon)?;
    let hh = cfg.horizon;
    let n = lifted.n_states;
    let air = air_index(model);
    let dt_h = model.dt / 3600.0;
    let bound = bounds(t, model.dt, cfg);
    let mut fx = DMatrix::zeros(hh, hh * n);
    let mut f_x = DVector::zeros(hh);
    for k in 1..=hh {
        fx[(k - 1, lifted.row(k, air))] = -1.0;
        f_x[k - 1] = -bound[k - 1];
    }
    let mut fu = DMatrix::zeros(2 * hh, hh);
    let mut f_u = DVector::zeros(2 * hh);
    for k in 0..hh {
        fu[(k, k)] = 1.0;
        f_u[k] = cfg.u_max;
        fu[(hh + k, k)] = -1.0;
    }
    Ok(RobustProgram {
        lifted: lifted.clone(),
        x0: x0.clone(),
        forecast: stack_disturbances(&forecast[..hh], cfg.ground_temp),
        cost: DVector::from_element(hh, dt_h * 1e-6),
        fx,
        f_x,
        fu,
        f_u,
        set,
        input_scale: cfg.u_max,
        soft_penalty: None,
    })
}

/// Solve the robust program, retrying with comfort slack when infeasible.
pub fn robust_first_input(mut program: RobustProgram, cfg: &ControllerConfig) -> Result<StepOutcome> {
    let backend = AutoBackend::default();
    let dt_h = program.cost[0] * 1e6;
    let (sol, soft) = match solve_program(&program, &backend) {
        Ok(s) => (s, false),
        Err(Error::Solver(_)) => {
            program.soft_penalty = Some(cfg.soft_penalty * dt_h * 1e-6);
            (solve_program(&program, &backend)?, true)
        }
        Err(e) => return Err(e),
    };
    Ok(StepOutcome {
        u: sol.policy.first_input()[0].clamp(0.0, cfg.u_max),
        soft,
        lp_iterations: sol.lp.iterations,
    })
}

pub fn rmpc_step(
    lifted: &LiftedModel,
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    forecast: &[IntervalWeather],
    omega: f64,
    cfg: &ControllerConfig,
) -> Result<StepOutcome> {
    if !(omega >= 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be nonnegative, got {omega}")));
    }
    let set = DisturbanceSet::joint_l1(cfg.horizon * model.n_errors(), omega)?;
    robust_first_input(mpc_program(lifted, model, x0, t, forecast, cfg, set)?, cfg)
}

pub fn ddrmpc_step(
    lifted: &LiftedModel,
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    forecast: &[IntervalWeather],
    sets: &[UncertaintySet],
    cfg: &ControllerConfig,
) -> Result<StepOutcome> {
    for s in sets {
        if let crate::uncertainty::SetKind::Svc(m) = &s.kind {
            if m.theta.is_none() {
                return Err(Error::InvalidArgument("uncertainty set is not calibrated".into()));
            }
        }
        if s.dim() != cfg.horizon {
            return Err(Error::Dimension {
                what: "uncertainty set",
                expected: cfg.horizon,
                got: s.dim(),
            });
        }
    }
    let set = DisturbanceSet::per_channel(cfg.horizon, model.n_errors(), sets)?;
    robust_first_input(mpc_program(lifted, model, x0, t, forecast, cfg, set)?, cfg)
}

/// Certainty-equivalent MPC fed the realized weather.
pub fn pb_step(
    model: &ThermalModel,
    x0: &DVector<f64>,
    t: i64,
    truth: &[IntervalWeather],
    cfg: &ControllerConfig,
) -> Result<StepOutcome> {
    cempc_step(model, x0, t, truth, cfg)
}

/// What a controller sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub timestamp: i64,
    pub state: &'a DVector<f64>,
    /// Leads `1..=H` of the forecast issued at `timestamp`.
    pub forecast: &'a [IntervalWeather],
    /// Realized weather over the next `H` intervals; only oracles may read it.
    pub truth: &'a [IntervalWeather],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub u: f64,
    pub soft: bool,
    pub lp_iterations: usize,
    pub solve_seconds: f64,
}

pub trait Controller {
    fn name(&self) -> String;
    /// True for controllers given future measurements.
    fn is_oracle(&self) -> bool {
        false
    }
    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision>;
}

pub struct StrategyController {
    kind: ControllerKind,
    cfg: ControllerConfig,
    model: ThermalModel,
    lifted: LiftedModel,
}

impl StrategyController {
    pub fn new(kind: ControllerKind, cfg: ControllerConfig, model: ThermalModel) -> Result<Self> {
        cfg.validate()?;
        let lifted = model.lift(cfg.horizon)?;
        if let ControllerKind::Ddrmpc { sets } = &kind {
            // fail early on malformed sets
            DisturbanceSet::per_channel(cfg.horizon, model.n_errors(), sets)?;
        }
        Ok(StrategyController {
            kind,
            cfg,
            model,
            lifted,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }
}

impl Controller for StrategyController {
    fn name(&self) -> String {
        self.kind.label()
    }

    fn is_oracle(&self) -> bool {
        matches!(self.kind, ControllerKind::Pb)
    }

    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision> {
        let clock = Instant::now();
        let x = ctx.state;
        let t = ctx.timestamp;
        let out = match &self.kind {
            ControllerKind::Rbc => StepOutcome {
                u: rbc_step(x[air_index(&self.model)], t, &self.cfg),
                ..Default::default()
            },
            ControllerKind::Cempc => cempc_step(&self.model, x, t, ctx.forecast, &self.cfg)?,
            ControllerKind::Pb => pb_step(&self.model, x, t, ctx.truth, &self.cfg)?,
            ControllerKind::Rmpc { omega } => {
                rmpc_step(&self.lifted, &self.model, x, t, ctx.forecast, *omega, &self.cfg)?
            }
            ControllerKind::Ddrmpc { sets } => {
                ddrmpc_step(&self.lifted, &self.model, x, t, ctx.forecast, sets, &self.cfg)?
            }
        };
        Ok(Decision {
            u: out.u.clamp(0.0, self.cfg.u_max),
            soft: out.soft,
            lp_iterations: out.lp_iterations,
            solve_seconds: clock.elapsed().as_secs_f64(),
        })
    }
}
