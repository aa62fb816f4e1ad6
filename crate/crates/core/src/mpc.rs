//! Receding-horizon control of the radiant loop by exhaustive search over
//! on/off flow sequences.
//!
//! The horizon cost of a plan is
//!
//! ```text
//! comfort = kappa * sum_{t=0..N} p(t) (T(t) - T_set)^2 / N
//! heating = sum_{t<N, flow on} beta * T_s * (T_in - T_out(t))
//! pump    = sum_{t<N} gamma * T_s * Q(t) / 3600
//! ```
//!
//! with `Q` the volumetric flow in m3/h and the predicted outlet temperature
//! `T_out = T_in - r (T_in - T)`.

use crate::data::{
    build_feature_vector, Dataset, HorizonSpec, Predictor, RolloutWindow, SampleRecord, N_INPUTS,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::regress::{RlsSettings, RlsState};
use crate::sim::{
    self, hysteresis_control, input_vector, step_zone, ControlAction, Disturbances, HouseConfig,
    ScenarioConfig, ZoneState, FLOW_MAX, INLET_TEMP, SAMPLING_PERIOD_H,
};
use crate::weighting::{GotlSettings, IntervalRollouts, OnlineGotl};

pub const DEFAULT_BETA: f64 = 0.3333;
pub const DEFAULT_GAMMA: f64 = 527.8;
pub const WATER_DENSITY: f64 = 1000.0;
/// Enumeration is exhaustive, so the horizon is capped.
pub const MAX_HORIZON: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcParams {
    pub kappa: f64,
    /// kW per K of water temperature drop.
    pub beta: f64,
    /// Pump coefficient, kW s / (h m3).
    pub gamma: f64,
    pub setpoint: f64,
    pub horizon_steps: usize,
    pub reopt_steps: usize,
    pub flow_max: f64,
    pub inlet_temp: f64,
    pub sampling_period_h: f64,
    /// Heat-exchanger effectiveness used for the predicted outlet temperature.
    pub radiant_effectiveness: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        MpcParams {
            kappa: 20.0,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            setpoint: sim::DEFAULT_SETPOINT,
            horizon_steps: 12,
            reopt_steps: 2,
            flow_max: FLOW_MAX,
            inlet_temp: INLET_TEMP,
            sampling_period_h: SAMPLING_PERIOD_H,
            radiant_effectiveness: HouseConfig::default().radiant_effectiveness,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 || self.horizon_steps > MAX_HORIZON {
            return Err(Error::InvalidParameter(format!(
                "horizon_steps must lie in 1..={MAX_HORIZON}, got {}",
                self.horizon_steps
            )));
        }
        if self.reopt_steps == 0 || self.reopt_steps > self.horizon_steps {
            return Err(Error::InvalidParameter(
                "reopt_steps must lie in 1..=horizon_steps".into(),
            ));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a nonnegative number"
                )));
            }
        }
        if !(self.flow_max > 0.0 && self.sampling_period_h > 0.0) {
            return Err(Error::InvalidParameter(
                "flow_max and sampling period must be positive".into(),
            ));
        }
        if !(self.radiant_effectiveness > 0.0 && self.radiant_effectiveness <= 1.0) {
            return Err(Error::InvalidParameter(
                "radiant_effectiveness must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Pump energy of one step at `flow` kg/s, kWh.
    pub fn pump_step(&self, flow: f64) -> f64 {
        let q_m3_per_h = flow / WATER_DENSITY * 3600.0;
        self.gamma * self.sampling_period_h * q_m3_per_h / 3600.0
    }

    /// Heating cost of one step given the outlet temperature, kWh.
    pub fn heating_step(&self, on: bool, outlet: f64) -> f64 {
        if on {
            self.beta * self.sampling_period_h * (self.inlet_temp - outlet)
        } else {
            0.0
        }
    }

    pub fn predicted_outlet(&self, zone_temp: f64) -> f64 {
        self.inlet_temp - self.radiant_effectiveness * (self.inlet_temp - zone_temp)
    }

    pub fn flow(&self, on: bool) -> f64 {
        if on {
            self.flow_max
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub total: f64,
    pub comfort: f64,
    pub heating: f64,
    pub pump: f64,
}

impl CostBreakdown {
    fn new(comfort: f64, heating: f64, pump: f64) -> Self {
        CostBreakdown {
            total: comfort + heating + pump,
            comfort,
            heating,
            pump,
        }
    }
}

/// Cost of a horizon. `temps` and `presence` cover `t = 0..=N`, `flows` and
/// `outlets` cover `t = 0..N`.
pub fn horizon_cost(
    temps: &[f64],
    flows: &[f64],
    outlets: &[f64],
    presence: &[bool],
    params: &MpcParams,
) -> Result<CostBreakdown> {
    let n = flows.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty horizon".into()));
    }
    if temps.len() != n + 1 || presence.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: temps.len().min(presence.len()),
        });
    }
    if outlets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: outlets.len(),
        });
    }
    Ok(segment_cost(
        temps, flows, outlets, presence, params, n, 0, n,
    ))
}

/// Cost restricted to steps `from..to` of a horizon of length `horizon`:
/// comfort terms `t = from+1..=to` (plus `t = 0` when `from == 0` and the
/// whole horizon is taken), heating and pump terms `t = from..to`.
#[allow(clippy::too_many_arguments)]
fn segment_cost(
    temps: &[f64],
    flows: &[f64],
    outlets: &[f64],
    presence: &[bool],
    params: &MpcParams,
    horizon: usize,
    from: usize,
    to: usize,
) -> CostBreakdown {
    let first_comfort = if from == 0 && to == horizon {
        0
    } else {
        from + 1
    };
    let mut comfort = 0.0;
    for t in first_comfort..=to {
        if presence[t] {
            let d = temps[t] - params.setpoint;
            comfort += d * d;
        }
    }
    comfort *= params.kappa / horizon as f64;
    let mut heating = 0.0;
    let mut pump = 0.0;
    for t in from..to {
        let on = flows[t] > 0.0;
        heating += params.heating_step(on, outlets[t]);
        pump += params.pump_step(flows[t]);
    }
    CostBreakdown::new(comfort, heating, pump)
}

/// Anything that predicts the zone temperature over a horizon for a given
/// on/off sequence.
pub trait HorizonPredictor: Sync {
    fn current_temp(&self) -> f64;
    /// Writes predicted temperatures for steps `1..=flows.len()` into `out`.
    fn predict(&self, flows: &[bool], out: &mut [f64]);
}

/// Feature-based rollout of a [`Predictor`] with the forecast disturbances
/// filled in and the flow channel set per candidate.
pub struct RolloutModel<'a, P: Predictor + ?Sized> {
    predictor: &'a P,
    window: RolloutWindow,
    template: Vec<f64>,
    flow_max: f64,
}

impl<'a, P: Predictor + ?Sized> RolloutModel<'a, P> {
    /// `history` holds records before the decision instant, `current` is the
    /// measured temperature and `forecast` the coming disturbances.
    pub fn new(
        predictor: &'a P,
        history: &Dataset,
        current: f64,
        forecast: &[Disturbances],
        lags: usize,
        params: &MpcParams,
    ) -> Result<Self> {
        let window = RolloutWindow::from_history(history, current, lags)?;
        let n = params.horizon_steps;
        if forecast.len() < n {
            return Err(Error::HorizonTooLong {
                horizon: n,
                available: forecast.len(),
            });
        }
        let mut template = Vec::with_capacity(n * N_INPUTS);
        for d in &forecast[..n] {
            let action = ControlAction {
                water_flow: 0.0,
                inlet_temp: params.inlet_temp,
            };
            template.extend(input_vector(&action, d));
        }
        Ok(RolloutModel {
            predictor,
            window,
            template,
            flow_max: params.flow_max,
        })
    }
}

impl<P: Predictor + ?Sized> HorizonPredictor for RolloutModel<'_, P> {
    fn current_temp(&self) -> f64 {
        self.window.last_output()
    }

    fn predict(&self, flows: &[bool], out: &mut [f64]) {
        let mut inputs = self.template[..flows.len() * N_INPUTS].to_vec();
        for (s, &on) in flows.iter().enumerate() {
            inputs[s * N_INPUTS] = if on { self.flow_max } else { 0.0 };
        }
        self.window.rollout_into(self.predictor, &inputs, out);
    }
}

/// `(1 - alpha) * target + alpha * source`, each rolled out on its own.
pub struct Blend<A, B> {
    pub target: A,
    pub source: B,
    pub alpha: f64,
}

impl<A: HorizonPredictor, B: HorizonPredictor> HorizonPredictor for Blend<A, B> {
    fn current_temp(&self) -> f64 {
        self.target.current_temp()
    }

    fn predict(&self, flows: &[bool], out: &mut [f64]) {
        if self.alpha == 0.0 {
            return self.target.predict(flows, out);
        }
        if self.alpha == 1.0 {
            return self.source.predict(flows, out);
        }
        let mut src = vec![0.0; out.len()];
        self.target.predict(flows, out);
        self.source.predict(flows, &mut src);
        for (o, s) in out.iter_mut().zip(&src) {
            *o = (1.0 - self.alpha) * *o + self.alpha * s;
        }
    }
}

/// The simulator itself, started from the true state with perfect forecasts.
pub struct ExactModel {
    house: HouseConfig,
    state: ZoneState,
    forecast: Vec<Disturbances>,
    flow_max: f64,
    inlet_temp: f64,
    dt_h: f64,
}

impl ExactModel {
    pub fn new(
        house: HouseConfig,
        state: ZoneState,
        forecast: &[Disturbances],
        params: &MpcParams,
    ) -> Result<Self> {
        if forecast.len() < params.horizon_steps {
            return Err(Error::HorizonTooLong {
                horizon: params.horizon_steps,
                available: forecast.len(),
            });
        }
        Ok(ExactModel {
            house,
            state,
            forecast: forecast[..params.horizon_steps].to_vec(),
            flow_max: params.flow_max,
            inlet_temp: params.inlet_temp,
            dt_h: params.sampling_period_h,
        })
    }
}

impl HorizonPredictor for ExactModel {
    fn current_temp(&self) -> f64 {
        self.state.zone_temp
    }

    fn predict(&self, flows: &[bool], out: &mut [f64]) {
        let mut s = self.state;
        for (i, &on) in flows.iter().enumerate() {
            let action = ControlAction {
                water_flow: if on { self.flow_max } else { 0.0 },
                inlet_temp: self.inlet_temp,
            };
            match step_zone(&self.house, &s, &action, &self.forecast[i], self.dt_h) {
                Ok(o) => {
                    s = o.state;
                    out[i] = s.zone_temp;
                }
                Err(_) => {
                    out[i..].iter_mut().for_each(|v| *v = f64::NAN);
                    return;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPlan {
    pub flows: Vec<bool>,
    /// Predicted temperatures for steps `1..=N`.
    pub predicted_temps: Vec<f64>,
    pub cost: CostBreakdown,
}

impl HorizonPlan {
    pub fn flow_sequence(&self, params: &MpcParams) -> Vec<f64> {
        self.flows.iter().map(|&b| params.flow(b)).collect()
    }
}

/// Bit `s` of candidate `index` is the action at step `s`; the first step is
/// the most significant bit, so index order is lexicographic order.
pub fn candidate_flows(index: usize, horizon: usize, out: &mut [bool]) {
    for (s, o) in out.iter_mut().enumerate().take(horizon) {
        *o = (index >> (horizon - 1 - s)) & 1 == 1;
    }
}

fn evaluate<H: HorizonPredictor + ?Sized>(
    model: &H,
    flows: &[bool],
    presence: &[bool],
    params: &MpcParams,
) -> (Vec<f64>, CostBreakdown) {
    let n = flows.len();
    let mut temps = vec![0.0; n + 1];
    temps[0] = model.current_temp();
    model.predict(flows, &mut temps[1..]);
    let flow_vals: Vec<f64> = flows.iter().map(|&b| params.flow(b)).collect();
    let outlets: Vec<f64> = temps[..n]
        .iter()
        .map(|&t| params.predicted_outlet(t))
        .collect();
    let cost = segment_cost(
        &temps,
        &flow_vals,
        &outlets,
        &presence[..=n],
        params,
        n,
        0,
        n,
    );
    (temps, cost)
}

fn finite_total(c: &CostBreakdown) -> f64 {
    if c.total.is_finite() {
        c.total
    } else {
        f64::INFINITY
    }
}

/// Exhaustive minimisation over all `2^N` on/off sequences; ties go to the
/// lexicographically smaller sequence. `presence` covers `t = 0..=N`.
pub fn optimize_horizon<H: HorizonPredictor + ?Sized>(
    model: &H,
    presence: &[bool],
    params: &MpcParams,
    exec: Execution,
) -> Result<HorizonPlan> {
    params.validate()?;
    let n = params.horizon_steps;
    if presence.len() < n + 1 {
        return Err(Error::HorizonTooLong {
            horizon: n + 1,
            available: presence.len(),
        });
    }
    if !model.current_temp().is_finite() {
        return Err(Error::NonFinite("current zone temperature"));
    }
    let (best, _) = par::argmin_range(exec, 1usize << n, |i| {
        let mut flows = [false; MAX_HORIZON];
        candidate_flows(i, n, &mut flows);
        finite_total(&evaluate(model, &flows[..n], presence, params).1)
    })
    .expect("at least one candidate");
    let mut flows = vec![false; n];
    candidate_flows(best, n, &mut flows);
    let (temps, cost) = evaluate(model, &flows, presence, params);
    if !cost.total.is_finite() {
        return Err(Error::NonFinite(
            "every candidate plan has a non-finite cost",
        ));
    }
    Ok(HorizonPlan {
        flows,
        predicted_temps: temps[1..].to_vec(),
        cost,
    })
}

/// How the controller predicts.
#[derive(Clone, Copy)]
pub enum Assembly<'a> {
    /// Thermostat baseline, no prediction.
    Hysteresis,
    /// The simulator with the true state.
    Exact,
    Source(&'a dyn Predictor),
    /// Online RLS on the controlled house only.
    Target,
    /// GOTL weight between the online RLS and the source.
    Gotl(&'a dyn Predictor),
    /// Fixed weight 0.5 between the online RLS and the source.
    Ensemble(&'a dyn Predictor),
}

impl Assembly<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Assembly::Hysteresis => "hysteresis",
            Assembly::Exact => "exact",
            Assembly::Source(_) => "source",
            Assembly::Target => "target",
            Assembly::Gotl(_) => "gotl",
            Assembly::Ensemble(_) => "ensemble",
        }
    }

    fn source(&self) -> Option<&dyn Predictor> {
        match *self {
            Assembly::Source(s) | Assembly::Gotl(s) | Assembly::Ensemble(s) => Some(s),
            _ => None,
        }
    }
}

/// Learning parameters of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineSetup {
    pub lags: usize,
    pub rls: RlsSettings,
    pub gotl: GotlSettings,
    pub horizon: HorizonSpec,
    /// Thermostat steps before MPC takes over; at least `lags` are used.
    pub commissioning_steps: usize,
}

impl Default for OnlineSetup {
    fn default() -> Self {
        OnlineSetup {
            lags: 3,
            rls: RlsSettings::default(),
            gotl: GotlSettings::default(),
            horizon: HorizonSpec::standard(),
            commissioning_steps: sim::STEPS_PER_DAY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub t: usize,
    pub flow: f64,
    pub zone_temp: f64,
    /// Sum of occupied squared setpoint deviations times T_s, through step `t`.
    pub comfort_cum: f64,
    pub heating_cum_kwh: f64,
    pub pump_cum_kwh: f64,
    pub alpha: f64,
}

/// Planned and realised cost of the steps applied from one plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub steps: usize,
    pub planned: CostBreakdown,
    pub realized: CostBreakdown,
}

#[derive(Debug, Clone)]
pub struct MpcRun {
    pub dataset: Dataset,
    pub ledger: Vec<LedgerRow>,
    pub segments: Vec<Segment>,
    /// Weight after each completed evaluation interval.
    pub alphas: Vec<f64>,
    pub comfort: f64,
    pub heating_kwh: f64,
    pub pump_kwh: f64,
}

impl MpcRun {
    pub fn write_ledger<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t",
            "flow",
            "zone_temp",
            "comfort_cum",
            "heating_cum_kwh",
            "pump_cum_kwh",
            "alpha",
        ])?;
        for r in &self.ledger {
            w.write_record(&[
                r.t.to_string(),
                r.flow.to_string(),
                r.zone_temp.to_string(),
                r.comfort_cum.to_string(),
                r.heating_cum_kwh.to_string(),
                r.pump_cum_kwh.to_string(),
                r.alpha.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct PendingSegment {
    start: usize,
    steps: usize,
    planned: CostBreakdown,
}

/// Closed-loop simulation of `scenario` for `scenario.days` days under MPC.
///
/// The thermostat runs for the commissioning steps (at least `lags`, so that
/// a feature window exists) and MPC for the following `scenario.days` days.
/// The online RLS is updated every step, the GOTL weight after every
/// evaluation interval of `setup.horizon.horizon_steps` steps, using the RLS
/// snapshot from the start of that interval; intervals start when MPC takes
/// over. Plans are recomputed every `params.reopt_steps` steps.
pub fn receding_horizon_run(
    scenario: &ScenarioConfig,
    assembly: Assembly<'_>,
    params: &MpcParams,
    setup: &OnlineSetup,
    exec: Execution,
) -> Result<MpcRun> {
    params.validate()?;
    scenario.validate()?;
    let lags = setup.lags;
    let m = setup.horizon.horizon_steps;
    let house = scenario.house;
    let controlled = scenario.days * sim::STEPS_PER_DAY;
    let prefix = setup.commissioning_steps.max(lags);
    let total_steps = prefix + controlled;
    // Disturbances cover the run plus one horizon of lookahead.
    let extended = ScenarioConfig {
        days: scenario.days + prefix / sim::STEPS_PER_DAY + 2,
        ..scenario.clone()
    };
    let mut dist = extended.disturbances()?;
    dist.truncate(total_steps + params.horizon_steps.max(m) + 1);
    if dist.len() < total_steps + params.horizon_steps + 1 {
        return Err(Error::HorizonTooLong {
            horizon: params.horizon_steps,
            available: dist.len() - total_steps,
        });
    }

    let mut data = Dataset::empty("mpc", N_INPUTS);
    let dim = data.layout(lags).dim();
    let mut rls: RlsState = setup.rls.state(dim)?;
    let mut gotl = OnlineGotl::new(&setup.gotl)?;
    let fixed_alpha = match assembly {
        Assembly::Source(_) => 1.0,
        Assembly::Target => 0.0,
        Assembly::Ensemble(_) => 0.5,
        _ => f64::NAN,
    };
    let mut thermostat = ControlAction::off();
    let mut state = scenario.initial_state();
    let mut plan: Option<(usize, HorizonPlan)> = None;
    let mut pending: Option<PendingSegment> = None;
    let mut interval: Option<(usize, RlsState)> = None;
    let mut segments = Vec::new();
    let mut alphas = Vec::new();
    let mut ledger = Vec::with_capacity(total_steps);
    let mut realized_temps = Vec::with_capacity(total_steps + 1);
    let mut realized_outlets = Vec::with_capacity(total_steps);
    let mut realized_flows = Vec::with_capacity(total_steps);
    let (mut comfort, mut heating, mut pump) = (0.0, 0.0, 0.0);
    let uses_target = matches!(
        assembly,
        Assembly::Target | Assembly::Gotl(_) | Assembly::Ensemble(_)
    );

    for t in 0..=total_steps {
        let y = state.zone_temp;
        realized_temps.push(y);
        if t >= lags {
            let x = build_feature_vector(&data, t, lags)?;
            rls.update(&x, y)?;
        }
        // Close the evaluation interval that ends now.
        if let Some((t_k, snapshot)) = interval.take() {
            if t == t_k + m {
                if let Some(source) = assembly.source() {
                    let target_model = snapshot.snapshot_with(data.layout(lags))?;
                    let rollouts =
                        interval_rollouts_at(&target_model, source, &data, t_k, y, lags, m)?;
                    gotl.observe(&rollouts)?;
                }
                alphas.push(current_alpha(&assembly, &gotl, fixed_alpha));
            } else {
                interval = Some((t_k, snapshot));
            }
        }
        if t >= prefix && interval.is_none() && t + m <= total_steps {
            interval = Some((t, rls.clone()));
        }
        // Settle the segment that ends now.
        if let Some(seg) = pending.take() {
            if t == seg.start + seg.steps {
                let realized = realized_segment(
                    &realized_temps,
                    &realized_flows,
                    &realized_outlets,
                    &dist,
                    seg.start,
                    seg.steps,
                    params,
                );
                segments.push(Segment {
                    start: seg.start,
                    steps: seg.steps,
                    planned: seg.planned,
                    realized,
                });
            } else {
                pending = Some(seg);
            }
        }
        if t == total_steps {
            break;
        }

        let alpha = current_alpha(&assembly, &gotl, fixed_alpha);
        let action = if t < prefix || matches!(assembly, Assembly::Hysteresis) {
            thermostat = hysteresis_control(y, params.setpoint, scenario.band, thermostat);
            thermostat
        } else {
            let replan = match &plan {
                None => true,
                Some((start, _)) => t - start >= params.reopt_steps,
            };
            if replan {
                let presence: Vec<bool> = dist[t..=t + params.horizon_steps]
                    .iter()
                    .map(|d| d.presence_flag)
                    .collect();
                let forecast = &dist[t..t + params.horizon_steps];
                let target_model = if uses_target {
                    Some(rls.snapshot_with(data.layout(lags))?)
                } else {
                    None
                };
                let new_plan = match assembly {
                    Assembly::Exact => {
                        let model = ExactModel::new(house, state, forecast, params)?;
                        optimize_horizon(&model, &presence, params, exec)?
                    }
                    Assembly::Source(s) => {
                        let model = RolloutModel::new(s, &data, y, forecast, lags, params)?;
                        optimize_horizon(&model, &presence, params, exec)?
                    }
                    Assembly::Target => {
                        let tm = target_model.as_ref().expect("target model built");
                        let model = RolloutModel::new(tm, &data, y, forecast, lags, params)?;
                        optimize_horizon(&model, &presence, params, exec)?
                    }
                    Assembly::Gotl(s) | Assembly::Ensemble(s) => {
                        let tm = target_model.as_ref().expect("target model built");
                        let model = Blend {
                            target: RolloutModel::new(tm, &data, y, forecast, lags, params)?,
                            source: RolloutModel::new(s, &data, y, forecast, lags, params)?,
                            alpha,
                        };
                        optimize_horizon(&model, &presence, params, exec)?
                    }
                    Assembly::Hysteresis => unreachable!("handled above"),
                };
                let steps = params.reopt_steps.min(total_steps - t);
                let (temps, flows, outlets) = plan_arrays(y, &new_plan, params);
                let planned = segment_cost(
                    &temps,
                    &flows,
                    &outlets,
                    &presence,
                    params,
                    params.horizon_steps,
                    0,
                    steps,
                );
                pending = Some(PendingSegment {
                    start: t,
                    steps,
                    planned,
                });
                plan = Some((t, new_plan));
            }
            let (start, p) = plan.as_ref().expect("plan exists");
            ControlAction {
                water_flow: params.flow(p.flows[t - start]),
                inlet_temp: params.inlet_temp,
            }
        };

        let d = dist[t];
        let out = step_zone(&house, &state, &action, &d, params.sampling_period_h)?;
        data.push(SampleRecord {
            time_index: t,
            output: y,
            inputs: input_vector(&action, &d),
        })?;
        realized_flows.push(action.water_flow);
        realized_outlets.push(out.outlet_temp);
        if d.presence_flag {
            comfort += (y - params.setpoint).powi(2) * params.sampling_period_h;
        }
        heating += params.heating_step(action.is_on(), out.outlet_temp);
        pump += params.pump_step(action.water_flow);
        ledger.push(LedgerRow {
            t,
            flow: action.water_flow,
            zone_temp: y,
            comfort_cum: comfort,
            heating_cum_kwh: heating,
            pump_cum_kwh: pump,
            alpha,
        });
        state = out.state;
    }
    Ok(MpcRun {
        dataset: data,
        ledger,
        segments,
        alphas,
        comfort,
        heating_kwh: heating,
        pump_kwh: pump,
    })
}

fn current_alpha(assembly: &Assembly<'_>, gotl: &OnlineGotl, fixed: f64) -> f64 {
    match assembly {
        Assembly::Gotl(_) => gotl.alpha(),
        _ => fixed,
    }
}

fn plan_arrays(
    current: f64,
    plan: &HorizonPlan,
    params: &MpcParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut temps = Vec::with_capacity(plan.predicted_temps.len() + 1);
    temps.push(current);
    temps.extend_from_slice(&plan.predicted_temps);
    let flows = plan.flow_sequence(params);
    let outlets = temps[..flows.len()]
        .iter()
        .map(|&t| params.predicted_outlet(t))
        .collect();
    (temps, flows, outlets)
}

fn realized_segment(
    temps: &[f64],
    flows: &[f64],
    outlets: &[f64],
    dist: &[Disturbances],
    start: usize,
    steps: usize,
    params: &MpcParams,
) -> CostBreakdown {
    let presence: Vec<bool> = dist[start..=start + steps]
        .iter()
        .map(|d| d.presence_flag)
        .collect();
    segment_cost(
        &temps[start..=start + steps],
        &flows[start..start + steps],
        &outlets[start..start + steps],
        &presence,
        params,
        params.horizon_steps,
        0,
        steps,
    )
}

/// Rollouts over `t_k+1 ..= t_k+m` where the record at `t_k + m` is not yet
/// logged; `current` is the measured `y(t_k + m)`.
fn interval_rollouts_at(
    target: &dyn Predictor,
    source: &dyn Predictor,
    data: &Dataset,
    t_k: usize,
    current: f64,
    lags: usize,
    m: usize,
) -> Result<IntervalRollouts> {
    let window = RolloutWindow::from_dataset(data, t_k, lags)?;
    let recs = data.records();
    let flat: Vec<f64> = recs[t_k..t_k + m]
        .iter()
        .flat_map(|r| r.inputs.iter().copied())
        .collect();
    let mut tgt = vec![0.0; m];
    let mut src = vec![0.0; m];
    window.rollout_into(target, &flat, &mut tgt);
    window.rollout_into(source, &flat, &mut src);
    let mut actual: Vec<f64> = recs[t_k + 1..t_k + m].iter().map(|r| r.output).collect();
    actual.push(current);
    Ok(IntervalRollouts {
        target: tgt,
        source: src,
        actual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub kappa: f64,
    pub comfort: f64,
    pub heating_kwh: f64,
    pub pump_kwh: f64,
}

/// One closed-loop run per `kappa`, each from a fresh learner; sorted by
/// comfort cost.
pub fn comfort_heating_curve(
    scenario: &ScenarioConfig,
    assembly: Assembly<'_>,
    kappas: &[f64],
    params: &MpcParams,
    setup: &OnlineSetup,
    exec: Execution,
) -> Result<Vec<CurvePoint>> {
    if kappas.len() < 2 {
        return Err(Error::InvalidParameter(
            "a curve needs at least two kappa values".into(),
        ));
    }
    let runs = par::map_slice(exec, kappas, |&kappa| {
        let p = MpcParams { kappa, ..*params };
        receding_horizon_run(scenario, assembly, &p, setup, exec).map(|r| CurvePoint {
            kappa,
            comfort: r.comfort,
            heating_kwh: r.heating_kwh,
            pump_kwh: r.pump_kwh,
        })
    });
    let mut points = runs.into_iter().collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.comfort
            .total_cmp(&b.comfort)
            .then(a.heating_kwh.total_cmp(&b.heating_kwh))
    });
    Ok(points)
}

/// Drop dominated points: keep a point only if its heating cost is strictly
/// below that of every point with lower or equal comfort cost.
pub fn pareto_filter(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.comfort
            .total_cmp(&b.comfort)
            .then(a.heating_kwh.total_cmp(&b.heating_kwh))
    });
    let mut out: Vec<CurvePoint> = Vec::new();
    for p in sorted {
        if out
            .last()
            .is_none_or(|last| p.heating_kwh < last.heating_kwh)
        {
            out.push(p);
        }
    }
    out
}
