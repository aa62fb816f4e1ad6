//! Single-zone 2R2C thermal simulator with a radiant heating loop.
//!
//! Zone node (air and furniture) and wall node exchange heat through `H_zw`;
//! the zone loses heat to outdoors through windows and infiltration (`H_zo`),
//! the wall through the envelope (`H_wo`). The radiator, solar, occupant and
//! an unmeasured gain all enter the zone node. States advance by forward Euler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::KeyValues;
use crate::data::{Dataset, SampleRecord, N_INPUTS};
use crate::error::{Error, Result};

/// Specific heat of water, kJ/(kg K).
pub const WATER_HEAT_CAPACITY: f64 = 4.186;
/// Maximum water flow through the radiant loop, kg/s.
pub const FLOW_MAX: f64 = 0.0787;
/// Supply water temperature, degrees C.
pub const INLET_TEMP: f64 = 45.0;
/// Sampling period, hours.
pub const SAMPLING_PERIOD_H: f64 = 0.5;
pub const STEPS_PER_DAY: usize = 48;
pub const SANITY_BAND: (f64, f64) = (-30.0, 60.0);
pub const DEFAULT_SETPOINT: f64 = 21.0;
pub const DEFAULT_BAND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HouseConfig {
    /// Total heat capacity, kWh/K.
    pub thermal_capacitance: f64,
    /// Share of the capacitance in the zone node.
    pub zone_fraction: f64,
    /// Total conductance to outdoors, kW/K.
    pub envelope_conductance: f64,
    /// Share of the envelope conductance acting directly on the zone node.
    pub window_fraction: f64,
    /// Zone to wall conductance, kW/K.
    pub coupling_conductance: f64,
    /// Wall to ground conductance, kW/K.
    pub ground_conductance: f64,
    pub radiant_effectiveness: f64,
    /// Fraction of the site solar gain reaching the zone.
    pub solar_aperture: f64,
    /// kW per occupant.
    pub internal_gain_per_person: f64,
    /// Scales capacitances and conductances together.
    pub size_factor: f64,
}

impl Default for HouseConfig {
    fn default() -> Self {
        HouseConfig {
            thermal_capacitance: 12.0,
            zone_fraction: 0.25,
            envelope_conductance: 0.09,
            window_fraction: 0.22,
            coupling_conductance: 0.5,
            ground_conductance: 0.04,
            radiant_effectiveness: 0.9,
            solar_aperture: 1.0,
            internal_gain_per_person: 0.1,
            size_factor: 1.0,
        }
    }
}

impl HouseConfig {
    pub fn with_size(size_factor: f64) -> Self {
        HouseConfig {
            size_factor,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thermal_capacitance", self.thermal_capacitance),
            ("envelope_conductance", self.envelope_conductance),
            ("coupling_conductance", self.coupling_conductance),
            ("ground_conductance", self.ground_conductance),
            ("radiant_effectiveness", self.radiant_effectiveness),
            ("solar_aperture", self.solar_aperture),
            ("internal_gain_per_person", self.internal_gain_per_person),
            ("size_factor", self.size_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("zone_fraction", self.zone_fraction),
            ("window_fraction", self.window_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.radiant_effectiveness > 1.0 {
            return Err(Error::Config(
                "radiant_effectiveness must not exceed 1".into(),
            ));
        }
        Ok(())
    }

    pub fn zone_capacitance(&self) -> f64 {
        self.size_factor * self.thermal_capacitance * self.zone_fraction
    }

    pub fn wall_capacitance(&self) -> f64 {
        self.size_factor * self.thermal_capacitance * (1.0 - self.zone_fraction)
    }

    pub fn zone_outdoor_conductance(&self) -> f64 {
        self.size_factor * self.envelope_conductance * self.window_fraction
    }

    pub fn wall_outdoor_conductance(&self) -> f64 {
        self.size_factor * self.envelope_conductance * (1.0 - self.window_fraction)
    }

    pub fn zone_wall_conductance(&self) -> f64 {
        self.size_factor * self.coupling_conductance
    }

    pub fn wall_ground_conductance(&self) -> f64 {
        self.size_factor * self.ground_conductance
    }

    /// Outlet temperature for a given zone temperature when the loop runs.
    pub fn outlet_temp(&self, inlet: f64, zone_temp: f64) -> f64 {
        inlet - self.radiant_effectiveness * (inlet - zone_temp)
    }

    pub fn from_key_values(kv: &KeyValues, prefix: &str) -> Result<Self> {
        HouseConfig::default().overlay(kv, prefix)
    }

    /// Copy of `self` with every `prefix`-qualified key present in `kv` applied.
    pub fn overlay(&self, kv: &KeyValues, prefix: &str) -> Result<Self> {
        let d = self;
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = HouseConfig {
            thermal_capacitance: kv.get_or(&k("thermal_capacitance"), d.thermal_capacitance)?,
            zone_fraction: kv.get_or(&k("zone_fraction"), d.zone_fraction)?,
            envelope_conductance: kv.get_or(&k("envelope_conductance"), d.envelope_conductance)?,
            window_fraction: kv.get_or(&k("window_fraction"), d.window_fraction)?,
            coupling_conductance: kv.get_or(&k("coupling_conductance"), d.coupling_conductance)?,
            ground_conductance: kv.get_or(&k("ground_conductance"), d.ground_conductance)?,
            radiant_effectiveness: kv
                .get_or(&k("radiant_effectiveness"), d.radiant_effectiveness)?,
            solar_aperture: kv.get_or(&k("solar_aperture"), d.solar_aperture)?,
            internal_gain_per_person: kv
                .get_or(&k("internal_gain_per_person"), d.internal_gain_per_person)?,
            size_factor: kv.get_or(&k("size_factor"), d.size_factor)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub const KEYS: [&'static str; 10] = [
        "thermal_capacitance",
        "zone_fraction",
        "envelope_conductance",
        "window_fraction",
        "coupling_conductance",
        "ground_conductance",
        "radiant_effectiveness",
        "solar_aperture",
        "internal_gain_per_person",
        "size_factor",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneState {
    pub zone_temp: f64,
    pub wall_temp: f64,
    pub time_index: usize,
}

impl ZoneState {
    pub fn new(zone_temp: f64, wall_temp: f64) -> Self {
        ZoneState {
            zone_temp,
            wall_temp,
            time_index: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbances {
    pub outdoor_temp: f64,
    /// Site solar gain before the house aperture, kW.
    pub solar_gain: f64,
    pub occupancy: u32,
    pub presence_flag: bool,
    /// Ground temperature under the slab; a site constant that is not logged.
    pub ground_temp: f64,
    /// Heat gain not recorded in the dataset (appliances, neighbours), kW.
    pub unmeasured_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlAction {
    pub water_flow: f64,
    pub inlet_temp: f64,
}

impl ControlAction {
    pub fn off() -> Self {
        ControlAction {
            water_flow: 0.0,
            inlet_temp: INLET_TEMP,
        }
    }

    pub fn on() -> Self {
        ControlAction {
            water_flow: FLOW_MAX,
            inlet_temp: INLET_TEMP,
        }
    }

    pub fn from_bit(on: bool) -> Self {
        if on {
            Self::on()
        } else {
            Self::off()
        }
    }

    pub fn is_on(&self) -> bool {
        self.water_flow > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: ZoneState,
    pub outlet_temp: f64,
    /// Radiator heat over the step, kWh.
    pub heat_delivered: f64,
}

/// Advance one forward-Euler step of length `dt_h` hours.
pub fn step_zone(
    config: &HouseConfig,
    state: &ZoneState,
    action: &ControlAction,
    dist: &Disturbances,
    dt_h: f64,
) -> Result<StepOutcome> {
    if !(dt_h > 0.0) {
        return Err(Error::InvalidParameter("dt_h must be positive".into()));
    }
    let (tz, tw, to) = (state.zone_temp, state.wall_temp, dist.outdoor_temp);
    let (q, outlet) = if action.water_flow > 0.0 {
        let q = config.radiant_effectiveness
            * WATER_HEAT_CAPACITY
            * action.water_flow
            * (action.inlet_temp - tz);
        (
            q,
            action.inlet_temp - q / (WATER_HEAT_CAPACITY * action.water_flow),
        )
    } else {
        (0.0, action.inlet_temp)
    };
    let gains = config.solar_aperture * dist.solar_gain
        + config.internal_gain_per_person * dist.occupancy as f64
        + dist.unmeasured_gain;
    let dz = config.zone_wall_conductance() * (tw - tz)
        + config.zone_outdoor_conductance() * (to - tz)
        + q
        + gains;
    let dw = config.zone_wall_conductance() * (tz - tw)
        + config.wall_outdoor_conductance() * (to - tw)
        + config.wall_ground_conductance() * (dist.ground_temp - tw);
    let next = ZoneState {
        zone_temp: tz + dt_h * dz / config.zone_capacitance(),
        wall_temp: tw + dt_h * dw / config.wall_capacitance(),
        time_index: state.time_index + 1,
    };
    let in_band = |v: f64| v.is_finite() && v >= SANITY_BAND.0 && v <= SANITY_BAND.1;
    if !in_band(next.zone_temp) || !in_band(next.wall_temp) {
        return Err(Error::Diverged {
            step: state.time_index,
            zone_temp: next.zone_temp,
            wall_temp: next.wall_temp,
        });
    }
    Ok(StepOutcome {
        state: next,
        outlet_temp: outlet,
        heat_delivered: q * dt_h,
    })
}

/// Parameters of a synthetic weather site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherPreset {
    pub mean_temp: f64,
    pub seasonal_amplitude: f64,
    pub daily_amplitude: f64,
    pub noise_std: f64,
    pub noise_persistence: f64,
    pub solar_peak: f64,
    pub ground_temp: f64,
}

impl WeatherPreset {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "mild-site" => Ok(WeatherPreset {
                mean_temp: 5.0,
                seasonal_amplitude: 3.0,
                daily_amplitude: 4.0,
                noise_std: 0.35,
                noise_persistence: 0.95,
                solar_peak: 1.2,
                ground_temp: 12.0,
            }),
            "cold-site" => Ok(WeatherPreset {
                mean_temp: 0.0,
                seasonal_amplitude: 2.0,
                daily_amplitude: 3.5,
                noise_std: 0.45,
                noise_persistence: 0.96,
                solar_peak: 0.9,
                ground_temp: 3.0,
            }),
            other => Err(Error::Config(format!(
                "unknown weather preset `{other}` (expected mild-site or cold-site)"
            ))),
        }
    }
}

pub const WEATHER_PRESETS: [&str; 2] = ["mild-site", "cold-site"];
pub const OCCUPANCY_PATTERNS: [&str; 3] = ["family", "couple", "home-office"];

fn hour_of(step: usize) -> f64 {
    (step % STEPS_PER_DAY) as f64 * SAMPLING_PERIOD_H
}

/// Outdoor temperature and solar gain for `days` days; occupancy is zero.
pub fn generate_weather(profile: &str, days: usize, seed: u64) -> Result<Vec<Disturbances>> {
    if days == 0 {
        return Err(Error::InvalidParameter("days must be at least 1".into()));
    }
    let p = WeatherPreset::by_name(profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5745_4154_4845_5221);
    let noise = Normal::new(0.0, p.noise_std).expect("positive std");
    let n = days * STEPS_PER_DAY;
    let mut ar = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut cloud = 1.0;
    for step in 0..n {
        if step % STEPS_PER_DAY == 0 {
            cloud = rng.random_range(0.25..1.0);
        }
        ar = p.noise_persistence * ar + noise.sample(&mut rng);
        let day = step as f64 / STEPS_PER_DAY as f64;
        let hour = hour_of(step);
        let seasonal = p.seasonal_amplitude * (2.0 * std::f64::consts::PI * day / 365.0).sin();
        let daily = p.daily_amplitude * (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin();
        let solar = if (7.0..17.0).contains(&hour) {
            p.solar_peak * cloud * (std::f64::consts::PI * (hour - 7.0) / 10.0).sin().max(0.0)
        } else {
            0.0
        };
        out.push(Disturbances {
            outdoor_temp: p.mean_temp + seasonal + daily + ar,
            solar_gain: solar,
            ground_temp: p.ground_temp,
            ..Default::default()
        });
    }
    Ok(out)
}

/// Hourly occupant counts `(workday, weekend)` for a pattern tag.
fn occupancy_template(pattern: &str) -> Result<([u32; 24], [u32; 24])> {
    let t = match pattern {
        "family" => (
            [
                4, 4, 4, 4, 4, 4, 4, 4, 1, 1, 1, 1, 1, 1, 1, 3, 3, 3, 4, 4, 4, 4, 4, 4,
            ],
            [
                4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 2, 2, 2, 2, 4, 4, 4, 4, 4, 4, 4,
            ],
        ),
        "couple" => (
            [
                2, 2, 2, 2, 2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2, 2,
            ],
            [
                2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 0, 0, 0, 0, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2,
            ],
        ),
        "home-office" => (
            [
                2, 2, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2,
            ],
            [
                2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2, 2, 2, 2, 2,
            ],
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown occupancy pattern `{other}` (expected family, couple or home-office)"
            )))
        }
    };
    Ok(t)
}

/// Occupant count per step from a weekly template. Each day the schedule is
/// shifted by a seeded offset of -1, 0 or +1 steps. Day 0 is a Monday.
pub fn generate_occupancy(pattern: &str, days: usize, seed: u64) -> Result<Vec<u32>> {
    if days == 0 {
        return Err(Error::InvalidParameter("days must be at least 1".into()));
    }
    let (work, weekend) = occupancy_template(pattern)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4f43_4355_5041_4e54);
    let mut out = Vec::with_capacity(days * STEPS_PER_DAY);
    for day in 0..days {
        let shift: i64 = rng.random_range(-1..=1);
        let template = if day % 7 < 5 { &work } else { &weekend };
        for s in 0..STEPS_PER_DAY {
            let shifted = (s as i64 + shift).clamp(0, STEPS_PER_DAY as i64 - 1) as usize;
            out.push(template[shifted / 2]);
        }
    }
    Ok(out)
}

/// Overlay occupant counts onto a disturbance sequence.
pub fn apply_occupancy(dist: &mut [Disturbances], occupancy: &[u32]) -> Result<()> {
    if dist.len() != occupancy.len() {
        return Err(Error::DimensionMismatch {
            expected: dist.len(),
            got: occupancy.len(),
        });
    }
    for (d, &o) in dist.iter_mut().zip(occupancy) {
        d.occupancy = o;
        d.presence_flag = o > 0;
    }
    Ok(())
}

/// AR(1) unmeasured gain with stationary standard deviation `std_kw` and
/// per-step persistence `phi`.
pub fn apply_unmeasured_gain(
    dist: &mut [Disturbances],
    std_kw: f64,
    phi: f64,
    seed: u64,
) -> Result<()> {
    if !(std_kw >= 0.0) {
        return Err(Error::InvalidParameter(
            "gain noise std must be nonnegative".into(),
        ));
    }
    if !(0.0..1.0).contains(&phi) {
        return Err(Error::InvalidParameter(
            "gain persistence must lie in [0, 1)".into(),
        ));
    }
    if std_kw == 0.0 {
        dist.iter_mut().for_each(|d| d.unmeasured_gain = 0.0);
        return Ok(());
    }
    let innov = Normal::new(0.0, std_kw * (1.0 - phi * phi).sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4741_494e_4e4f_4953);
    let mut g = 0.0;
    for d in dist.iter_mut() {
        g = phi * g + innov.sample(&mut rng);
        d.unmeasured_gain = g;
    }
    Ok(())
}

/// On/off thermostat with a deadband; holds its previous action inside the band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hysteresis {
    pub setpoint: f64,
    pub band: f64,
    pub last: ControlAction,
}

impl Hysteresis {
    pub fn new(setpoint: f64, band: f64) -> Result<Self> {
        if !(band > 0.0) {
            return Err(Error::InvalidParameter(
                "hysteresis band must be positive".into(),
            ));
        }
        Ok(Hysteresis {
            setpoint,
            band,
            last: ControlAction::off(),
        })
    }

    pub fn control(&mut self, zone_temp: f64) -> ControlAction {
        self.last = hysteresis_control(zone_temp, self.setpoint, self.band, self.last);
        self.last
    }
}

pub fn hysteresis_control(
    zone_temp: f64,
    setpoint: f64,
    band: f64,
    previous: ControlAction,
) -> ControlAction {
    if zone_temp < setpoint - band {
        ControlAction::on()
    } else if zone_temp > setpoint + band {
        ControlAction::off()
    } else {
        previous
    }
}

/// Anything that picks the action for the coming step.
pub trait Controller {
    /// `history` holds the completed records before `state.time_index`;
    /// `forecast` starts at the coming step.
    fn decide(
        &mut self,
        state: &ZoneState,
        history: &Dataset,
        forecast: &[Disturbances],
    ) -> Result<ControlAction>;
}

impl Controller for Hysteresis {
    fn decide(
        &mut self,
        state: &ZoneState,
        _: &Dataset,
        _: &[Disturbances],
    ) -> Result<ControlAction> {
        Ok(self.control(state.zone_temp))
    }
}

/// Logged inputs for one step, in [`crate::data::INPUT_CHANNELS`] order.
pub fn input_vector(action: &ControlAction, dist: &Disturbances) -> Vec<f64> {
    let v = vec![
        action.water_flow,
        action.inlet_temp,
        dist.outdoor_temp,
        dist.solar_gain,
        dist.occupancy as f64,
    ];
    debug_assert_eq!(v.len(), N_INPUTS);
    v
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub dataset: Dataset,
    pub outlets: Vec<f64>,
    pub heat_kwh: Vec<f64>,
    pub wall_temps: Vec<f64>,
    pub final_state: ZoneState,
}

/// Simulate one step per disturbance entry at [`SAMPLING_PERIOD_H`].
pub fn run_scenario<C: Controller + ?Sized>(
    config: &HouseConfig,
    controller: &mut C,
    disturbances: &[Disturbances],
    initial: ZoneState,
    domain_id: &str,
) -> Result<ScenarioRun> {
    config.validate()?;
    let mut dataset = Dataset::empty(domain_id, N_INPUTS);
    let mut state = initial;
    let n = disturbances.len();
    let mut outlets = Vec::with_capacity(n);
    let mut heat = Vec::with_capacity(n);
    let mut walls = Vec::with_capacity(n);
    for (t, dist) in disturbances.iter().enumerate() {
        let action = controller.decide(&state, &dataset, &disturbances[t..])?;
        let out = step_zone(config, &state, &action, dist, SAMPLING_PERIOD_H)?;
        dataset.push(SampleRecord {
            time_index: state.time_index,
            output: state.zone_temp,
            inputs: input_vector(&action, dist),
        })?;
        walls.push(state.wall_temp);
        outlets.push(out.outlet_temp);
        heat.push(out.heat_delivered);
        state = out.state;
    }
    Ok(ScenarioRun {
        dataset,
        outlets,
        heat_kwh: heat,
        wall_temps: walls,
        final_state: state,
    })
}

/// A complete simulated house: physics, site, occupants, seed and length.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub house: HouseConfig,
    pub weather: String,
    pub occupancy: String,
    pub seed: u64,
    pub days: usize,
    pub setpoint: f64,
    pub band: f64,
    pub initial_temp: f64,
    pub gain_noise_std: f64,
    pub gain_noise_persistence: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            house: HouseConfig::default(),
            weather: "mild-site".into(),
            occupancy: "family".into(),
            seed: 1,
            days: 150,
            setpoint: DEFAULT_SETPOINT,
            band: DEFAULT_BAND,
            initial_temp: DEFAULT_SETPOINT,
            gain_noise_std: 0.2,
            gain_noise_persistence: 0.9,
        }
    }
}

impl ScenarioConfig {
    pub fn disturbances(&self) -> Result<Vec<Disturbances>> {
        let mut d = generate_weather(&self.weather, self.days, self.seed)?;
        let occ = generate_occupancy(&self.occupancy, self.days, self.seed.wrapping_add(1))?;
        apply_occupancy(&mut d, &occ)?;
        apply_unmeasured_gain(
            &mut d,
            self.gain_noise_std,
            self.gain_noise_persistence,
            self.seed.wrapping_add(2),
        )?;
        Ok(d)
    }

    pub fn initial_state(&self) -> ZoneState {
        ZoneState::new(self.initial_temp, self.initial_temp)
    }

    /// Run under the hysteresis baseline.
    pub fn simulate(&self, domain_id: &str) -> Result<ScenarioRun> {
        let dist = self.disturbances()?;
        let mut ctl = Hysteresis::new(self.setpoint, self.band)?;
        run_scenario(
            &self.house,
            &mut ctl,
            &dist,
            self.initial_state(),
            domain_id,
        )
    }

    pub const KEYS: [&'static str; 9] = [
        "weather",
        "occupancy",
        "seed",
        "days",
        "setpoint",
        "band",
        "initial_temp",
        "gain_noise_std",
        "gain_noise_persistence",
    ];

    /// Read `prefix`-qualified keys; missing keys keep their defaults.
    pub fn from_key_values(kv: &KeyValues, prefix: &str) -> Result<Self> {
        ScenarioConfig::default().overlay(kv, prefix)
    }

    /// Copy of `self` with every `prefix`-qualified key present in `kv` applied.
    pub fn overlay(&self, kv: &KeyValues, prefix: &str) -> Result<Self> {
        let d = self;
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = ScenarioConfig {
            house: d.house.overlay(kv, prefix)?,
            weather: kv.get_str(&k("weather")).unwrap_or(&d.weather).to_string(),
            occupancy: kv
                .get_str(&k("occupancy"))
                .unwrap_or(&d.occupancy)
                .to_string(),
            seed: kv.get_or(&k("seed"), d.seed)?,
            days: kv.get_or(&k("days"), d.days)?,
            setpoint: kv.get_or(&k("setpoint"), d.setpoint)?,
            band: kv.get_or(&k("band"), d.band)?,
            initial_temp: kv.get_or(&k("initial_temp"), d.initial_temp)?,
            gain_noise_std: kv.get_or(&k("gain_noise_std"), d.gain_noise_std)?,
            gain_noise_persistence: kv
                .get_or(&k("gain_noise_persistence"), d.gain_noise_persistence)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.house.validate()?;
        WeatherPreset::by_name(&self.weather)?;
        occupancy_template(&self.occupancy)?;
        if self.days == 0 {
            return Err(Error::Config("days must be at least 1".into()));
        }
        if !(self.band > 0.0) {
            return Err(Error::Config("band must be positive".into()));
        }
        if !(self.gain_noise_std >= 0.0) {
            return Err(Error::Config("gain_noise_std must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.gain_noise_persistence) {
            return Err(Error::Config(
                "gain_noise_persistence must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// All keys accepted by [`ScenarioConfig::from_key_values`] with an empty prefix.
    pub fn known_keys() -> Vec<&'static str> {
        Self::KEYS
            .iter()
            .chain(HouseConfig::KEYS.iter())
            .copied()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calm(outdoor: f64) -> Disturbances {
        Disturbances {
            outdoor_temp: outdoor,
            ground_temp: outdoor,
            ..Default::default()
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let cfg = HouseConfig::default();
        let s = ZoneState::new(10.0, 10.0);
        let out = step_zone(&cfg, &s, &ControlAction::off(), &calm(10.0), 0.5).unwrap();
        assert_eq!(out.state.zone_temp, 10.0);
        assert_eq!(out.state.wall_temp, 10.0);
        assert_eq!(out.heat_delivered, 0.0);
        assert_eq!(out.outlet_temp, INLET_TEMP);
    }

    #[test]
    fn cooling_towards_colder_outdoors() {
        let cfg = HouseConfig::default();
        let s = ZoneState::new(20.0, 20.0);
        let out = step_zone(&cfg, &s, &ControlAction::off(), &calm(0.0), 0.5).unwrap();
        assert!(out.state.zone_temp < 20.0);
    }

    #[test]
    fn radiator_outlet_and_heat_agree() {
        let cfg = HouseConfig::default();
        let s = ZoneState::new(20.0, 18.0);
        let out = step_zone(&cfg, &s, &ControlAction::on(), &calm(0.0), 0.5).unwrap();
        let water_side = WATER_HEAT_CAPACITY * FLOW_MAX * (INLET_TEMP - out.outlet_temp) * 0.5;
        assert!((out.heat_delivered - water_side).abs() < 1e-12);
        assert!((out.outlet_temp - cfg.outlet_temp(INLET_TEMP, 20.0)).abs() < 1e-12);
    }

    #[test]
    fn divergence_reported() {
        let cfg = HouseConfig::default();
        let s = ZoneState::new(59.9, 59.9);
        let d = Disturbances {
            outdoor_temp: 60.0,
            solar_gain: 500.0,
            ..Default::default()
        };
        assert!(matches!(
            step_zone(&cfg, &s, &ControlAction::off(), &d, 0.5),
            Err(Error::Diverged { .. })
        ));
        assert!(step_zone(&cfg, &s, &ControlAction::off(), &d, 0.0).is_err());
    }

    #[test]
    fn hysteresis_cases() {
        let prev = ControlAction::on();
        assert!(hysteresis_control(19.0, 21.0, 0.5, ControlAction::off()).is_on());
        assert!(!hysteresis_control(23.0, 21.0, 0.5, prev).is_on());
        assert!(hysteresis_control(21.0, 21.0, 0.5, prev).is_on());
        assert!(!hysteresis_control(21.0, 21.0, 0.5, ControlAction::off()).is_on());
        assert!(Hysteresis::new(21.0, 0.0).is_err());
    }

    #[test]
    fn weather_is_seeded_and_dark_at_night() {
        let a = generate_weather("mild-site", 10, 4).unwrap();
        let b = generate_weather("mild-site", 10, 4).unwrap();
        assert_eq!(a, b);
        for (i, d) in a.iter().enumerate() {
            let h = hour_of(i);
            assert!(d.solar_gain >= 0.0);
            if !(7.0..17.0).contains(&h) {
                assert_eq!(d.solar_gain, 0.0);
            }
        }
        assert!(generate_weather("moon", 1, 0).is_err());
        assert!(generate_weather("mild-site", 0, 0).is_err());
    }

    #[test]
    fn occupancy_tags() {
        let f = generate_occupancy("family", 14, 2).unwrap();
        assert_eq!(f.len(), 14 * STEPS_PER_DAY);
        assert!(generate_occupancy("commune", 1, 2).is_err());
    }

    #[test]
    fn scenario_length_and_energy() {
        let sc = ScenarioConfig {
            days: 3,
            ..Default::default()
        };
        let run = sc.simulate("s").unwrap();
        assert_eq!(run.dataset.len(), 3 * STEPS_PER_DAY);
        for (r, (&o, &q)) in run
            .dataset
            .records()
            .iter()
            .zip(run.outlets.iter().zip(&run.heat_kwh))
        {
            let flow = r.inputs[0];
            let water = WATER_HEAT_CAPACITY * flow * (INLET_TEMP - o) * SAMPLING_PERIOD_H;
            assert!((q - water).abs() <= 1e-9 * q.abs().max(1e-12));
        }
    }

    #[test]
    fn config_from_key_values() {
        let kv = KeyValues::parse("weather = cold-site\nsize_factor = 3\ndays = 5\n").unwrap();
        let sc = ScenarioConfig::from_key_values(&kv, "").unwrap();
        assert_eq!(sc.weather, "cold-site");
        assert_eq!(sc.house.size_factor, 3.0);
        let bad = KeyValues::parse("radiant_effectiveness = 1.5").unwrap();
        assert!(ScenarioConfig::from_key_values(&bad, "").is_err());
    }
}
