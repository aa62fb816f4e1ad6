//! Experiment presets, the four-predictor evaluation loop and its CSV
//! artifacts.
//!
//! Every experiment fits a source predictor offline, then streams the target
//! house interval by interval. At each evaluation instant the source, the
//! online target regressor, the GOTL combination and the fixed-weight
//! ensemble are rolled out over the same measured inputs and scored against
//! the same measured outputs.

use std::io::Write;
use std::path::Path;

use crate::config::KeyValues;
use crate::data::{rmse, rollout_predict, Dataset, HorizonSpec};
use crate::error::{Error, Result};
use crate::mpc::{comfort_heating_curve, Assembly, CurvePoint, MpcParams, OnlineSetup};
use crate::par::{self, Execution};
use crate::regress::{fit_batch_linear, LinearModel, RlsSettings};
use crate::sim::{HouseConfig, ScenarioConfig, STEPS_PER_DAY};
use crate::tca::{fit_multisource_predictor, select_components, Kernel, TcaConfig, COMPONENT_GRID};
use crate::weighting::{interval_rollouts, GotlSettings, OnlineGotl};

/// EWMA factor per evaluation interval.
pub const DEFAULT_SMOOTHING: f64 = 0.9;
/// Weight of the ensemble predictor.
pub const ENSEMBLE_ALPHA: f64 = 0.5;
/// Four weeks of 6 h intervals.
pub const DEFAULT_BURN_IN: usize = 4 * 7 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    /// Different site.
    Exp1,
    /// Different site, target three times larger.
    Exp2,
    /// As `Exp2` with a different presence pattern.
    Exp3,
    /// Two source houses bracketing the target size, combined by TCA.
    Exp4,
    /// Closed-loop comfort-heating curves on the `Exp3` houses.
    Mpc,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Exp1,
        ExperimentId::Exp2,
        ExperimentId::Exp3,
        ExperimentId::Exp4,
        ExperimentId::Mpc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
            ExperimentId::Mpc => "mpc",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{tag}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub sources: Vec<ScenarioConfig>,
    pub target: ScenarioConfig,
    pub lags: usize,
    pub ridge: f64,
    pub rls: RlsSettings,
    pub gotl: GotlSettings,
    pub horizon: HorizonSpec,
    pub tca: TcaConfig,
    pub component_grid: Vec<usize>,
    pub smoothing: f64,
    pub burn_in_intervals: usize,
    pub mpc: MpcParams,
    pub kappas: Vec<f64>,
    pub commissioning_steps: usize,
}

fn scenario(weather: &str, occupancy: &str, size: f64, seed: u64, days: usize) -> ScenarioConfig {
    ScenarioConfig {
        house: HouseConfig::with_size(size),
        weather: weather.into(),
        occupancy: occupancy.into(),
        seed,
        days,
        ..Default::default()
    }
}

const KEYS: [&str; 24] = [
    "experiment",
    "seed",
    "lags",
    "ridge",
    "forgetting",
    "p0",
    "delta",
    "discount",
    "initial_alpha",
    "warmup_intervals",
    "interval_forgetting",
    "horizon_steps",
    "kernel",
    "mu",
    "components",
    "standardize",
    "smoothing",
    "burn_in_intervals",
    "kappa",
    "commissioning_steps",
    "mpc_horizon_steps",
    "reopt_steps",
    "beta",
    "gamma",
];

impl ExperimentConfig {
    /// The built-in configuration of `id`.
    pub fn preset(id: ExperimentId) -> Self {
        let source = scenario("mild-site", "family", 1.0, 11, 150);
        let (sources, target) = match id {
            ExperimentId::Exp1 => (vec![source], scenario("cold-site", "family", 1.0, 21, 150)),
            ExperimentId::Exp2 => (vec![source], scenario("cold-site", "family", 3.0, 21, 150)),
            ExperimentId::Exp3 => (vec![source], scenario("cold-site", "couple", 3.0, 21, 150)),
            ExperimentId::Exp4 => (
                vec![source, scenario("mild-site", "couple", 3.0, 12, 150)],
                scenario("cold-site", "home-office", 2.0, 21, 150),
            ),
            ExperimentId::Mpc => (vec![source], scenario("cold-site", "couple", 3.0, 21, 60)),
        };
        let setup = OnlineSetup::default();
        ExperimentConfig {
            id,
            sources,
            target,
            lags: setup.lags,
            ridge: crate::regress::DEFAULT_RIDGE,
            rls: setup.rls,
            gotl: setup.gotl,
            horizon: setup.horizon,
            tca: TcaConfig::default(),
            component_grid: COMPONENT_GRID.to_vec(),
            smoothing: DEFAULT_SMOOTHING,
            burn_in_intervals: DEFAULT_BURN_IN,
            mpc: MpcParams {
                kappa: 0.0,
                ..MpcParams::default()
            },
            kappas: vec![0.0, 5.0, 20.0, 100.0, 500.0],
            commissioning_steps: setup.commissioning_steps,
        }
    }

    /// Prefixes of the source scenario keys: `source.` for a single source,
    /// `source1.` and `source2.` for two.
    fn source_prefixes(&self) -> Vec<String> {
        if self.sources.len() == 1 {
            vec!["source.".into()]
        } else {
            (1..=self.sources.len())
                .map(|i| format!("source{i}."))
                .collect()
        }
    }

    /// Preset named by the `experiment` key with all other keys applied.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let tag = kv
            .get_str("experiment")
            .ok_or_else(|| Error::Config("missing key `experiment`".into()))?;
        let mut cfg = Self::preset(ExperimentId::from_tag(tag)?);
        let mut known: Vec<String> = KEYS.iter().map(|s| s.to_string()).collect();
        let mut prefixes = cfg.source_prefixes();
        prefixes.push("target.".into());
        for p in &prefixes {
            known.extend(
                ScenarioConfig::known_keys()
                    .iter()
                    .map(|k| format!("{p}{k}")),
            );
        }
        let known_refs: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.reject_unknown(&known_refs)?;

        for (i, p) in cfg.source_prefixes().iter().enumerate() {
            cfg.sources[i] = cfg.sources[i].overlay(kv, p)?;
        }
        cfg.target = cfg.target.overlay(kv, "target.")?;
        cfg.lags = kv.get_or("lags", cfg.lags)?;
        cfg.ridge = kv.get_or("ridge", cfg.ridge)?;
        cfg.rls.forgetting = kv.get_or("forgetting", cfg.rls.forgetting)?;
        cfg.rls.p0 = kv.get_or("p0", cfg.rls.p0)?;
        cfg.gotl.delta = kv.get_or("delta", cfg.gotl.delta)?;
        cfg.gotl.discount = kv.get_or("discount", cfg.gotl.discount)?;
        cfg.gotl.initial_alpha = kv.get_or("initial_alpha", cfg.gotl.initial_alpha)?;
        cfg.gotl.warmup_intervals = kv.get_or("warmup_intervals", cfg.gotl.warmup_intervals)?;
        cfg.gotl.interval_forgetting =
            kv.get_or("interval_forgetting", cfg.gotl.interval_forgetting)?;
        let steps = kv.get_or("horizon_steps", cfg.horizon.horizon_steps)?;
        cfg.horizon = HorizonSpec::new(cfg.horizon.sampling_period_h, steps, cfg.gotl.discount)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(tag) = kv.get_str("kernel") {
            cfg.tca.kernel = Kernel::from_tag(tag).map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.tca.mu = kv.get_or("mu", cfg.tca.mu)?;
        cfg.tca.standardize = kv.get_or("standardize", cfg.tca.standardize)?;
        if let Some(grid) = kv.get_list("components")? {
            cfg.component_grid = grid;
        }
        cfg.smoothing = kv.get_or("smoothing", cfg.smoothing)?;
        cfg.burn_in_intervals = kv.get_or("burn_in_intervals", cfg.burn_in_intervals)?;
        if let Some(kappas) = kv.get_list("kappa")? {
            cfg.kappas = kappas;
        }
        cfg.commissioning_steps = kv.get_or("commissioning_steps", cfg.commissioning_steps)?;
        cfg.mpc.horizon_steps = kv.get_or("mpc_horizon_steps", cfg.mpc.horizon_steps)?;
        cfg.mpc.reopt_steps = kv.get_or("reopt_steps", cfg.mpc.reopt_steps)?;
        cfg.mpc.beta = kv.get_or("beta", cfg.mpc.beta)?;
        cfg.mpc.gamma = kv.get_or("gamma", cfg.mpc.gamma)?;
        if let Some(seed) = kv.get::<u64>("seed")? {
            cfg = cfg.with_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    /// Shift every scenario seed by `offset`.
    pub fn with_seed(mut self, offset: u64) -> Self {
        for s in self
            .sources
            .iter_mut()
            .chain(std::iter::once(&mut self.target))
        {
            s.seed = s.seed.wrapping_add(offset);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = if self.id == ExperimentId::Exp4 { 2 } else { 1 };
        if self.sources.len() != expected {
            return Err(Error::Config(format!(
                "{} needs exactly {expected} source house(s), got {}",
                self.id.tag(),
                self.sources.len()
            )));
        }
        for s in self.sources.iter().chain(std::iter::once(&self.target)) {
            s.validate()?;
        }
        if self.lags == 0 {
            return Err(Error::Config("lags must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        if self.component_grid.is_empty() || self.component_grid.contains(&0) {
            return Err(Error::Config(
                "components must be a list of positive counts".into(),
            ));
        }
        let check = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        check(self.rls.state(1).map(|_| ()))?;
        check(self.gotl.state().map(|_| ()))?;
        check(self.mpc.validate())?;
        if self.id == ExperimentId::Mpc && self.kappas.len() < 2 {
            return Err(Error::Config(
                "an mpc curve needs at least two kappa values".into(),
            ));
        }
        Ok(())
    }

    pub fn online_setup(&self) -> OnlineSetup {
        OnlineSetup {
            lags: self.lags,
            rls: self.rls,
            gotl: self.gotl,
            horizon: self.horizon,
            commissioning_steps: self.commissioning_steps,
        }
    }
}

/// `s_0 = x_0`, `s_k = smoothing * s_(k-1) + (1 - smoothing) * x_k`.
pub fn ewma(series: &[f64], smoothing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut s = 0.0;
    for (k, &x) in series.iter().enumerate() {
        s = if k == 0 {
            x
        } else {
            smoothing * s + (1.0 - smoothing) * x
        };
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    /// Time index of the evaluation instant.
    pub t_k: usize,
    /// Weight used during this interval.
    pub alpha: f64,
    pub rmse_source: f64,
    pub rmse_target: f64,
    pub rmse_gotl: f64,
    pub rmse_ensemble: f64,
    pub ewma_source: f64,
    pub ewma_target: f64,
    pub ewma_gotl: f64,
    pub ewma_ensemble: f64,
}

/// Per-interval RMSE of an additional predictor scored on the same rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberSeries {
    pub name: String,
    pub rmse: Vec<f64>,
    pub ewma: Vec<f64>,
}

/// Offline source predictor together with its single-house parts.
#[derive(Debug, Clone)]
pub struct SourceFit {
    pub model: LinearModel,
    /// One batch fit per source house when the source is combined.
    pub singles: Vec<LinearModel>,
    /// Selected TCA component count when the source is combined.
    pub components: Option<usize>,
}

/// Simulate the source houses and fit the source predictor.
pub fn fit_source(config: &ExperimentConfig, exec: Execution) -> Result<SourceFit> {
    let datasets = config
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| s.simulate(&format!("source{}", i + 1)).map(|r| r.dataset))
        .collect::<Result<Vec<_>>>()?;
    if datasets.len() == 1 {
        let model = fit_batch_linear(&datasets[0], config.lags, config.ridge)?;
        return Ok(SourceFit {
            model,
            singles: Vec::new(),
            components: None,
        });
    }
    let singles = datasets
        .iter()
        .map(|d| fit_batch_linear(d, config.lags, config.ridge))
        .collect::<Result<Vec<_>>>()?;
    let m = select_components(
        &datasets,
        &config.component_grid,
        &config.tca,
        config.lags,
        config.horizon.horizon_steps,
        config.ridge,
        exec,
    )?;
    let tca = TcaConfig {
        components: m,
        ..config.tca
    };
    let domains: Vec<Vec<Dataset>> = datasets.into_iter().map(|d| vec![d]).collect();
    let combined = fit_multisource_predictor(&domains, config.lags, &tca, config.ridge)?;
    let model = combined
        .to_linear_model()
        .ok_or_else(|| Error::InvalidParameter("combined source needs the linear kernel".into()))?;
    Ok(SourceFit {
        model,
        singles,
        components: Some(m),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub id: ExperimentId,
    pub rows: Vec<MetricsRow>,
    /// Single-house source predictors of a combined source, in source order.
    pub members: Vec<MemberSeries>,
    pub components: Option<usize>,
}

impl ExperimentOutcome {
    pub fn alphas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.alpha).collect()
    }

    pub fn write_metrics<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = [
            "k",
            "t_k",
            "alpha",
            "rmse_source",
            "rmse_target",
            "rmse_gotl",
            "rmse_ensemble",
            "ewma_source",
            "ewma_target",
            "ewma_gotl",
            "ewma_ensemble",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for m in &self.members {
            header.push(format!("rmse_{}", m.name));
            header.push(format!("ewma_{}", m.name));
        }
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.k.to_string(), r.t_k.to_string()];
            rec.extend(
                [
                    r.alpha,
                    r.rmse_source,
                    r.rmse_target,
                    r.rmse_gotl,
                    r.rmse_ensemble,
                    r.ewma_source,
                    r.ewma_target,
                    r.ewma_gotl,
                    r.ewma_ensemble,
                ]
                .iter()
                .map(f64::to_string),
            );
            for m in &self.members {
                rec.push(m.rmse[i].to_string());
                rec.push(m.ewma[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_alpha<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "t_k", "alpha"])?;
        for r in &self.rows {
            w.write_record(&[r.k.to_string(), r.t_k.to_string(), r.alpha.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `<tag>_metrics.csv` and `<tag>_alpha.csv` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let tag = self.id.tag();
        self.write_metrics(std::fs::File::create(
            dir.join(format!("{tag}_metrics.csv")),
        )?)?;
        self.write_alpha(std::fs::File::create(dir.join(format!("{tag}_alpha.csv")))?)?;
        Ok(())
    }
}

/// Offline source fit followed by the streamed four-predictor evaluation.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    config.validate()?;
    if config.id == ExperimentId::Mpc {
        return Err(Error::Config(
            "the mpc experiment runs through the comfort-heating curve".into(),
        ));
    }
    let source = fit_source(config, exec)?;
    let target = config.target.simulate("target")?.dataset;
    evaluate_stream(config, &source, &target)
}

/// Stream `target` interval by interval. The target regressor used for the
/// interval starting at `t_k` has seen every sample up to `t_k`.
pub fn evaluate_stream(
    config: &ExperimentConfig,
    source: &SourceFit,
    target: &Dataset,
) -> Result<ExperimentOutcome> {
    let lags = config.lags;
    let m = config.horizon.horizon_steps;
    let layout = target.layout(lags);
    let (xs, ys) = target.regression_pairs(lags)?;
    let first = target.first_time().unwrap_or(0);
    let mut rls = config.rls.state(layout.dim())?;
    let mut gotl = OnlineGotl::new(&config.gotl)?;
    let mut fed = 0;
    let mut raw: Vec<[f64; 4]> = Vec::new();
    let mut member_raw: Vec<Vec<f64>> = vec![Vec::new(); source.singles.len()];
    let mut starts = Vec::new();
    let mut alphas = Vec::new();
    let mut pos = lags;
    while pos + m < target.len() {
        // Pair i predicts the sample at position lags + i.
        while fed < xs.len() && lags + fed <= pos {
            rls.update(xs[fed].as_slice(), ys[fed])?;
            fed += 1;
        }
        let t_k = first + pos;
        let snapshot = rls.snapshot_with(layout)?;
        let r = interval_rollouts(&snapshot, &source.model, target, t_k, &config.horizon, lags)?;
        let alpha = gotl.alpha();
        raw.push([
            rmse(&r.source, &r.actual),
            rmse(&r.target, &r.actual),
            rmse(&r.combined(alpha), &r.actual),
            rmse(&r.combined(ENSEMBLE_ALPHA), &r.actual),
        ]);
        if !source.singles.is_empty() {
            let inputs = target.inputs_from(t_k, m)?;
            for (series, single) in member_raw.iter_mut().zip(&source.singles) {
                let p = rollout_predict(single, target, t_k, &inputs, &config.horizon, lags)?;
                series.push(rmse(&p, &r.actual));
            }
        }
        starts.push(t_k);
        alphas.push(alpha);
        gotl.observe(&r)?;
        pos += m;
    }
    if raw.is_empty() {
        return Err(Error::InsufficientHistory {
            index: target.len(),
            needed: lags + m + 1,
        });
    }
    let column = |j: usize| {
        ewma(
            &raw.iter().map(|r| r[j]).collect::<Vec<_>>(),
            config.smoothing,
        )
    };
    let smoothed: Vec<Vec<f64>> = (0..4).map(column).collect();
    let rows = raw
        .iter()
        .enumerate()
        .map(|(k, r)| MetricsRow {
            k,
            t_k: starts[k],
            alpha: alphas[k],
            rmse_source: r[0],
            rmse_target: r[1],
            rmse_gotl: r[2],
            rmse_ensemble: r[3],
            ewma_source: smoothed[0][k],
            ewma_target: smoothed[1][k],
            ewma_gotl: smoothed[2][k],
            ewma_ensemble: smoothed[3][k],
        })
        .collect();
    let members = member_raw
        .into_iter()
        .enumerate()
        .map(|(i, series)| MemberSeries {
            name: format!("source{}", i + 1),
            ewma: ewma(&series, config.smoothing),
            rmse: series,
        })
        .collect();
    Ok(ExperimentOutcome {
        id: config.id,
        rows,
        members,
        components: source.components,
    })
}

/// Comfort-heating curve of one predictor assembly.
#[derive(Debug, Clone)]
pub struct NamedCurve {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct MpcStudy {
    pub curves: Vec<NamedCurve>,
}

impl MpcStudy {
    pub fn curve(&self, name: &str) -> Option<&NamedCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["predictor", "kappa", "comfort", "heating_kwh", "pump_kwh"])?;
        for c in &self.curves {
            for p in &c.points {
                w.write_record(&[
                    c.name.clone(),
                    p.kappa.to_string(),
                    p.comfort.to_string(),
                    p.heating_kwh.to_string(),
                    p.pump_kwh.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("mpc_curve.csv"))?)
    }
}

/// Curves of the source-only, target-only and GOTL controllers on the target
/// house, one fresh closed-loop run per kappa and predictor.
pub fn run_mpc_study(config: &ExperimentConfig, exec: Execution) -> Result<MpcStudy> {
    config.validate()?;
    let source = fit_source(config, exec)?;
    let setup = config.online_setup();
    let assemblies = [
        Assembly::Source(&source.model),
        Assembly::Target,
        Assembly::Gotl(&source.model),
    ];
    let curves = par::map_slice(exec, &assemblies, |a| {
        comfort_heating_curve(
            &config.target,
            *a,
            &config.kappas,
            &config.mpc,
            &setup,
            exec,
        )
        .map(|points| NamedCurve {
            name: a.name().to_string(),
            points,
        })
    });
    Ok(MpcStudy {
        curves: curves.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Number of evaluation intervals in `days` days.
pub fn intervals_per(days: usize, horizon_steps: usize) -> usize {
    days * STEPS_PER_DAY / horizon_steps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for id in ExperimentId::ALL {
            let cfg = ExperimentConfig::preset(id);
            cfg.validate().unwrap();
            assert_eq!(ExperimentId::from_tag(id.tag()).unwrap(), id);
        }
        assert_eq!(
            ExperimentConfig::preset(ExperimentId::Exp2)
                .target
                .house
                .size_factor,
            3.0
        );
        assert_eq!(
            ExperimentConfig::preset(ExperimentId::Exp4).sources.len(),
            2
        );
    }

    #[test]
    fn key_values_override_preset() {
        let kv = KeyValues::parse(
            "experiment = exp4\nsource2.size_factor = 4\ntarget.days = 20\nseed = 5\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_key_values(&kv).unwrap();
        assert_eq!(cfg.sources[1].house.size_factor, 4.0);
        assert_eq!(cfg.target.days, 20);
        assert_eq!(cfg.target.seed, 26);
        assert!(ExperimentConfig::from_key_values(
            &KeyValues::parse("experiment = exp1\nsource2.days = 3").unwrap()
        )
        .is_err());
        assert!(ExperimentConfig::from_key_values(&KeyValues::parse("lags = 3").unwrap()).is_err());
        assert!(
            ExperimentConfig::from_key_values(&KeyValues::parse("experiment = exp9").unwrap())
                .is_err()
        );
    }

    #[test]
    fn exp4_rejects_single_source() {
        let mut cfg = ExperimentConfig::preset(ExperimentId::Exp4);
        cfg.sources.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ewma_fixed_point_and_identity() {
        assert_eq!(ewma(&[2.0; 5], 0.9), vec![2.0; 5]);
        assert_eq!(ewma(&[1.0, 5.0, 3.0], 0.0), vec![1.0, 5.0, 3.0]);
        assert!(ewma(&[], 0.9).is_empty());
    }
}
