use std::collections::HashSet;
use std::sync::Mutex;

use gotl::mpc::*;
use gotl::par::Execution;
use gotl::sim::{ScenarioConfig, STEPS_PER_DAY};
use proptest::prelude::*;

/// Toy plant: constant drift plus a fixed gain per on-step.
struct Toy {
    start: f64,
    gain: f64,
    drift: f64,
}

impl HorizonPredictor for Toy {
    fn current_temp(&self) -> f64 {
        self.start
    }

    fn predict(&self, flows: &[bool], out: &mut [f64]) {
        let mut t = self.start;
        for (o, &on) in out.iter_mut().zip(flows) {
            t += self.drift + if on { self.gain } else { 0.0 };
            *o = t;
        }
    }
}

/// Independent brute force: recursive enumeration in lexicographic order,
/// cost written out from the definitions.
fn naive_best(toy: &Toy, presence: &[bool], p: &MpcParams) -> (Vec<bool>, f64) {
    fn cost(toy: &Toy, flows: &[bool], presence: &[bool], p: &MpcParams) -> f64 {
        let n = flows.len();
        let mut temps = vec![toy.start];
        for &on in flows {
            let last = *temps.last().unwrap();
            temps.push(last + toy.drift + if on { toy.gain } else { 0.0 });
        }
        let comfort: f64 = (0..=n)
            .filter(|&t| presence[t])
            .map(|t| (temps[t] - p.setpoint).powi(2))
            .sum::<f64>()
            * p.kappa
            / n as f64;
        let mut energy = 0.0;
        for t in 0..n {
            if flows[t] {
                let outlet = p.inlet_temp - p.radiant_effectiveness * (p.inlet_temp - temps[t]);
                energy += p.beta * p.sampling_period_h * (p.inlet_temp - outlet);
                energy += p.gamma * p.sampling_period_h * (p.flow_max * 3.6) / 3600.0;
            }
        }
        comfort + energy
    }
    fn walk(prefix: &mut Vec<bool>, n: usize, f: &mut dyn FnMut(&[bool])) {
        if prefix.len() == n {
            f(prefix);
            return;
        }
        for b in [false, true] {
            prefix.push(b);
            walk(prefix, n, f);
            prefix.pop();
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    walk(&mut Vec::new(), p.horizon_steps, &mut |flows| {
        let c = cost(toy, flows, presence, p);
        if c < best.1 {
            best = (flows.to_vec(), c);
        }
    });
    best
}

#[test]
fn zero_cost_at_setpoint_with_heating_off() {
    let p = MpcParams::default();
    let c = horizon_cost(&[21.0; 5], &[0.0; 4], &[45.0; 4], &[true; 5], &p).unwrap();
    assert_eq!(c.total, 0.0);
    assert!(horizon_cost(&[21.0; 4], &[0.0; 4], &[45.0; 4], &[true; 5], &p).is_err());
}

#[test]
fn pump_golden_value() {
    let p = MpcParams::default();
    assert!((p.pump_step(p.flow_max) - 0.02076893).abs() < 5e-9);
    assert_eq!(p.pump_step(0.0), 0.0);
}

#[test]
fn heating_golden_value() {
    let p = MpcParams::default();
    let outlet = p.predicted_outlet(20.0);
    assert!((p.heating_step(true, outlet) - 3.749625).abs() < 1e-9);
    assert_eq!(p.heating_step(false, outlet), 0.0);
}

#[test]
fn single_step_cost_breakdown() {
    let p = MpcParams {
        kappa: 2.0,
        ..Default::default()
    };
    let c = horizon_cost(
        &[20.0, 22.0],
        &[p.flow_max],
        &[p.predicted_outlet(20.0)],
        &[true, true],
        &p,
    )
    .unwrap();
    assert!((c.comfort - 2.0 * (1.0 + 1.0)).abs() < 1e-12);
    assert!((c.heating - 3.749625).abs() < 1e-9);
    assert!((c.total - (c.comfort + c.heating + c.pump)).abs() < 1e-12);
}

#[test]
fn no_comfort_weight_means_no_heating() {
    let p = MpcParams {
        kappa: 0.0,
        horizon_steps: 8,
        ..Default::default()
    };
    let toy = Toy {
        start: 15.0,
        gain: 1.0,
        drift: -0.5,
    };
    let plan = optimize_horizon(&toy, &[true; 9], &p, Execution::Sequential).unwrap();
    assert_eq!(plan.flows, vec![false; 8]);
    assert_eq!(plan.cost.total, 0.0);
}

struct Recorder<'a> {
    inner: Toy,
    seen: &'a Mutex<HashSet<Vec<bool>>>,
}

impl HorizonPredictor for Recorder<'_> {
    fn current_temp(&self) -> f64 {
        self.inner.current_temp()
    }

    fn predict(&self, flows: &[bool], out: &mut [f64]) {
        self.seen.lock().unwrap().insert(flows.to_vec());
        self.inner.predict(flows, out);
    }
}

#[test]
fn full_horizon_enumerates_every_sequence() {
    let seen = Mutex::new(HashSet::new());
    let model = Recorder {
        inner: Toy {
            start: 20.0,
            gain: 0.4,
            drift: -0.2,
        },
        seen: &seen,
    };
    let p = MpcParams::default();
    optimize_horizon(&model, &[true; 13], &p, Execution::Parallel).unwrap();
    assert_eq!(seen.lock().unwrap().len(), 4096);
    let mut f = vec![false; 4];
    candidate_flows(0b1010, 4, &mut f);
    assert_eq!(f, vec![true, false, true, false]);
}

#[test]
fn exact_model_plans_are_realized() {
    let sc = ScenarioConfig {
        days: 3,
        ..Default::default()
    };
    let params = MpcParams {
        kappa: 50.0,
        horizon_steps: 8,
        ..Default::default()
    };
    let run = receding_horizon_run(
        &sc,
        Assembly::Exact,
        &params,
        &OnlineSetup::default(),
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(run.segments.len(), 3 * STEPS_PER_DAY / 2);
    for s in &run.segments {
        for (a, b) in [
            (s.planned.comfort, s.realized.comfort),
            (s.planned.heating, s.realized.heating),
            (s.planned.pump, s.realized.pump),
        ] {
            assert!((a - b).abs() < 1e-9, "segment at {}: {a} vs {b}", s.start);
        }
    }
}

#[test]
fn exact_model_beats_thermostat_on_comfort() {
    let sc = ScenarioConfig {
        days: 5,
        ..Default::default()
    };
    let setup = OnlineSetup::default();
    let params = MpcParams {
        kappa: 1e6,
        horizon_steps: 8,
        ..Default::default()
    };
    let mpc =
        receding_horizon_run(&sc, Assembly::Exact, &params, &setup, Execution::Parallel).unwrap();
    let thermo = receding_horizon_run(
        &sc,
        Assembly::Hysteresis,
        &params,
        &setup,
        Execution::Parallel,
    )
    .unwrap();
    assert!(
        mpc.comfort <= thermo.comfort,
        "{} vs {}",
        mpc.comfort,
        thermo.comfort
    );
}

#[test]
fn full_season_gives_one_weight_per_interval() {
    let sc = ScenarioConfig {
        days: 150,
        ..Default::default()
    };
    let params = MpcParams {
        horizon_steps: 4,
        ..Default::default()
    };
    let run = receding_horizon_run(
        &sc,
        Assembly::Target,
        &params,
        &OnlineSetup::default(),
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(run.alphas.len(), 600);
    assert_eq!(run.ledger.len(), 150 * STEPS_PER_DAY + STEPS_PER_DAY);
}

#[test]
fn comfort_weight_is_monotone_on_average() {
    let kappas = [0.0, 5.0, 100.0];
    let mut means = [0.0; 3];
    for seed in 0..5 {
        let sc = ScenarioConfig {
            days: 4,
            seed: 100 + seed,
            ..Default::default()
        };
        for (i, &kappa) in kappas.iter().enumerate() {
            let p = MpcParams {
                kappa,
                horizon_steps: 8,
                ..Default::default()
            };
            let run = receding_horizon_run(
                &sc,
                Assembly::Exact,
                &p,
                &OnlineSetup::default(),
                Execution::Parallel,
            )
            .unwrap();
            means[i] += run.comfort / 5.0;
        }
    }
    assert!(means[0] >= means[1] && means[1] >= means[2], "{means:?}");
}

#[test]
fn ledger_csv_header() {
    let sc = ScenarioConfig {
        days: 1,
        ..Default::default()
    };
    let p = MpcParams {
        horizon_steps: 4,
        ..Default::default()
    };
    let run = receding_horizon_run(
        &sc,
        Assembly::Hysteresis,
        &p,
        &OnlineSetup::default(),
        Execution::Sequential,
    )
    .unwrap();
    let mut buf = Vec::new();
    run.write_ledger(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,flow,zone_temp,comfort_cum,heating_cum_kwh,pump_cum_kwh,alpha"
    );
    assert_eq!(text.lines().count(), run.ledger.len() + 1);
}

#[test]
fn invalid_params_rejected() {
    let toy = Toy {
        start: 20.0,
        gain: 0.5,
        drift: 0.0,
    };
    for p in [
        MpcParams {
            horizon_steps: 0,
            ..Default::default()
        },
        MpcParams {
            horizon_steps: 4,
            reopt_steps: 5,
            ..Default::default()
        },
        MpcParams {
            kappa: -1.0,
            ..Default::default()
        },
    ] {
        assert!(optimize_horizon(&toy, &[true; 30], &p, Execution::Sequential).is_err());
    }
    let p = MpcParams::default();
    assert!(optimize_horizon(&toy, &[true; 5], &p, Execution::Sequential).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn optimizer_matches_naive_enumeration(
        n in 1usize..=8,
        start in 16.0f64..24.0,
        gain in 0.0f64..1.5,
        drift in -0.6f64..0.2,
        kappa in 0.0f64..200.0,
        presence in prop::collection::vec(any::<bool>(), 9),
        parallel in any::<bool>(),
    ) {
        let toy = Toy { start, gain, drift };
        let p = MpcParams { kappa, horizon_steps: n, reopt_steps: 1, ..Default::default() };
        let exec = if parallel { Execution::Parallel } else { Execution::Sequential };
        let plan = optimize_horizon(&toy, &presence[..=n], &p, exec).unwrap();
        let (flows, cost) = naive_best(&toy, &presence[..=n], &p);
        prop_assert_eq!(&plan.flows, &flows);
        prop_assert!((plan.cost.total - cost).abs() < 1e-9 * cost.max(1.0));
        prop_assert!((plan.cost.total - (plan.cost.comfort + plan.cost.heating + plan.cost.pump)).abs() < 1e-12);
    }

    #[test]
    fn pareto_filter_keeps_exactly_the_front(pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30)) {
        let points: Vec<CurvePoint> = pts.iter().enumerate()
            .map(|(i, &(c, h))| CurvePoint { kappa: i as f64, comfort: c, heating_kwh: h, pump_kwh: 0.0 })
            .collect();
        let front = pareto_filter(&points);
        for w in front.windows(2) {
            prop_assert!(w[0].comfort <= w[1].comfort && w[0].heating_kwh > w[1].heating_kwh);
        }
        for p in &points {
            let dominated = points.iter().any(|q| q.comfort <= p.comfort && q.heating_kwh <= p.heating_kwh
                && (q.comfort < p.comfort || q.heating_kwh < p.heating_kwh));
            let kept = front.iter().any(|f| f.kappa == p.kappa);
            if dominated {
                prop_assert!(!kept);
            }
        }
        prop_assert!(!front.is_empty());
    }
}
