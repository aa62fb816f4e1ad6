//! Fast invariant checks behind the `validate` subcommand.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mpc::{candidate_flows, horizon_cost, optimize_horizon, HorizonPredictor, MpcParams};
use crate::par::Execution;
use crate::regress::{NormalEquations, RlsState};
use crate::tca::{build_h, build_l, gram_matrix, solve_tca, DomainLayout, Kernel};
use crate::weighting::{closed_form_alpha, ErrorStats, GotlState, WeightGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Run every check with generators seeded by `seed`.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        gotl_reaches_minimiser(seed)?,
        rls_tracks_batch(seed)?,
        tca_unit_variance(seed)?,
        mpc_cost_decomposes(seed)?,
    ])
}

fn gotl_reaches_minimiser(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = WeightGrid::new(0.025)?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let e: Vec<(f64, f64)> = (0..8)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let stats = ErrorStats {
            target_sq: e.iter().map(|p| p.0 * p.0).sum(),
            source_sq: e.iter().map(|p| p.1 * p.1).sum(),
            cross: e.iter().map(|p| p.0 * p.1).sum(),
        };
        let start = grid.value(rng.random_range(0..grid.len()));
        let mut state = GotlState::new(grid, start, 1.0)?.with_stats(stats);
        for _ in 0..grid.len() {
            state.advance();
        }
        let star = closed_form_alpha(stats.source_sq, stats.target_sq, stats.cross, state.alpha())?;
        worst = worst.max((state.alpha() - star).abs());
    }
    Ok(Check {
        name: "gotl iterates to the continuous minimiser",
        passed: worst <= grid.delta() + 1e-12,
        detail: format!("largest gap {worst:.4}"),
    })
}

fn rls_tracks_batch(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let dim = 19;
    let p0 = 1e8;
    let mut rls = RlsState::new(dim, 1.0, p0)?;
    let mut ne = NormalEquations::new(dim);
    for _ in 0..200 {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x
            .iter()
            .enumerate()
            .map(|(i, v)| v * (i as f64 - 9.0))
            .sum::<f64>()
            + rng.random_range(-0.1..0.1);
        rls.update(&x, y)?;
        ne.add(&x, y);
    }
    let batch = ne.solve(1.0 / p0)?;
    let num: f64 = rls
        .coefficients()
        .iter()
        .zip(&batch)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den: f64 = batch.iter().map(|b| b * b).sum();
    let rel = (num / den).sqrt();
    Ok(Check {
        name: "rls matches the ridge batch solution",
        passed: rel < 1e-6,
        detail: format!("relative error {rel:.2e}"),
    })
}

fn tca_unit_variance(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let pts: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let shift = if i < 30 { 0.0 } else { 2.0 };
            (0..4)
                .map(|_| rng.random_range(-1.0..1.0) + shift)
                .collect()
        })
        .collect();
    let layout = DomainLayout::new(vec![30, 30])?;
    let k = gram_matrix(&pts, Kernel::Linear)?;
    let h = build_h(60);
    let sol = solve_tca(&k, &build_l(&layout), &h, 1.0, 3)?;
    let cov: DMatrix<f64> = sol.w.transpose() * &k * &h * &k * &sol.w;
    let worst = (0..3)
        .map(|i| (cov[(i, i)] - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Check {
        name: "tca components have unit projected variance",
        passed: worst < 1e-6,
        detail: format!("largest deviation {worst:.2e}"),
    })
}

struct Linear {
    start: f64,
    gain: f64,
    drift: f64,
}

impl HorizonPredictor for Linear {
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

fn mpc_cost_decomposes(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut mismatches = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=6);
        let params = MpcParams {
            horizon_steps: n,
            reopt_steps: 1,
            kappa: rng.random_range(0.0..50.0),
            ..Default::default()
        };
        let model = Linear {
            start: rng.random_range(17.0..23.0),
            gain: rng.random_range(0.0..1.0),
            drift: -0.3,
        };
        let presence: Vec<bool> = (0..=n).map(|_| rng.random_bool(0.7)).collect();
        let plan = optimize_horizon(&model, &presence, &params, Execution::Sequential)?;
        let mut best = f64::INFINITY;
        let mut flows = vec![false; n];
        let mut temps = vec![0.0; n + 1];
        for i in 0..1usize << n {
            candidate_flows(i, n, &mut flows);
            temps[0] = model.start;
            model.predict(&flows, &mut temps[1..]);
            let f: Vec<f64> = flows.iter().map(|&b| params.flow(b)).collect();
            let o: Vec<f64> = temps[..n]
                .iter()
                .map(|&t| params.predicted_outlet(t))
                .collect();
            let c = horizon_cost(&temps, &f, &o, &presence, &params)?;
            if (c.total - (c.comfort + c.heating + c.pump)).abs() > 1e-12 {
                mismatches += 1;
            }
            best = best.min(c.total);
        }
        if (plan.cost.total - best).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    Ok(Check {
        name: "mpc plan is the cheapest candidate and costs add up",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches"),
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all(3).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
