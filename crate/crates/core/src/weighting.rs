//! Better-reply adaptation of the convex weight between an offline source
//! predictor and an online target predictor.
//!
//! The combined predictor is `(1 - a) * target + a * source`. After each
//! evaluation interval the discounted squared rollout errors of both members
//! are folded into three running sums, from which the cumulative risk of any
//! weight on the grid follows in closed form:
//!
//! `R(a) = (1-a)^2 * B + a^2 * A + 2 a (1-a) * C`
//!
//! with `A = sum d e_S^2`, `B = sum d e^2`, `C = sum d e e_S`.

use crate::data::{rollout_predict, Dataset, HorizonSpec, Predictor};
use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.025;
pub const DEFAULT_DISCOUNT: f64 = 0.995;

/// The weight grid `{0, 1/n, 2/n, ..., 1}`; weights are handled as indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightGrid {
    steps: usize,
}

impl WeightGrid {
    /// Grid with spacing `delta`; `1/delta` must be an integer >= 2.
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(
                "grid spacing must lie in (0, 1)".into(),
            ));
        }
        let steps = (1.0 / delta).round();
        if (1.0 / steps - delta).abs() > 1e-12 || steps < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "1/delta must be an integer, got {}",
                1.0 / delta
            )));
        }
        Ok(WeightGrid {
            steps: steps as usize,
        })
    }

    pub fn with_steps(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(
                "grid needs at least 2 steps".into(),
            ));
        }
        Ok(WeightGrid { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, index: usize) -> f64 {
        debug_assert!(index <= self.steps);
        index as f64 / self.steps as f64
    }

    /// Grid index of `alpha`, if it lies on the grid.
    pub fn index_of(&self, alpha: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&alpha) {
            return None;
        }
        let i = (alpha * self.steps as f64).round();
        ((i / self.steps as f64 - alpha).abs() < 1e-9).then_some(i as usize)
    }

    /// Nearest grid index to an arbitrary weight in [0, 1].
    pub fn nearest_index(&self, alpha: f64) -> usize {
        (alpha.clamp(0.0, 1.0) * self.steps as f64).round() as usize
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.value(i))
    }

    /// Neighbourhood of a grid index: the index itself and its adjacent grid
    /// points that exist. The endpoints have one neighbour each.
    pub fn neighbor_indices(&self, index: usize) -> Vec<usize> {
        if index == 0 {
            vec![0, 1]
        } else if index >= self.steps {
            vec![self.steps - 1, self.steps]
        } else {
            vec![index - 1, index, index + 1]
        }
    }
}

/// Neighbour set of `alpha` on the grid with spacing `delta`.
pub fn neighbor_set(alpha: f64, delta: f64) -> Result<Vec<f64>> {
    let grid = WeightGrid::new(delta)?;
    let idx = grid
        .index_of(alpha)
        .ok_or_else(|| Error::InvalidParameter(format!("{alpha} is not on the grid")))?;
    Ok(grid
        .neighbor_indices(idx)
        .into_iter()
        .map(|i| grid.value(i))
        .collect())
}

/// Discounted second moments of the two members' errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    /// `sum d * e_S^2`
    pub source_sq: f64,
    /// `sum d * e^2`
    pub target_sq: f64,
    /// `sum d * e * e_S`
    pub cross: f64,
}

impl ErrorStats {
    pub fn risk(&self, alpha: f64) -> f64 {
        let b = 1.0 - alpha;
        b * b * self.target_sq + alpha * alpha * self.source_sq + 2.0 * alpha * b * self.cross
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ErrorStats {
            source_sq: self.source_sq * factor,
            target_sq: self.target_sq * factor,
            cross: self.cross * factor,
        }
    }

    pub fn add(&self, other: &ErrorStats) -> Self {
        ErrorStats {
            source_sq: self.source_sq + other.source_sq,
            target_sq: self.target_sq + other.target_sq,
            cross: self.cross + other.cross,
        }
    }
}

/// Rollout errors of both members over one evaluation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalErrors {
    target: Vec<f64>,
    source: Vec<f64>,
    weights: Vec<f64>,
}

impl IntervalErrors {
    /// `weights[j] = discount^(M-1-j)`.
    pub fn new(target: Vec<f64>, source: Vec<f64>, discount: f64) -> Result<Self> {
        if target.len() != source.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                got: source.len(),
            });
        }
        if target.is_empty() {
            return Err(Error::InvalidParameter("empty interval".into()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter(
                "discount must lie in (0, 1]".into(),
            ));
        }
        if target.iter().chain(&source).any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("interval errors"));
        }
        let m = target.len();
        let weights = (0..m).map(|j| discount.powi((m - 1 - j) as i32)).collect();
        Ok(IntervalErrors {
            target,
            source,
            weights,
        })
    }

    /// Errors from predicted trajectories against measured outputs.
    pub fn from_predictions(
        target_pred: &[f64],
        source_pred: &[f64],
        actual: &[f64],
        discount: f64,
    ) -> Result<Self> {
        if target_pred.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                expected: actual.len(),
                got: target_pred.len(),
            });
        }
        if source_pred.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                expected: actual.len(),
                got: source_pred.len(),
            });
        }
        let target = target_pred.iter().zip(actual).map(|(p, y)| p - y).collect();
        let source = source_pred.iter().zip(actual).map(|(p, y)| p - y).collect();
        IntervalErrors::new(target, source, discount)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn stats(&self) -> ErrorStats {
        let mut s = ErrorStats::default();
        for ((&e, &es), &d) in self.target.iter().zip(&self.source).zip(&self.weights) {
            s.source_sq += d * es * es;
            s.target_sq += d * e * e;
            s.cross += d * e * es;
        }
        s
    }

    /// Discounted squared error of the combined predictor, summed directly.
    pub fn direct_risk(&self, alpha: f64) -> f64 {
        self.target
            .iter()
            .zip(&self.source)
            .zip(&self.weights)
            .map(|((&e, &es), &d)| {
                let c = (1.0 - alpha) * e + alpha * es;
                d * c * c
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GotlState {
    grid: WeightGrid,
    alpha_index: usize,
    stats: ErrorStats,
    interval_index: usize,
    discount: f64,
    interval_forgetting: f64,
}

impl GotlState {
    /// Fresh state at weight `initial_alpha`; the accounts start empty.
    pub fn new(grid: WeightGrid, initial_alpha: f64, discount: f64) -> Result<Self> {
        let alpha_index = grid.index_of(initial_alpha).ok_or_else(|| {
            Error::InvalidParameter(format!("initial weight {initial_alpha} is not on the grid"))
        })?;
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter(
                "discount must lie in (0, 1]".into(),
            ));
        }
        Ok(GotlState {
            grid,
            alpha_index,
            stats: ErrorStats::default(),
            interval_index: 0,
            discount,
            interval_forgetting: 1.0,
        })
    }

    /// Source-only start, grid spacing 0.025, in-interval discount 0.995.
    pub fn standard() -> Self {
        GotlState::new(WeightGrid::with_steps(40).unwrap(), 1.0, DEFAULT_DISCOUNT).unwrap()
    }

    /// Optional decay of older intervals' accounts; 1 disables it.
    pub fn with_interval_forgetting(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidParameter(
                "interval forgetting must lie in (0, 1]".into(),
            ));
        }
        self.interval_forgetting = factor;
        Ok(self)
    }

    /// Replace the accumulated statistics, e.g. to replay frozen error moments.
    pub fn with_stats(mut self, stats: ErrorStats) -> Self {
        self.stats = stats;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.grid.value(self.alpha_index)
    }

    pub fn alpha_index(&self) -> usize {
        self.alpha_index
    }

    pub fn grid(&self) -> WeightGrid {
        self.grid
    }

    pub fn stats(&self) -> ErrorStats {
        self.stats
    }

    pub fn interval_index(&self) -> usize {
        self.interval_index
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Cumulative discounted risk of weight `alpha`.
    pub fn account(&self, alpha: f64) -> f64 {
        self.stats.risk(alpha)
    }

    /// Fold one finished interval into the accounts.
    pub fn record_interval(&mut self, errs: &IntervalErrors) {
        self.stats = self
            .stats
            .scaled(self.interval_forgetting)
            .add(&errs.stats());
    }

    /// Neighbour with strictly lower risk than the current weight, if any.
    /// The lower-risk neighbour wins when both improve; exact ties go to the
    /// smaller weight.
    pub fn better_reply_index(&self) -> Option<usize> {
        let current = self.stats.risk(self.alpha());
        let mut best: Option<(usize, f64)> = None;
        for i in self.grid.neighbor_indices(self.alpha_index) {
            if i == self.alpha_index {
                continue;
            }
            let r = self.stats.risk(self.grid.value(i));
            if r < current && best.is_none_or(|(bi, br)| r < br || (r == br && i < bi)) {
                best = Some((i, r));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn better_reply(&self) -> Option<f64> {
        self.better_reply_index().map(|i| self.grid.value(i))
    }

    /// Move to the better reply if one exists and advance the interval counter.
    /// Returns the weight for the next interval.
    pub fn advance(&mut self) -> f64 {
        if let Some(i) = self.better_reply_index() {
            self.alpha_index = i;
        }
        self.interval_index += 1;
        self.alpha()
    }

    /// Record the interval just ended, then take the better-reply step.
    pub fn step(&mut self, errs: &IntervalErrors) -> f64 {
        self.record_interval(errs);
        self.advance()
    }
}

/// Functional form of [`GotlState::record_interval`].
pub fn interval_error_update(state: &GotlState, errs: &IntervalErrors) -> GotlState {
    let mut next = state.clone();
    next.record_interval(errs);
    next
}

/// `(1 - alpha) * target(x) + alpha * source(x)`.
pub fn combined_predict<T, S>(target: &T, source: &S, alpha: f64, x: &[f64]) -> Result<f64>
where
    T: Predictor + ?Sized,
    S: Predictor + ?Sized,
{
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "weight {alpha} outside [0, 1]"
        )));
    }
    Ok((1.0 - alpha) * target.predict(x) + alpha * source.predict(x))
}

/// Fixed-weight combination of two predictors.
#[derive(Debug, Clone, Copy)]
pub struct Combined<'a, T: ?Sized, S: ?Sized> {
    pub target: &'a T,
    pub source: &'a S,
    pub alpha: f64,
}

impl<T, S> Predictor for Combined<'_, T, S>
where
    T: Predictor + ?Sized,
    S: Predictor + ?Sized,
{
    fn predict(&self, x: &[f64]) -> f64 {
        (1.0 - self.alpha) * self.target.predict(x) + self.alpha * self.source.predict(x)
    }
}

/// Member rollouts from `t_k` and the measured outputs they are scored against.
#[derive(Debug, Clone)]
pub struct IntervalRollouts {
    pub target: Vec<f64>,
    pub source: Vec<f64>,
    pub actual: Vec<f64>,
}

impl IntervalRollouts {
    /// Trajectory of the combined predictor: each member is rolled out on its
    /// own predictions and the trajectories are mixed. This keeps the member
    /// errors independent of the weight, which the risk accounts rely on.
    pub fn combined(&self, alpha: f64) -> Vec<f64> {
        self.target
            .iter()
            .zip(&self.source)
            .map(|(t, s)| (1.0 - alpha) * t + alpha * s)
            .collect()
    }

    pub fn errors(&self, discount: f64) -> Result<IntervalErrors> {
        IntervalErrors::from_predictions(&self.target, &self.source, &self.actual, discount)
    }
}

/// Roll both members out over the interval that starts at `t_k`.
pub fn interval_rollouts<T, S>(
    target: &T,
    source: &S,
    data: &Dataset,
    t_k: usize,
    spec: &HorizonSpec,
    lags: usize,
) -> Result<IntervalRollouts>
where
    T: Predictor + ?Sized,
    S: Predictor + ?Sized,
{
    let m = spec.horizon_steps;
    let inputs = data.inputs_from(t_k, m)?;
    let pos = data
        .position(t_k)
        .expect("inputs_from checked the position");
    if pos + m >= data.len() {
        return Err(Error::HorizonTooLong {
            horizon: m,
            available: data.len() - pos - 1,
        });
    }
    let actual = data.records()[pos + 1..=pos + m]
        .iter()
        .map(|r| r.output)
        .collect();
    Ok(IntervalRollouts {
        target: rollout_predict(target, data, t_k, &inputs, spec, lags)?,
        source: rollout_predict(source, data, t_k, &inputs, spec, lags)?,
        actual,
    })
}

/// One full adaptation step for the interval starting at `t_k`: score both
/// members, update the accounts and move the weight. Returns the weight for
/// the next interval together with the member rollouts.
pub fn gotl_step<T, S>(
    state: &mut GotlState,
    target: &T,
    source: &S,
    data: &Dataset,
    t_k: usize,
    spec: &HorizonSpec,
    lags: usize,
) -> Result<(f64, IntervalRollouts)>
where
    T: Predictor + ?Sized,
    S: Predictor + ?Sized,
{
    let rollouts = interval_rollouts(target, source, data, t_k, spec, lags)?;
    let errs = rollouts.errors(state.discount())?;
    let alpha = state.step(&errs);
    Ok((alpha, rollouts))
}

/// Continuous minimiser of `R(a)` on [0, 1].
///
/// `source_sq`, `target_sq` and `cross` are `A`, `B`, `C` above. When the two
/// error processes coincide (`A + B - 2C = 0`) every weight is optimal and
/// `fallback` is returned.
pub fn closed_form_alpha(source_sq: f64, target_sq: f64, cross: f64, fallback: f64) -> Result<f64> {
    if source_sq < 0.0 || target_sq < 0.0 {
        return Err(Error::InvalidParameter(
            "squared-error sums must be nonnegative".into(),
        ));
    }
    let curvature = source_sq + target_sq - 2.0 * cross;
    let scale = source_sq + target_sq;
    if curvature <= scale * 1e-15 {
        return Ok(fallback);
    }
    Ok(((target_sq - cross) / curvature).clamp(0.0, 1.0))
}

/// Parameters of an online GOTL run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GotlSettings {
    pub delta: f64,
    pub discount: f64,
    pub initial_alpha: f64,
    /// Intervals evaluated before errors enter the accounts; the weight stays
    /// at `initial_alpha` meanwhile.
    pub warmup_intervals: usize,
    /// Across-interval forgetting of the accounts; 1 keeps the full sum.
    pub interval_forgetting: f64,
}

impl Default for GotlSettings {
    fn default() -> Self {
        GotlSettings {
            delta: DEFAULT_DELTA,
            discount: DEFAULT_DISCOUNT,
            initial_alpha: 1.0,
            warmup_intervals: 4,
            interval_forgetting: 1.0,
        }
    }
}

impl GotlSettings {
    pub fn state(&self) -> Result<GotlState> {
        GotlState::new(
            WeightGrid::new(self.delta)?,
            self.initial_alpha,
            self.discount,
        )?
        .with_interval_forgetting(self.interval_forgetting)
    }
}

/// A GOTL state together with its warm-up counter.
#[derive(Debug, Clone)]
pub struct OnlineGotl {
    state: GotlState,
    warmup: usize,
    seen: usize,
}

impl OnlineGotl {
    pub fn new(settings: &GotlSettings) -> Result<Self> {
        Ok(OnlineGotl {
            state: settings.state()?,
            warmup: settings.warmup_intervals,
            seen: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.state.alpha()
    }

    pub fn state(&self) -> &GotlState {
        &self.state
    }

    /// Number of evaluated intervals, warm-up included.
    pub fn intervals_seen(&self) -> usize {
        self.seen
    }

    /// Feed one evaluated interval; returns the weight for the next one.
    pub fn observe(&mut self, rollouts: &IntervalRollouts) -> Result<f64> {
        self.seen += 1;
        if self.seen <= self.warmup {
            return Ok(self.state.alpha());
        }
        let errs = rollouts.errors(self.state.discount())?;
        Ok(self.state.step(&errs))
    }
}
