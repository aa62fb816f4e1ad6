//! Batch ridge regression for the offline source predictor and exponentially
//! weighted recursive least squares for the online target predictor.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{Dataset, FeatureLayout, Predictor};
use crate::error::{Error, Result};

/// Default ridge for batch fits; guards against constant input channels.
pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Default RLS prior scale, `P0 = p0 * I`.
pub const DEFAULT_P0: f64 = 1e4;
/// Forgetting factor used for the online target predictor.
pub const DEFAULT_FORGETTING: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    coefficients: Vec<f64>,
    layout: FeatureLayout,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, layout: FeatureLayout) -> Result<Self> {
        if coefficients.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("linear model coefficients"));
        }
        Ok(LinearModel {
            coefficients,
            layout,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[self.layout.intercept_index()]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["name", "value"])?;
        w.write_record(["lags", &self.layout.lags.to_string()])?;
        w.write_record(["n_inputs", &self.layout.n_inputs.to_string()])?;
        for (name, c) in feature_names(self.layout).iter().zip(&self.coefficients) {
            w.write_record([name.as_str(), &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        let field = |i: usize, key: &str| -> Result<String> {
            let row = rows
                .get(i)
                .ok_or_else(|| Error::Format(format!("missing `{key}` row")))?;
            if &row[0] != key {
                return Err(Error::Format(format!(
                    "expected `{key}`, found `{}`",
                    &row[0]
                )));
            }
            Ok(row[1].to_string())
        };
        let parse_usize = |s: String| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer `{s}`")))
        };
        let lags = parse_usize(field(0, "lags")?)?;
        let n_inputs = parse_usize(field(1, "n_inputs")?)?;
        let layout = FeatureLayout::new(lags, n_inputs);
        let names = feature_names(layout);
        let mut coefficients = Vec::with_capacity(layout.dim());
        for (i, name) in names.iter().enumerate() {
            let v = field(i + 2, name)?;
            coefficients.push(
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{v}`")))?,
            );
        }
        LinearModel::new(coefficients, layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        LinearModel::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl Predictor for LinearModel {
    fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

pub fn feature_names(layout: FeatureLayout) -> Vec<String> {
    let mut names: Vec<String> = (1..=layout.lags).map(|j| format!("y_lag{j}")).collect();
    for j in 1..=layout.lags {
        names.extend((1..=layout.n_inputs).map(|c| format!("u{c}_lag{j}")));
    }
    names.push("intercept".into());
    names
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulated normal equations `X'X`, `X'y`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    count: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        NormalEquations {
            gram: DMatrix::zeros(dim, dim),
            moment: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn add(&mut self, x: &[f64], y: f64) {
        let d = self.moment.len();
        debug_assert_eq!(x.len(), d);
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            self.moment[i] += xi * y;
            for (j, &xj) in x.iter().enumerate().skip(i) {
                self.gram[(i, j)] += xi * xj;
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Minimiser of `sum (w'x - y)^2 + ridge * |w|^2`.
    ///
    /// Solved on a column-equilibrated copy of the normal matrix through a
    /// symmetric eigendecomposition; the ridge acts in the original units.
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        if !(ridge >= 0.0) {
            return Err(Error::InvalidParameter("ridge must be nonnegative".into()));
        }
        let d = self.moment.len();
        if self.count == 0 {
            return Err(Error::InvalidParameter("no regression pairs".into()));
        }
        let mut g = self.gram.clone();
        for i in 0..d {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
            g[(i, i)] += ridge;
        }
        let scale: Vec<f64> = (0..d)
            .map(|i| {
                let v = g[(i, i)];
                if v > 0.0 {
                    1.0 / v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let a = DMatrix::from_fn(d, d, |i, j| g[(i, j)] * scale[i] * scale[j]);
        let b = DVector::from_fn(d, |i, _| self.moment[i] * scale[i]);
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normal equations"));
        }
        let eig = SymmetricEigen::new(a);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min_ev = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let floor = max_ev * 1e-12;
        if max_ev <= 0.0 || (ridge == 0.0 && min_ev <= floor) {
            return Err(Error::RankDeficient);
        }
        // With a positive ridge, directions below the floor are numerically
        // indistinguishable from exact collinearity; they get no weight, which
        // is the small-ridge limit of the ridge solution.
        let vt_b = eig.eigenvectors.transpose() * b;
        let z = &eig.eigenvectors
            * DVector::from_fn(d, |i, _| {
                let ev = eig.eigenvalues[i];
                if ev > floor {
                    vt_b[i] / ev
                } else {
                    0.0
                }
            });
        Ok((0..d).map(|i| z[i] * scale[i]).collect())
    }
}

/// Ridge least squares on explicit rows.
pub fn least_squares<'a, I>(rows: I, targets: &[f64], dim: usize, ridge: f64) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut ne = NormalEquations::new(dim);
    let mut n = 0;
    for (x, &y) in rows.into_iter().zip(targets) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        ne.add(x, y);
        n += 1;
    }
    if n != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: n,
        });
    }
    ne.solve(ridge)
}

/// Fit the offline source regressor over every constructible pair in `data`.
pub fn fit_batch_linear(data: &Dataset, lags: usize, ridge: f64) -> Result<LinearModel> {
    fit_batch_linear_multi(std::slice::from_ref(data), lags, ridge)
}

/// Pooled fit over several datasets sharing one layout; lag windows never
/// straddle dataset boundaries.
pub fn fit_batch_linear_multi(
    datasets: &[Dataset],
    lags: usize,
    ridge: f64,
) -> Result<LinearModel> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InvalidParameter("no datasets".into()))?;
    let layout = first.layout(lags);
    let mut ne = NormalEquations::new(layout.dim());
    for ds in datasets {
        if ds.n_inputs() != layout.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: layout.n_inputs,
                got: ds.n_inputs(),
            });
        }
        let (xs, ys) = ds.regression_pairs(lags)?;
        for (x, y) in xs.iter().zip(ys) {
            ne.add(x, y);
        }
    }
    if ne.count() == 0 {
        return Err(Error::InsufficientHistory {
            index: 0,
            needed: lags + 1,
        });
    }
    LinearModel::new(ne.solve(ridge)?, layout)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsSettings {
    pub forgetting: f64,
    pub p0: f64,
}

impl Default for RlsSettings {
    fn default() -> Self {
        RlsSettings {
            forgetting: DEFAULT_FORGETTING,
            p0: DEFAULT_P0,
        }
    }
}

impl RlsSettings {
    pub fn state(&self, dim: usize) -> Result<RlsState> {
        RlsState::new(dim, self.forgetting, self.p0)
    }
}

/// Exponentially weighted recursive least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    coefficients: Vec<f64>,
    inverse_covariance: DMatrix<f64>,
    forgetting: f64,
    sample_count: usize,
    // scratch for P x
    px: Vec<f64>,
}

impl RlsState {
    pub fn new(dim: usize, forgetting: f64, p0: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("RLS dimension must be >= 1".into()));
        }
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::InvalidParameter("RLS p0 must be positive".into()));
        }
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::InvalidParameter(
                "forgetting factor must lie in (0, 1]".into(),
            ));
        }
        Ok(RlsState {
            coefficients: vec![0.0; dim],
            inverse_covariance: DMatrix::from_diagonal_element(dim, dim, p0),
            forgetting,
            sample_count: 0,
            px: vec![0.0; dim],
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn inverse_covariance(&self) -> &DMatrix<f64> {
        &self.inverse_covariance
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// One RLS step:
    /// `g = P x / (lambda + x'P x)`, `w += g (y - w'x)`, `P = (P - g x'P) / lambda`,
    /// followed by re-symmetrisation of `P`.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RLS sample"));
        }
        let lambda = self.forgetting;
        let p = &mut self.inverse_covariance;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += p[(i, j)] * x[j];
            }
            self.px[i] = s;
        }
        let denom = lambda + dot(x, &self.px);
        let err = y - dot(&self.coefficients, x);
        for i in 0..d {
            self.coefficients[i] += self.px[i] / denom * err;
        }
        // P is symmetric, so x'P = (P x)'.
        for i in 0..d {
            let gi = self.px[i] / denom;
            for j in 0..d {
                p[(i, j)] = (p[(i, j)] - gi * self.px[j]) / lambda;
            }
        }
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (p[(i, j)] + p[(j, i)]);
                p[(i, j)] = m;
                p[(j, i)] = m;
            }
        }
        self.sample_count += 1;
        Ok(())
    }

    /// Frozen copy tagged with the feature layout it was trained on.
    pub fn snapshot_with(&self, layout: FeatureLayout) -> Result<LinearModel> {
        LinearModel::new(self.coefficients.clone(), layout)
    }
}

impl Predictor for RlsState {
    fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

pub fn rls_init(dim: usize, forgetting: f64, p0: f64) -> Result<RlsState> {
    RlsState::new(dim, forgetting, p0)
}

/// Functional form of [`RlsState::update`].
pub fn rls_update(state: &RlsState, x: &[f64], y: f64) -> Result<RlsState> {
    let mut next = state.clone();
    next.update(x, y)?;
    Ok(next)
}
