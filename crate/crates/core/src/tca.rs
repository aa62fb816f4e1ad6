//! Transfer Component Analysis over several source domains.
//!
//! The transfer components are the leading solutions of the symmetric-definite
//! pencil `K H K v = lambda (K L K + mu I) v`, where `K` is the Gram matrix of
//! the pooled source points, `L` the multi-domain mean-discrepancy matrix and
//! `H` the centering matrix. Columns are scaled so that `W' K H K W` has a
//! unit diagonal.
//!
//! Two solvers are provided. [`solve_tca`] works on the dense `N x N`
//! matrices and accepts any kernel. For the linear kernel, [`solve_tca_linear`]
//! reduces the same pencil to the feature dimension `d`: every eigenvector
//! with nonzero eigenvalue lies in the row space of `X`, so `v = X a` and
//!
//! `G^1/2 S G^1/2 b = lambda (G^1/2 T G^1/2 + mu I) b`,  `a = G^-1/2 b`
//!
//! with `G = X'X`, `S = X'HX`, `T = X'LX`.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{rmse, Dataset, FeatureLayout, Predictor, RolloutWindow};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::regress::{self, LinearModel, NormalEquations};

pub const DEFAULT_MU: f64 = 1.0;
pub const COMPONENT_GRID: [usize; 6] = [5, 10, 15, 20, 25, 30];

const CONDITION_LIMIT: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |a - b|^2)`. Available, but the transfer experiments use the linear kernel.
    Rbf {
        gamma: f64,
    },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => regress::dot(a, b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Kernel::Linear => "linear".into(),
            Kernel::Rbf { gamma } => format!("rbf:{gamma}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        if tag == "linear" {
            return Ok(Kernel::Linear);
        }
        if let Some(g) = tag.strip_prefix("rbf:") {
            let gamma = g
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad rbf gamma `{g}`")))?;
            return Ok(Kernel::Rbf { gamma });
        }
        Err(Error::Format(format!("unknown kernel `{tag}`")))
    }
}

fn check_dims<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let d = points
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty point set".into()))?
        .as_ref()
        .len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.as_ref().len(),
        });
    }
    Ok(d)
}

/// `K[i][j] = k(x_i, x_j)`.
pub fn gram_matrix<P: AsRef<[f64]>>(points: &[P], kernel: Kernel) -> Result<DMatrix<f64>> {
    check_dims(points)?;
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(points[i].as_ref(), points[j].as_ref());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Instance counts per source domain, in the order the points are stacked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainLayout {
    sizes: Vec<usize>,
}

impl DomainLayout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidParameter(
                "every domain needs at least one instance".into(),
            ));
        }
        Ok(DomainLayout { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn domains(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Domain label of every stacked instance.
    pub fn labels(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(d, &n)| std::iter::repeat_n(d, n))
            .collect()
    }
}

/// Same-domain entries `(D-1) / (N^2 n_d^2)`, cross-domain entries
/// `-1 / (N^2 n_d n_u)`.
pub fn build_l(layout: &DomainLayout) -> DMatrix<f64> {
    let n = layout.total();
    let nf = n as f64;
    let dm1 = (layout.domains() - 1) as f64;
    let labels = layout.labels();
    let sizes = layout.sizes();
    DMatrix::from_fn(n, n, |i, j| {
        let (d, u) = (labels[i], labels[j]);
        let (nd, nu) = (sizes[d] as f64, sizes[u] as f64);
        if d == u {
            dm1 / (nf * nf * nd * nd)
        } else {
            -1.0 / (nf * nf * nd * nu)
        }
    })
}

/// `I - 11'/N`.
pub fn build_h(n: usize) -> DMatrix<f64> {
    let inv = 1.0 / n as f64;
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// Leading transfer components and their generalized eigenvalues.
#[derive(Debug, Clone)]
pub struct TcaSolution {
    pub w: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Solve `A v = lambda B v` for symmetric `A` and symmetric positive definite
/// `B`; returns eigenpairs sorted by descending eigenvalue, with `v'Bv = 1`.
fn symmetric_definite_eigen(a: &DMatrix<f64>, b: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b.cholesky().ok_or_else(|| {
        Error::IllConditioned("regularised discrepancy matrix is not positive definite".into())
    })?;
    let l = chol.l();
    let diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if (dmax / dmin).powi(2) > CONDITION_LIMIT {
        return Err(Error::IllConditioned(format!(
            "condition estimate {:.3e} for K L K + mu I; increase mu",
            (dmax / dmin).powi(2)
        )));
    }
    // C = L^-1 A L^-T
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::IllConditioned("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::IllConditioned("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transfer component eigenvalues"));
    }
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let lt = l.transpose();
    let v = lt
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::IllConditioned("triangular solve failed".into()))?;
    Ok((values, v))
}

/// Scale columns with nonzero eigenvalue to unit projected variance and
/// reject eigenvalues that are meaningfully negative (the left matrix is PSD).
fn normalise_columns(values: &[f64], v: &mut DMatrix<f64>) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-10 * top.max(f64::MIN_POSITIVE);
    for (c, &lam) in values.iter().enumerate() {
        if lam < -1e-8 * top.max(1.0) {
            return Err(Error::IllConditioned(format!(
                "negative generalized eigenvalue {lam:.3e}; increase mu"
            )));
        }
        if lam > tol {
            let s = 1.0 / lam.sqrt();
            v.column_mut(c).scale_mut(s);
        }
    }
    Ok(())
}

/// Dense solver on explicit `K`, `L`, `H`. Requires `mu > 0` and `1 <= m <= N`.
pub fn solve_tca(
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    h: &DMatrix<f64>,
    mu: f64,
    m: usize,
) -> Result<TcaSolution> {
    let n = k.nrows();
    if k.ncols() != n || l.shape() != (n, n) || h.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: l.nrows(),
        });
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter("mu must be positive".into()));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "component count {m} outside 1..={n}"
        )));
    }
    let khk = k * h * k;
    let khk = (&khk + khk.transpose()) * 0.5;
    let klk = k * l * k;
    let mut b = (&klk + klk.transpose()) * 0.5;
    for i in 0..n {
        b[(i, i)] += mu;
    }
    let (values, mut v) = symmetric_definite_eigen(&khk, b)?;
    let mut w = v.columns(0, m).into_owned();
    normalise_columns(&values[..m], &mut w)?;
    v.fill(0.0);
    Ok(TcaSolution {
        w,
        eigenvalues: values[..m].to_vec(),
    })
}

/// Reduced solver for the linear kernel on stacked rows `x` (N x d, full
/// column rank). Returns `W` (N x m) and the coefficient matrix `A` (d x m)
/// with `W = X A`. Components beyond the rank of `X` are zero columns.
pub fn solve_tca_linear(
    x: &DMatrix<f64>,
    layout: &DomainLayout,
    mu: f64,
    m: usize,
) -> Result<(TcaSolution, DMatrix<f64>)> {
    let n = x.nrows();
    let d = x.ncols();
    if layout.total() != n {
        return Err(Error::DimensionMismatch {
            expected: layout.total(),
            got: n,
        });
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter("mu must be positive".into()));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "component count {m} outside 1..={n}"
        )));
    }
    let nf = n as f64;
    let g = x.transpose() * x;
    let col_sum = x.row_sum().transpose();
    let s = &g - (&col_sum * col_sum.transpose()) / nf;
    // X'LX = (1/N^2) sum_{d<u} (m_d - m_u)(m_d - m_u)'
    let mut means = Vec::with_capacity(layout.domains());
    let mut start = 0;
    for &sz in layout.sizes() {
        let block = x.rows(start, sz);
        means.push(block.row_sum().transpose() / sz as f64);
        start += sz;
    }
    let mut t = DMatrix::zeros(d, d);
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let diff: DVector<f64> = &means[a] - &means[b];
            t += &diff * diff.transpose();
        }
    }
    t /= nf * nf;

    let ge = SymmetricEigen::new(g.clone());
    let gmax = ge.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let gmin = ge.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if gmin <= gmax * 1e-12 {
        return Err(Error::RankDeficient);
    }
    let sqrt_g = &ge.eigenvectors
        * DMatrix::from_diagonal(&ge.eigenvalues.map(f64::sqrt))
        * ge.eigenvectors.transpose();
    let inv_sqrt_g = &ge.eigenvectors
        * DMatrix::from_diagonal(&ge.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * ge.eigenvectors.transpose();
    let lhs = &sqrt_g * &s * &sqrt_g;
    let lhs = (&lhs + lhs.transpose()) * 0.5;
    let mut rhs = &sqrt_g * &t * &sqrt_g;
    rhs = (&rhs + rhs.transpose()) * 0.5;
    for i in 0..d {
        rhs[(i, i)] += mu;
    }
    let (values, bvecs) = symmetric_definite_eigen(&lhs, rhs)?;
    let keep = m.min(d);
    let mut a = DMatrix::zeros(d, m);
    a.columns_mut(0, keep)
        .copy_from(&(&inv_sqrt_g * bvecs.columns(0, keep)));
    let mut eigenvalues = values[..keep].to_vec();
    eigenvalues.resize(m, 0.0);
    normalise_columns(&eigenvalues, &mut a)?;
    let w = x * &a;
    Ok((TcaSolution { w, eigenvalues }, a))
}

/// Squared maximum mean discrepancy, clipped at zero.
pub fn mmd<P: AsRef<[f64]>>(a: &[P], b: &[P], kernel: Kernel) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter(
            "MMD needs two nonempty samples".into(),
        ));
    }
    let mean = |p: &[P], q: &[P]| -> f64 {
        let mut s = 0.0;
        for x in p {
            for y in q {
                s += kernel.eval(x.as_ref(), y.as_ref());
            }
        }
        s / (p.len() * q.len()) as f64
    };
    Ok((mean(a, a) - 2.0 * mean(a, b) + mean(b, b)).max(0.0))
}

/// Per-channel standardisation; constant channels are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    kept: Vec<usize>,
    input_dim: usize,
}

impl Standardizer {
    pub fn fit<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let d = check_dims(points)?;
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for p in points {
            for ((s, v), m) in var.iter_mut().zip(p.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let kept = (0..d)
            .filter(|&i| scale[i] > 1e-12 * (1.0 + mean[i].abs()))
            .collect();
        Ok(Standardizer {
            mean,
            scale,
            kept,
            input_dim: d,
        })
    }

    /// Pass-through that keeps every channel unchanged.
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
            kept: (0..d).collect(),
            input_dim: d,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(&self.kept) {
            *o = (x[i] - self.mean[i]) / self.scale[i];
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.kept.len()];
        self.apply_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcaConfig {
    pub kernel: Kernel,
    pub mu: f64,
    pub components: usize,
    pub standardize: bool,
}

impl Default for TcaConfig {
    fn default() -> Self {
        TcaConfig {
            kernel: Kernel::Linear,
            mu: DEFAULT_MU,
            components: 10,
            standardize: true,
        }
    }
}

/// Fitted transfer components: stored (standardised) training points, the
/// projection `W`, and the standardisation that maps raw inputs to them.
#[derive(Debug, Clone)]
pub struct TcaModel {
    points: DMatrix<f64>,
    w: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    domains: DomainLayout,
    standardizer: Standardizer,
    mu: f64,
    kernel: Kernel,
    /// Linear kernel only: `X'W`, so that `theta(x) = (X'W)' x`.
    linear_map: Option<DMatrix<f64>>,
}

impl TcaModel {
    /// Fit on source domains given as lists of raw points.
    pub fn fit<P: AsRef<[f64]>>(domains: &[Vec<P>], config: &TcaConfig) -> Result<Self> {
        let sizes: Vec<usize> = domains.iter().map(|d| d.len()).collect();
        let layout = DomainLayout::new(sizes)?;
        let all: Vec<&[f64]> = domains.iter().flatten().map(|p| p.as_ref()).collect();
        check_dims(&all)?;
        let standardizer = if config.standardize {
            Standardizer::fit(&all)?
        } else {
            Standardizer::identity(all[0].len())
        };
        let d = standardizer.output_dim();
        if d == 0 {
            return Err(Error::InvalidParameter(
                "all TCA input channels are constant".into(),
            ));
        }
        let n = all.len();
        let mut points = DMatrix::zeros(n, d);
        let mut buf = vec![0.0; d];
        for (i, p) in all.iter().enumerate() {
            standardizer.apply_into(p, &mut buf);
            points.row_mut(i).copy_from_slice(&buf);
        }
        TcaModel::fit_standardized(points, layout, standardizer, config)
    }

    fn fit_standardized(
        points: DMatrix<f64>,
        domains: DomainLayout,
        standardizer: Standardizer,
        config: &TcaConfig,
    ) -> Result<Self> {
        let m = config.components;
        match config.kernel {
            Kernel::Linear => {
                let (sol, a) = solve_tca_linear(&points, &domains, config.mu, m)?;
                let linear_map = points.transpose() * &points * &a;
                Ok(TcaModel {
                    points,
                    w: sol.w,
                    eigenvalues: sol.eigenvalues,
                    domains,
                    standardizer,
                    mu: config.mu,
                    kernel: config.kernel,
                    linear_map: Some(linear_map),
                })
            }
            kernel => {
                let rows: Vec<Vec<f64>> = points
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect();
                let k = gram_matrix(&rows, kernel)?;
                let l = build_l(&domains);
                let h = build_h(rows.len());
                let sol = solve_tca(&k, &l, &h, config.mu, m)?;
                Ok(TcaModel {
                    points,
                    w: sol.w,
                    eigenvalues: sol.eigenvalues,
                    domains,
                    standardizer,
                    mu: config.mu,
                    kernel,
                    linear_map: None,
                })
            }
        }
    }

    pub fn components(&self) -> usize {
        self.w.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn training_points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn domains(&self) -> &DomainLayout {
        &self.domains
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.input_dim()
    }

    /// `X'W` for the linear kernel.
    pub fn linear_map(&self) -> Option<&DMatrix<f64>> {
        self.linear_map.as_ref()
    }

    /// Kernel evaluations of a standardised point against all training points.
    fn kernel_column(&self, z: &[f64]) -> DVector<f64> {
        let n = self.points.nrows();
        let mut row = vec![0.0; self.points.ncols()];
        DVector::from_fn(n, |i, _| {
            for (c, r) in row.iter_mut().enumerate() {
                *r = self.points[(i, c)];
            }
            self.kernel.eval(&row, z)
        })
    }

    /// `theta(x) = W' [k(x_j, x)]_j`, evaluated against every stored point.
    pub fn project_by_kernel(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let z = self.standardizer.apply(x);
        let kx = self.kernel_column(&z);
        Ok((self.w.transpose() * kx).iter().copied().collect())
    }

    /// Latent coordinates of a raw point.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        match &self.linear_map {
            Some(p) => {
                let z = self.standardizer.apply(x);
                let mut out = vec![0.0; p.ncols()];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|r| p[(r, c)] * z[r]).sum();
                }
                Ok(out)
            }
            None => self.project_by_kernel(x),
        }
    }

    /// `W'K` for the stored points (m x N).
    pub fn embedding(&self) -> DMatrix<f64> {
        match &self.linear_map {
            Some(p) => p.transpose() * self.points.transpose(),
            None => {
                let rows: Vec<Vec<f64>> = self
                    .points
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect();
                let k = gram_matrix(&rows, self.kernel).expect("stored points share one dimension");
                self.w.transpose() * k
            }
        }
    }

    /// Write `meta.csv`, `standardization.csv`, `points.csv`, `projection.csv`
    /// and `domains.csv` into `dir`.
    pub fn save_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut meta = std::fs::File::create(dir.join("meta.csv"))?;
        writeln!(meta, "key,value")?;
        writeln!(meta, "kernel,{}", self.kernel.tag())?;
        writeln!(meta, "mu,{}", self.mu)?;
        writeln!(meta, "components,{}", self.components())?;
        writeln!(meta, "input_dim,{}", self.input_dim())?;
        let mut st = std::fs::File::create(dir.join("standardization.csv"))?;
        writeln!(st, "channel,mean,scale,kept")?;
        for i in 0..self.input_dim() {
            let kept = self.standardizer.kept.contains(&i) as u8;
            writeln!(
                st,
                "{i},{},{},{kept}",
                self.standardizer.mean[i], self.standardizer.scale[i]
            )?;
        }
        write_matrix(&dir.join("points.csv"), &self.points)?;
        write_matrix(&dir.join("projection.csv"), &self.w)?;
        let mut dm = std::fs::File::create(dir.join("domains.csv"))?;
        writeln!(dm, "domain,size,eigenvalue_rank,eigenvalue")?;
        let rows = self.domains.domains().max(self.eigenvalues.len());
        for i in 0..rows {
            let size = self
                .domains
                .sizes()
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_default();
            let ev = self
                .eigenvalues
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_default();
            writeln!(dm, "{i},{size},{i},{ev}")?;
        }
        Ok(())
    }

    pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta = read_key_values(&dir.join("meta.csv"))?;
        let get = |k: &str| {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("bundle meta lacks `{k}`")))
        };
        let kernel = Kernel::from_tag(&get("kernel")?)?;
        let mu: f64 = parse(&get("mu")?)?;
        let input_dim: usize = parse(&get("input_dim")?)?;
        let mut rdr = csv::Reader::from_path(dir.join("standardization.csv"))?;
        let mut mean = vec![0.0; input_dim];
        let mut scale = vec![1.0; input_dim];
        let mut kept = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let i: usize = parse(&row[0])?;
            if i >= input_dim {
                return Err(Error::Format(format!("channel {i} out of range")));
            }
            mean[i] = parse(&row[1])?;
            scale[i] = parse(&row[2])?;
            if &row[3] == "1" {
                kept.push(i);
            }
        }
        let standardizer = Standardizer {
            mean,
            scale,
            kept,
            input_dim,
        };
        let points = read_matrix(&dir.join("points.csv"))?;
        let w = read_matrix(&dir.join("projection.csv"))?;
        let mut rdr = csv::Reader::from_path(dir.join("domains.csv"))?;
        let mut sizes = Vec::new();
        let mut eigenvalues = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if !row[1].is_empty() {
                sizes.push(parse(&row[1])?);
            }
            if !row[3].is_empty() {
                eigenvalues.push(parse(&row[3])?);
            }
        }
        let domains = DomainLayout::new(sizes)?;
        if points.nrows() != w.nrows() || points.nrows() != domains.total() {
            return Err(Error::Format("bundle matrices disagree on N".into()));
        }
        let linear_map = matches!(kernel, Kernel::Linear).then(|| points.transpose() * &w);
        Ok(TcaModel {
            points,
            w,
            eigenvalues,
            domains,
            standardizer,
            mu,
            kernel,
            linear_map,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Format(format!("cannot parse `{s}`")))
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..m.ncols()).map(|c| format!("c{c}")).collect();
    w.write_record(&header)?;
    for r in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|c| m[(r, c)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let cols = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for row in rdr.records() {
        let row = row?;
        if row.len() != cols {
            return Err(Error::Format("ragged matrix file".into()));
        }
        for v in row.iter() {
            data.push(parse::<f64>(v)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[0].to_string(), r[1].to_string()))
        })
        .collect()
}

/// Source predictor for several houses: a linear head on the transfer
/// components of the (intercept-free) feature vector.
#[derive(Debug, Clone)]
pub struct MultiSourcePredictor {
    tca: TcaModel,
    /// `m` component weights followed by the intercept.
    head: Vec<f64>,
    layout: FeatureLayout,
}

impl MultiSourcePredictor {
    pub fn tca(&self) -> &TcaModel {
        &self.tca
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    /// Prediction through the kernel-evaluation path.
    pub fn predict_by_kernel(&self, x: &[f64]) -> Result<f64> {
        let theta = self.tca.project_by_kernel(&x[..x.len() - 1])?;
        let m = theta.len();
        Ok(regress::dot(&self.head[..m], &theta) + self.head[m])
    }

    /// For the linear kernel the composition is itself linear in the raw
    /// features; this returns that model.
    pub fn to_linear_model(&self) -> Option<LinearModel> {
        let p = self.tca.linear_map()?;
        let st = self.tca.standardizer();
        let m = p.ncols();
        let dim = self.layout.dim();
        let mut coef = vec![0.0; dim];
        let mut intercept = self.head[m];
        for (r, &ch) in st.kept().iter().enumerate() {
            let g: f64 = (0..m).map(|c| p[(r, c)] * self.head[c]).sum();
            let w = g / st.scale()[ch];
            coef[ch] = w;
            intercept -= w * st.mean()[ch];
        }
        coef[dim - 1] = intercept;
        LinearModel::new(coef, self.layout).ok()
    }
}

impl Predictor for MultiSourcePredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        let theta = self
            .tca
            .project(&x[..x.len() - 1])
            .expect("feature layout checked at fit time");
        let m = theta.len();
        regress::dot(&self.head[..m], &theta) + self.head[m]
    }
}

/// Fit TCA on the pooled source features and a linear head on the projected
/// features. Each domain may consist of several contiguous segments; lag
/// windows never cross segment boundaries. The intercept channel is left out
/// of TCA and re-added in the head.
pub fn fit_multisource_predictor(
    domains: &[Vec<Dataset>],
    lags: usize,
    config: &TcaConfig,
    ridge: f64,
) -> Result<MultiSourcePredictor> {
    let first = domains
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::InvalidParameter("no source data".into()))?;
    let layout = first.layout(lags);
    let mut points: Vec<Vec<Vec<f64>>> = Vec::with_capacity(domains.len());
    let mut targets = Vec::new();
    for segments in domains {
        let mut pts = Vec::new();
        for ds in segments {
            if ds.n_inputs() != layout.n_inputs {
                return Err(Error::DimensionMismatch {
                    expected: layout.n_inputs,
                    got: ds.n_inputs(),
                });
            }
            let (xs, ys) = ds.regression_pairs(lags)?;
            for (x, y) in xs.into_iter().zip(ys) {
                let mut v = x.into_vec();
                v.pop();
                pts.push(v);
                targets.push(y);
            }
        }
        points.push(pts);
    }
    let tca = TcaModel::fit(&points, config)?;
    let m = tca.components();
    let mut ne = NormalEquations::new(m + 1);
    let mut row = vec![1.0; m + 1];
    for (p, &y) in points.iter().flatten().zip(&targets) {
        let theta = tca.project(p)?;
        row[..m].copy_from_slice(&theta);
        ne.add(&row, y);
    }
    let head = ne.solve(ridge)?;
    Ok(MultiSourcePredictor { tca, head, layout })
}

/// Rollout RMSE of `predictor` over every full horizon that starts on a
/// multiple of `horizon` inside `data`.
pub fn rollout_rmse<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    lags: usize,
    horizon: usize,
) -> Result<f64> {
    let n = data.len();
    let mi = data.n_inputs();
    let mut pred = Vec::new();
    let mut actual = Vec::new();
    let mut out = vec![0.0; horizon];
    let first = data.first_time().unwrap_or(0);
    let mut pos = lags.max(horizon);
    while pos + horizon < n {
        let window = RolloutWindow::from_dataset(data, first + pos, lags)?;
        let flat: Vec<f64> = data.records()[pos..pos + horizon]
            .iter()
            .flat_map(|r| r.inputs.iter().copied())
            .collect();
        debug_assert_eq!(flat.len(), horizon * mi);
        window.rollout_into(predictor, &flat, &mut out);
        pred.extend_from_slice(&out);
        actual.extend(
            data.records()[pos + 1..=pos + horizon]
                .iter()
                .map(|r| r.output),
        );
        pos += horizon;
    }
    if pred.is_empty() {
        return Err(Error::InsufficientHistory {
            index: n,
            needed: lags + horizon,
        });
    }
    Ok(rmse(&pred, &actual))
}

/// Cross-validated score of every grid value: one fold per (domain, third),
/// holding that third out and fitting on everything else.
pub fn component_scores(
    sources: &[Dataset],
    grid: &[usize],
    config: &TcaConfig,
    lags: usize,
    horizon: usize,
    ridge: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if sources.len() < 2 {
        return Err(Error::InvalidParameter(
            "component selection needs at least two source domains".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty component grid".into()));
    }
    let min_len = sources.iter().map(|s| s.len()).min().unwrap_or(0);
    if min_len < 3 * (lags + horizon + 1) {
        return Err(Error::InvalidParameter(
            "source datasets too short to split into thirds".into(),
        ));
    }
    // Smallest training pool across folds bounds the admissible grid.
    let total_pairs: usize = sources.iter().map(|s| s.len().saturating_sub(lags)).sum();
    let smallest_pool = total_pairs - min_len / 3 - 3 * lags;
    if let Some(&bad) = grid.iter().find(|&&m| m == 0 || m > smallest_pool) {
        return Err(Error::InvalidParameter(format!(
            "component count {bad} exceeds the {smallest_pool} available training instances"
        )));
    }
    let folds: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|d| (0..3).map(move |i| (d, i)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..grid.len()).map(move |g| (f, g)))
        .collect();
    let results = par::map_slice(exec, &jobs, |&(f, g)| -> Result<f64> {
        let (hold_domain, third) = folds[f];
        let mut domains = Vec::with_capacity(sources.len());
        let mut held_out = None;
        for (d, ds) in sources.iter().enumerate() {
            if d == hold_domain {
                let n = ds.len();
                let cuts = [0, n / 3, 2 * n / 3, n];
                let mut segs = Vec::new();
                for i in 0..3 {
                    let part = ds.slice(cuts[i]..cuts[i + 1]);
                    if i == third {
                        held_out = Some(part);
                    } else {
                        segs.push(part);
                    }
                }
                domains.push(segs);
            } else {
                domains.push(vec![ds.clone()]);
            }
        }
        let cfg = TcaConfig {
            components: grid[g],
            ..*config
        };
        let model = fit_multisource_predictor(&domains, lags, &cfg, ridge)?;
        let held_out = held_out.expect("held-out third exists");
        match model.to_linear_model() {
            Some(lin) => rollout_rmse(&lin, &held_out, lags, horizon),
            None => rollout_rmse(&model, &held_out, lags, horizon),
        }
    });
    let mut scores = vec![0.0; grid.len()];
    for (&(_, g), r) in jobs.iter().zip(results) {
        scores[g] += r?;
    }
    scores.iter_mut().for_each(|s| *s /= folds.len() as f64);
    Ok(scores)
}

/// Grid value with the lowest mean held-out rollout RMSE; ties go to the
/// smaller component count.
pub fn select_components(
    sources: &[Dataset],
    grid: &[usize],
    config: &TcaConfig,
    lags: usize,
    horizon: usize,
    ridge: f64,
    exec: Execution,
) -> Result<usize> {
    let scores = component_scores(sources, grid, config, lags, horizon, ridge, exec)?;
    Ok(pick_components(grid, &scores))
}

/// Lowest score wins, smaller component count on ties.
pub fn pick_components(grid: &[usize], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..grid.len() {
        if scores[i] < scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    grid[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: &[f64]) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| normal.sample(rng) * (1.0 + 0.3 * j as f64) + shift[j])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gram_of_orthonormal_points() {
        let k = gram_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], Kernel::Linear).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));
        assert!(gram_matrix(&[vec![1.0, 0.0], vec![0.0]], Kernel::Linear).is_err());
    }

    #[test]
    fn gram_is_symmetric_with_squared_norm_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud(&mut rng, 10, 4, &[0.0; 4]);
        let k = gram_matrix(&pts, Kernel::Linear).unwrap();
        for i in 0..10 {
            assert!((k[(i, i)] - regress::dot(&pts[i], &pts[i])).abs() < 1e-12);
            for j in 0..10 {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let min_ev = SymmetricEigen::new(k).eigenvalues.min();
        assert!(min_ev >= -1e-10);
    }

    #[test]
    fn l_matrix_two_equal_domains() {
        let l = build_l(&DomainLayout::new(vec![2, 2]).unwrap());
        assert!((l[(0, 1)] - 1.0 / 64.0).abs() < 1e-15);
        assert!((l[(0, 2)] + 1.0 / 64.0).abs() < 1e-15);
        assert!((l[(3, 2)] - 1.0 / 64.0).abs() < 1e-15);
        for i in 0..4 {
            assert!(l.row(i).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn l_matrix_uneven_domains_symmetric_zero_sum() {
        let l = build_l(&DomainLayout::new(vec![3, 5, 2]).unwrap());
        assert_eq!(l, l.transpose());
        for i in 0..10 {
            assert!(l.row(i).sum().abs() < 1e-15);
        }
        assert!(DomainLayout::new(vec![3, 0]).is_err());
    }

    #[test]
    fn centering_matrix() {
        let h = build_h(2);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        let h = build_h(7);
        assert!((&h * &h - &h).abs().max() < 1e-12);
        assert!((&h * DVector::from_element(7, 1.0)).abs().max() < 1e-12);
    }

    #[test]
    fn mmd_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(&mut rng, 20, 3, &[0.0; 3]);
        assert!(mmd(&a, &a, Kernel::Linear).unwrap() < 1e-12);
        let b = cloud(&mut rng, 20, 3, &[50.0, 0.0, 0.0]);
        assert!(mmd(&a, &b, Kernel::Linear).unwrap() > 1000.0);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(mmd(&a, &empty, Kernel::Linear).is_err());
    }

    #[test]
    fn solve_rejects_bad_arguments() {
        let k = DMatrix::identity(3, 3);
        let l = DMatrix::zeros(3, 3);
        let h = build_h(3);
        assert!(solve_tca(&k, &l, &h, 0.0, 1).is_err());
        assert!(solve_tca(&k, &l, &h, 1.0, 0).is_err());
        assert!(solve_tca(&k, &l, &h, 1.0, 4).is_err());
    }

    #[test]
    fn projecting_stored_points_matches_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cloud(&mut rng, 15, 5, &[0.0; 5]);
        let b = cloud(&mut rng, 12, 5, &[1.0, 0.0, 2.0, 0.0, 0.0]);
        for kernel in [Kernel::Linear, Kernel::Rbf { gamma: 0.1 }] {
            let cfg = TcaConfig {
                kernel,
                mu: 1.0,
                components: 3,
                standardize: false,
            };
            let model = TcaModel::fit(&[a.clone(), b.clone()], &cfg).unwrap();
            let emb = model.embedding();
            for (i, p) in a.iter().chain(&b).enumerate() {
                let theta = model.project(p).unwrap();
                let by_kernel = model.project_by_kernel(p).unwrap();
                for c in 0..3 {
                    assert!((theta[c] - emb[(c, i)]).abs() < 1e-9 * (1.0 + emb[(c, i)].abs()));
                    assert!((theta[c] - by_kernel[c]).abs() < 1e-9 * (1.0 + theta[c].abs()));
                }
            }
        }
    }

    #[test]
    fn zero_point_projects_to_zero_without_standardisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = cloud(&mut rng, 10, 4, &[0.0; 4]);
        let b = cloud(&mut rng, 10, 4, &[1.0; 4]);
        let cfg = TcaConfig {
            kernel: Kernel::Linear,
            mu: 1.0,
            components: 2,
            standardize: false,
        };
        let model = TcaModel::fit(&[a, b], &cfg).unwrap();
        assert!(model.project(&[0.0; 4]).unwrap().iter().all(|v| *v == 0.0));
        assert!(model.project(&[0.0; 3]).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = cloud(&mut rng, 10, 4, &[0.0; 4]);
        let b = cloud(&mut rng, 8, 4, &[1.0; 4]);
        let model = TcaModel::fit(
            &[a.clone(), b],
            &TcaConfig {
                components: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save_bundle(dir.path()).unwrap();
        let back = TcaModel::load_bundle(dir.path()).unwrap();
        for p in &a {
            let (x, y) = (model.project(p).unwrap(), back.project(p).unwrap());
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
            }
        }
        assert_eq!(back.components(), 3);
        assert_eq!(back.domains().sizes(), &[10, 8]);
    }

    #[test]
    fn pick_prefers_smaller_on_ties() {
        assert_eq!(pick_components(&COMPONENT_GRID, &[1.0; 6]), 5);
        assert_eq!(pick_components(&[5, 10, 15], &[2.0, 1.0, 1.0]), 10);
    }
}
