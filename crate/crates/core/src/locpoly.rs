//! Local polynomial fitting on averaged curves, linear-smoother weight rows
//! and exact finite-sample moments.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::covariance::CovarianceModel;
use crate::design::DesignGrid;
use crate::error::{Error, Result};
use crate::kernels::{symmetric_condition, Kernel};

const RANK_CONDITION: f64 = 1e12;

/// A smoothing bandwidth; `Unbounded` is the h -> infinity limit, an
/// unweighted global polynomial fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Finite(f64),
    Unbounded,
}

impl Bandwidth {
    pub fn value(self) -> f64 {
        match self {
            Bandwidth::Finite(h) => h,
            Bandwidth::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Bandwidth::Unbounded)
    }

    pub fn from_value(h: f64) -> Result<Self> {
        if h == f64::INFINITY {
            Ok(Bandwidth::Unbounded)
        } else if h.is_finite() && h > 0.0 {
            Ok(Bandwidth::Finite(h))
        } else {
            Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")))
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Finite(h) => write!(f, "{h}"),
            Bandwidth::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" | "unbounded" => Ok(Bandwidth::Unbounded),
            t => Bandwidth::from_value(
                t.parse()
                    .map_err(|_| Error::Parse(format!("bad bandwidth `{s}`")))?,
            ),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Finite(h) => s.serialize_f64(*h),
            Bandwidth::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(h) => Bandwidth::from_value(h),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// A regression function with derivatives.
pub trait Regression: Send + Sync {
    fn derivative(&self, order: usize, x: f64) -> f64;

    fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }
}

/// sum_k coef[k] x^k
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Regression for Polynomial {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.0.iter().enumerate().skip(order).rev() {
            let falling: f64 = ((k - order + 1)..=k).map(|i| i as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }
}

/// Fit configuration: order p, derivative nu, bandwidth and kernel.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub p: usize,
    pub nu: usize,
    pub h: Bandwidth,
    pub kernel: Kernel,
}

impl FitSpec {
    pub fn new(p: usize, nu: usize, h: Bandwidth, kernel: Kernel) -> Result<Self> {
        if p > crate::kernels::MAX_ORDER {
            return Err(Error::InvalidArgument(format!("order p = {p} is not supported")));
        }
        if nu > p {
            return Err(Error::InvalidArgument(format!("nu = {nu} exceeds p = {p}")));
        }
        if let Bandwidth::Finite(v) = h {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {v}")));
            }
        }
        Ok(Self { p, nu, h, kernel })
    }

    pub fn with_bandwidth(&self, h: Bandwidth) -> Self {
        Self { h, ..self.clone() }
    }
}

/// n curves observed on a common grid.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    grid: DesignGrid,
    /// n x N
    values: DMatrix<f64>,
}

impl FunctionalSample {
    pub fn new(grid: DesignGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidArgument("a sample needs at least one curve".into()));
        }
        if values.ncols() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "curves have {} values but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("curve values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_curves(&self) -> usize {
        self.values.nrows()
    }

    /// Pointwise average over curves.
    pub fn mean_curve(&self) -> DVector<f64> {
        let n = self.values.nrows() as f64;
        DVector::from_fn(self.values.ncols(), |j, _| self.values.column(j).sum() / n)
    }

    /// Reads the curve CSV layout: header `x,<x_1>,...,<x_N>`, then one
    /// `<label>,<y_1>,...,<y_N>` row per curve.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("empty curve file".into()))??;
        if header.get(0) != Some("x") {
            return Err(Error::Parse("curve file must start with an `x` header".into()));
        }
        let points = header
            .iter()
            .skip(1)
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad grid value `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let grid = DesignGrid::new(points, "file")?;
        let mut rows = Vec::new();
        for rec in records {
            let rec = rec?;
            if rec.len() != grid.len() + 1 {
                return Err(Error::Parse(format!(
                    "curve `{}` has {} values, expected {}",
                    rec.get(0).unwrap_or(""),
                    rec.len().saturating_sub(1),
                    grid.len()
                )));
            }
            for t in rec.iter().skip(1) {
                rows.push(t.parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{t}`")))?);
            }
        }
        let n = rows.len() / grid.len();
        let values = DMatrix::from_row_slice(n, grid.len(), &rows);
        Self::new(grid, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x".to_string()];
        header.extend(self.grid.points().iter().map(|x| x.to_string()));
        w.write_record(&header)?;
        for i in 0..self.values.nrows() {
            let mut row = vec![format!("curve_{}", i + 1)];
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coefficient weights at one evaluation point: `coef_weights` is
/// (p+1) x N with beta_hat = coef_weights * Ybar, in the original scale.
#[derive(Debug, Clone)]
pub struct LocalWeights {
    pub x: f64,
    pub coef_weights: DMatrix<f64>,
    pub effective_points: usize,
}

impl LocalWeights {
    /// The weight row of the nu-th derivative estimate, nu! e_nu' L.
    pub fn derivative_row(&self, nu: usize) -> DVector<f64> {
        let fact = factorial(nu);
        self.coef_weights.row(nu).transpose() * fact
    }
}

/// Result of a fit at one point.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub x: f64,
    /// beta_hat_0 .. beta_hat_p; beta_hat_k estimates m^(k)(x)/k!.
    pub coefficients: Vec<f64>,
    /// w with m_hat_nu(x) = sum_j w_j Ybar_j
    pub weights: Vec<f64>,
    pub effective_points: usize,
    pub estimate: f64,
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Solves the weighted least squares normal equations at x for a generic
/// response, returning the coefficient weight matrix.
pub fn local_weights(grid: &[f64], spec: &FitSpec, x: f64) -> Result<LocalWeights> {
    let p = spec.p;
    let dim = p + 1;
    let n = grid.len();
    let (scale, tau) = match spec.h {
        Bandwidth::Finite(h) => (h, spec.kernel.tau()),
        Bandwidth::Unbounded => (1.0, f64::INFINITY),
    };
    let mut kw = vec![0.0; n];
    let mut effective = 0;
    for (j, &xj) in grid.iter().enumerate() {
        let u = (xj - x) / scale;
        let w = if tau.is_infinite() {
            1.0
        } else if u.abs() <= tau {
            spec.kernel.eval(u)
        } else {
            0.0
        };
        if w > 0.0 {
            kw[j] = w;
            effective += 1;
        }
    }
    if effective < dim {
        return Err(Error::BandwidthTooSmall {
            in_window: effective,
            needed: dim,
        });
    }
    let mut normal = DMatrix::<f64>::zeros(dim, dim);
    let mut design = DMatrix::<f64>::zeros(dim, n);
    let mut powers = vec![0.0; 2 * p + 1];
    for (j, &xj) in grid.iter().enumerate() {
        let w = kw[j];
        if w == 0.0 {
            continue;
        }
        let u = (xj - x) / scale;
        let mut up = 1.0;
        for slot in powers.iter_mut() {
            *slot = up;
            up *= u;
        }
        for k in 0..dim {
            design[(k, j)] = w * powers[k];
            for l in 0..dim {
                normal[(k, l)] += w * powers[k + l];
            }
        }
    }
    let condition = symmetric_condition(&normal);
    if !(condition.is_finite() && condition <= RANK_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }
    let chol = normal
        .cholesky()
        .ok_or(Error::RankDeficient { condition })?;
    let mut coef = chol.solve(&design);
    for k in 1..dim {
        let r = scale.powi(-(k as i32));
        coef.row_mut(k).scale_mut(r);
    }
    Ok(LocalWeights {
        x,
        coef_weights: coef,
        effective_points: effective,
    })
}

/// Local polynomial fit of the averaged curve at x.
pub fn pointwise_fit(sample: &FunctionalSample, spec: &FitSpec, x: f64) -> Result<LocalFit> {
    let lw = local_weights(sample.grid().points(), spec, x)?;
    let ybar = sample.mean_curve();
    let beta = &lw.coef_weights * &ybar;
    let row = lw.derivative_row(spec.nu);
    let estimate = row.dot(&ybar);
    Ok(LocalFit {
        x,
        coefficients: beta.iter().copied().collect(),
        weights: row.iter().copied().collect(),
        effective_points: lw.effective_points,
        estimate,
    })
}

/// Rows are the derivative weight rows at each evaluation point, so the
/// estimate on the mesh is `matrix * Ybar`.
pub fn smoother_matrix(grid: &[f64], spec: &FitSpec, eval: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(eval.len(), grid.len());
    for (i, &x) in eval.iter().enumerate() {
        let lw = local_weights(grid, spec, x).map_err(|e| Error::AtPoint {
            x,
            source: Box::new(e),
        })?;
        m.row_mut(i).copy_from(&lw.derivative_row(spec.nu).transpose());
    }
    Ok(m)
}

/// The estimate of m^(nu) at every point of `eval`.
pub fn curve_estimate(
    sample: &FunctionalSample,
    spec: &FitSpec,
    eval: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let s = smoother_matrix(sample.grid().points(), spec, eval)?;
    let est = s * sample.mean_curve();
    Ok(eval.iter().copied().zip(est.iter().copied()).collect())
}

/// Exact finite-sample bias and variance of the estimate at x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMoments {
    pub bias: f64,
    pub variance: f64,
}

impl ExactMoments {
    pub fn mse(&self) -> f64 {
        self.bias * self.bias + self.variance
    }
}

/// Bias sum_j w_j m(x_j) - m^(nu)(x) and variance w' Sigma w / n.
pub fn exact_moments(
    truth: &dyn Regression,
    model: &CovarianceModel,
    grid: &[f64],
    spec: &FitSpec,
    x: f64,
    n: usize,
) -> Result<ExactMoments> {
    let lw = local_weights(grid, spec, x)?;
    let row = lw.derivative_row(spec.nu);
    Ok(moments_from_row(truth, model, grid, row.as_slice(), spec.nu, x, n))
}

pub(crate) fn moments_from_row(
    truth: &dyn Regression,
    model: &CovarianceModel,
    grid: &[f64],
    row: &[f64],
    nu: usize,
    x: f64,
    n: usize,
) -> ExactMoments {
    let support: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
    let fitted: f64 = support.iter().map(|&j| row[j] * truth.value(grid[j])).sum();
    let bias = fitted - truth.derivative(nu, x);
    let mut quad = 0.0;
    for (a, &i) in support.iter().enumerate() {
        let mut inner = 0.5 * row[i] * model.eval(grid[i], grid[i]);
        for &j in &support[..a] {
            inner += row[j] * model.eval(grid[i], grid[j]);
        }
        quad += 2.0 * row[i] * inner;
    }
    ExactMoments {
        bias,
        variance: quad / n as f64,
    }
}
