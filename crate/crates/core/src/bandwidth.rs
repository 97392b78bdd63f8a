//! Bandwidth selection: exact IMSE minimization, leave-one-curve-out
//! cross-validation, quadratic variation and a pilot plug-in rule.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::TruncatedMse;
use crate::covariance::CovarianceModel;
use crate::design::SamplingDensity;
use crate::error::{Error, Result};
use crate::kernels::{tableau, Kernel};
use crate::locpoly::{
    curve_estimate, factorial, local_weights, moments_from_row, pointwise_fit, smoother_matrix,
    Bandwidth, FitSpec, FunctionalSample, Regression,
};
use crate::quadrature::{linspace, logspace, simpson};

/// Number of log-spaced finite candidates.
pub const LADDER_SIZE: usize = 60;
/// Default x-mesh for the exact integrated risk.
pub const IMSE_MESH: usize = 101;
const GOLDEN_TOL: f64 = 1e-4;
/// Above this many design points the cross-validation score is computed
/// from per-curve smooths instead of a precomputed quadratic form.
const CV_QUADRATIC_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    #[serde(rename = "asym", alias = "asymptotic")]
    Asymptotic,
    Cv,
    Plugin,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Asymptotic => "asym",
            Method::Cv => "cv",
            Method::Plugin => "plugin",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Method::Exact),
            "asym" | "asymptotic" => Ok(Method::Asymptotic),
            "cv" => Ok(Method::Cv),
            "plugin" => Ok(Method::Plugin),
            other => Err(Error::UnknownId(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub h: Bandwidth,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub lower: f64,
    pub upper: f64,
    /// Candidates that could not be fitted.
    pub skipped: Vec<f64>,
    pub at_lower_edge: bool,
    pub at_upper_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthResult {
    pub h: Bandwidth,
    pub method: Method,
    pub curve: Vec<CurvePoint>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
}

/// Smallest bandwidth whose window can hold p+1 design points:
/// max(2/((N-1) tau), (p+1)/(2 (N-1) tau)).
pub fn ladder_floor(n_points: usize, p: usize, tau: f64) -> f64 {
    let gaps = (n_points.max(2) - 1) as f64;
    (2.0 / (gaps * tau)).max((p as f64 + 1.0) / (2.0 * gaps * tau))
}

/// Finite candidates, log-spaced from the floor to 1.
pub fn candidate_ladder(n_points: usize, p: usize, tau: f64) -> Vec<f64> {
    let lo = ladder_floor(n_points, p, tau);
    if lo >= 1.0 {
        return vec![1.0];
    }
    logspace(lo, 1.0, LADDER_SIZE)
}

/// Candidates as bandwidths, with the unbounded one last.
fn with_unbounded(ladder: &[f64]) -> Vec<Bandwidth> {
    ladder
        .iter()
        .map(|&h| Bandwidth::Finite(h))
        .chain(std::iter::once(Bandwidth::Unbounded))
        .collect()
}

/// Index of the minimal score, ties going to the larger bandwidth. Scores
/// are ordered by increasing h with the unbounded bandwidth last.
/// Scores within `tol` of the minimum count as ties.
fn argmin_prefer_large(scores: &[f64], tol: f64) -> Option<usize> {
    let min = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .reduce(f64::min)?;
    scores.iter().rposition(|&s| s.is_finite() && s <= min + tol)
}

fn tie_tolerance(scores: &[f64]) -> f64 {
    let min = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        1e-12 * min.abs()
    } else {
        0.0
    }
}

fn order_key(h: Bandwidth) -> f64 {
    h.value()
}

fn finish(
    method: Method,
    mut curve: Vec<CurvePoint>,
    ladder: &[f64],
    skipped: Vec<f64>,
    tol: Option<f64>,
) -> Result<BandwidthResult> {
    curve.sort_by(|a, b| order_key(a.h).total_cmp(&order_key(b.h)));
    let scores: Vec<f64> = curve.iter().map(|c| c.score).collect();
    let best = argmin_prefer_large(&scores, tol.unwrap_or_else(|| tie_tolerance(&scores))).ok_or(Error::AllCandidatesInfeasible)?;
    let h = curve[best].h;
    let lower = ladder.first().copied().unwrap_or(f64::NAN);
    let upper = ladder.last().copied().unwrap_or(f64::NAN);
    let feasible_low = curve.iter().find(|c| c.score.is_finite()).map(|c| c.h);
    Ok(BandwidthResult {
        h,
        method,
        diagnostics: Diagnostics {
            lower,
            upper,
            skipped,
            at_lower_edge: Some(h) == feasible_low,
            at_upper_edge: h == Bandwidth::Finite(upper),
        },
        curve,
        constants: BTreeMap::new(),
    })
}

/// Exact integrated mean squared error of the estimator at a bandwidth,
/// computed from the linear-smoother representation.
pub struct ImseEvaluator<'a> {
    truth: &'a dyn Regression,
    grid: Vec<f64>,
    sigma: DMatrix<f64>,
    mesh: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
    spec: FitSpec,
    model: &'a CovarianceModel,
}

impl<'a> ImseEvaluator<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        truth: &'a dyn Regression,
        model: &'a CovarianceModel,
        grid: &[f64],
        n: usize,
        nu: usize,
        p: usize,
        kernel: &Kernel,
        weight: &dyn Fn(f64) -> f64,
        mesh_size: usize,
    ) -> Result<Self> {
        let mesh = linspace(0.0, 1.0, mesh_size);
        let weights = mesh.iter().map(|&x| weight(x)).collect();
        Ok(Self {
            truth,
            grid: grid.to_vec(),
            sigma: model.matrix(grid),
            mesh,
            weights,
            n,
            spec: FitSpec::new(p, nu, Bandwidth::Unbounded, kernel.clone())?,
            model,
        })
    }

    pub fn imse(&self, h: Bandwidth) -> Result<f64> {
        let spec = self.spec.with_bandwidth(h);
        let mut vals = Vec::with_capacity(self.mesh.len());
        for (&x, &w) in self.mesh.iter().zip(&self.weights) {
            let row = local_weights(&self.grid, &spec, x)?.derivative_row(spec.nu);
            let support: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
            let fitted: f64 = support.iter().map(|&j| row[j] * self.truth.value(self.grid[j])).sum();
            let bias = fitted - self.truth.derivative(spec.nu, x);
            let mut quad = 0.0;
            for &i in &support {
                let mut inner = 0.0;
                for &j in &support {
                    inner += self.sigma[(i, j)] * row[j];
                }
                quad += row[i] * inner;
            }
            vals.push((bias * bias + quad / self.n as f64) * w);
        }
        Ok(simpson(&self.mesh, &vals))
    }

    /// Pointwise exact moments, for reporting.
    pub fn moments_at(&self, h: Bandwidth, x: f64) -> Result<crate::locpoly::ExactMoments> {
        let spec = self.spec.with_bandwidth(h);
        let row = local_weights(&self.grid, &spec, x)?.derivative_row(spec.nu);
        Ok(moments_from_row(
            self.truth,
            self.model,
            &self.grid,
            row.as_slice(),
            spec.nu,
            x,
            self.n,
        ))
    }
}

/// Minimizes the exact IMSE over the candidate ladder (plus the unbounded
/// bandwidth) and refines by golden-section search in log h inside the
/// best bracket.
#[allow(clippy::too_many_arguments)]
pub fn exact_optimal_bandwidth(
    truth: &dyn Regression,
    model: &CovarianceModel,
    grid: &[f64],
    n: usize,
    nu: usize,
    p: usize,
    kernel: &Kernel,
    weight: &dyn Fn(f64) -> f64,
    mesh_size: usize,
) -> Result<BandwidthResult> {
    let eval = ImseEvaluator::new(truth, model, grid, n, nu, p, kernel, weight, mesh_size)?;
    let ladder = candidate_ladder(grid.len(), p, kernel.tau());
    let candidates = with_unbounded(&ladder);
    let scores: Vec<Result<f64>> = candidates.par_iter().map(|&h| eval.imse(h)).collect();
    let mut curve = Vec::new();
    let mut skipped = Vec::new();
    let mut finite_scores = Vec::with_capacity(candidates.len());
    for (h, s) in candidates.iter().zip(scores) {
        match s {
            Ok(v) => {
                curve.push(CurvePoint { h: *h, score: v });
                finite_scores.push(v);
            }
            Err(_) => {
                skipped.push(h.value());
                finite_scores.push(f64::INFINITY);
            }
        }
    }
    let best = argmin_prefer_large(&finite_scores, tie_tolerance(&finite_scores)).ok_or(Error::AllCandidatesInfeasible)?;
    if best < ladder.len() {
        let lo = if best > 0 && finite_scores[best - 1].is_finite() {
            ladder[best - 1]
        } else {
            ladder[best]
        };
        let hi = if best + 1 < ladder.len() {
            ladder[best + 1]
        } else {
            ladder[best]
        };
        if hi > lo {
            golden_section(lo, hi, |h| eval.imse(Bandwidth::Finite(h)).unwrap_or(f64::INFINITY), &mut curve);
        }
    }
    finish(Method::Exact, curve, &ladder, skipped, None)
}

/// Golden-section search on log h; every evaluation is appended to `curve`.
fn golden_section<F: Fn(f64) -> f64>(lo: f64, hi: f64, f: F, curve: &mut Vec<CurvePoint>) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let record = |t: f64, curve: &mut Vec<CurvePoint>| {
        let h = t.exp();
        let s = f(h);
        curve.push(CurvePoint {
            h: Bandwidth::Finite(h),
            score: s,
        });
        s
    };
    let mut fc = record(c, curve);
    let mut fd = record(d, curve);
    while b.exp() - a.exp() > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = record(c, curve);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = record(d, curve);
        }
    }
}

/// Precomputed cross-validation machinery for a fixed design, curve count
/// and candidate ladder; reused across samples.
pub struct CvPlan {
    n: usize,
    candidates: Vec<Bandwidth>,
    ladder: Vec<f64>,
    skipped: Vec<f64>,
    /// (candidate index, S - I, G'G or None) with G = I + S/(n-1)
    smoothers: Vec<(usize, DMatrix<f64>, Option<DMatrix<f64>>)>,
}

impl CvPlan {
    pub fn new(grid: &[f64], n: usize, p: usize, kernel: &Kernel) -> Result<Self> {
        let ladder = candidate_ladder(grid.len(), p, kernel.tau());
        Self::with_ladder(grid, n, p, kernel, ladder)
    }

    pub fn with_ladder(
        grid: &[f64],
        n: usize,
        p: usize,
        kernel: &Kernel,
        ladder: Vec<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(
                "cross-validation needs at least two curves".into(),
            ));
        }
        let candidates = with_unbounded(&ladder);
        let big_n = grid.len();
        let built: Vec<Option<(usize, DMatrix<f64>, Option<DMatrix<f64>>)>> = candidates
            .par_iter()
            .enumerate()
            .map(|(i, &h)| {
                let spec = FitSpec::new(p, 0, h, kernel.clone()).ok()?;
                let s = smoother_matrix(grid, &spec, grid).ok()?;
                let eye = DMatrix::<f64>::identity(big_n, big_n);
                let gram = (big_n <= CV_QUADRATIC_LIMIT).then(|| {
                    let g = &eye + &s / (n as f64 - 1.0);
                    g.transpose() * g
                });
                Some((i, s - eye, gram))
            })
            .collect();
        let mut smoothers = Vec::new();
        let mut skipped = Vec::new();
        for (i, b) in built.into_iter().enumerate() {
            match b {
                Some(t) => smoothers.push(t),
                None => skipped.push(candidates[i].value()),
            }
        }
        if smoothers.is_empty() {
            return Err(Error::AllCandidatesInfeasible);
        }
        Ok(Self {
            n,
            candidates,
            ladder,
            skipped,
            smoothers,
        })
    }

    pub fn candidates(&self) -> &[Bandwidth] {
        &self.candidates
    }

    /// CV(h) = (1/(nN)) sum_i sum_j (m_hat^(-i)(x_j) - Y_i(x_j))^2 for every
    /// feasible candidate, as (candidate index, score).
    pub fn scores(&self, sample: &FunctionalSample) -> Result<Vec<(usize, f64)>> {
        let y = sample.values();
        if y.nrows() != self.n {
            return Err(Error::InvalidArgument(format!(
                "plan built for {} curves, sample has {}",
                self.n,
                y.nrows()
            )));
        }
        let n = self.n as f64;
        let big_n = y.ncols();
        let ybar = sample.mean_curve();
        let centered = DMatrix::from_fn(self.n, big_n, |i, j| y[(i, j)] - ybar[j]);
        let need_cross = self.smoothers.iter().any(|s| s.2.is_some());
        let cross = need_cross.then(|| centered.transpose() * &centered);
        Ok(self
            .smoothers
            .iter()
            .map(|(i, s_minus_i, gram)| {
                let fit_err = s_minus_i * &ybar;
                let mut total = n * fit_err.norm_squared();
                match (gram, &cross) {
                    (Some(g), Some(c)) => total += g.component_mul(c).sum(),
                    _ => {
                        // residual_i = (S - I) Ybar - G D_i
                        let sd = &centered * s_minus_i.transpose();
                        for r in 0..self.n {
                            let d = centered.row(r);
                            let gd = d + (sd.row(r) + d) / (n - 1.0);
                            total += gd.norm_squared();
                        }
                    }
                }
                (*i, total / (n * big_n as f64))
            })
            .collect())
    }

    pub fn select(&self, sample: &FunctionalSample) -> Result<BandwidthResult> {
        let curve = self
            .scores(sample)?
            .into_iter()
            .map(|(i, score)| CurvePoint {
                h: self.candidates[i],
                score,
            })
            .collect();
        finish(Method::Cv, curve, &self.ladder, self.skipped.clone(), Some(cv_tolerance(sample)))
    }

    /// Index into `candidates` of the selected bandwidth.
    pub fn select_index(&self, sample: &FunctionalSample) -> Result<usize> {
        let scores = self.scores(sample)?;
        let raw: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let best = argmin_prefer_large(&raw, cv_tolerance(sample)).ok_or(Error::AllCandidatesInfeasible)?;
        Ok(scores[best].0)
    }
}

/// Ties in the CV score are judged relative to the mean square of the data,
/// so that round-off on an exactly reproducible sample does not decide.
fn cv_tolerance(sample: &FunctionalSample) -> f64 {
    let y = sample.values();
    1e-12 * y.norm_squared() / y.len() as f64
}

/// Leave-one-curve-out cross-validation of the local fit of order p to the
/// regression function itself.
pub fn cross_validate(sample: &FunctionalSample, p: usize, kernel: &Kernel) -> Result<BandwidthResult> {
    CvPlan::new(sample.grid().points(), sample.n_curves(), p, kernel)?.select(sample)
}

/// The cross-validation score by literally refitting without each curve.
pub fn cv_score_naive(sample: &FunctionalSample, p: usize, kernel: &Kernel, h: Bandwidth) -> Result<f64> {
    let n = sample.n_curves();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "cross-validation needs at least two curves".into(),
        ));
    }
    let y = sample.values();
    let grid = sample.grid();
    let spec = FitSpec::new(p, 0, h, kernel.clone())?;
    let mut total = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let rest = FunctionalSample::new(grid.clone(), y.select_rows(keep.iter()))?;
        for (j, &x) in grid.points().iter().enumerate() {
            let fit = pointwise_fit(&rest, &spec, x)?;
            total += (fit.estimate - y[(i, j)]).powi(2);
        }
    }
    Ok(total / (n * grid.len()) as f64)
}

/// V_N = (1/n) sum_i sum_{j>=2} (Y_i(x_j) - Y_i(x_{j-1}))^2 w(x_j), an
/// estimate of the weighted integral of alpha.
pub fn quadratic_variation(sample: &FunctionalSample, weight: &dyn Fn(f64) -> f64) -> f64 {
    let y = sample.values();
    let pts = sample.grid().points();
    let w: Vec<f64> = pts.iter().map(|&x| weight(x)).collect();
    let mut total = 0.0;
    for i in 0..y.nrows() {
        for j in 1..pts.len() {
            total += (y[(i, j)] - y[(i, j - 1)]).powi(2) * w[j];
        }
    }
    total / y.nrows() as f64
}

/// Derivative order whose squared integral drives the dominant bias.
pub fn bias_derivative_order(p: usize, nu: usize) -> usize {
    if (p - nu) % 2 == 1 {
        p + 1
    } else {
        p + 2
    }
}

/// Plug-in inputs estimated from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginEstimates {
    /// Weighted integral of alpha, from the quadratic variation.
    pub int_alpha: f64,
    /// Weighted integral of the squared bias-driving derivative.
    pub int_curvature: f64,
    pub derivative_order: usize,
    pub pilot_order: usize,
    pub pilot_bandwidth: f64,
}

/// Pilot estimate of the integrated squared derivative of order d: a local
/// fit of order min(d + 2, 4) with bandwidth N^(-1/(2d+3)), evaluated on a
/// 201-point mesh.
pub fn pilot_curvature(
    sample: &FunctionalSample,
    d: usize,
    kernel: &Kernel,
    weight: &dyn Fn(f64) -> f64,
) -> Result<(f64, usize, f64)> {
    let order = (d + 2).min(crate::kernels::MAX_ORDER).max(d);
    let big_n = sample.grid().len() as f64;
    let h = big_n.powf(-1.0 / (2.0 * d as f64 + 3.0));
    let spec = FitSpec::new(order, d, Bandwidth::Finite(h), kernel.clone())?;
    let mesh = linspace(0.0, 1.0, crate::asymptotics::GLOBAL_MESH);
    let est = curve_estimate(sample, &spec, &mesh)?;
    let vals: Vec<f64> = est.iter().map(|&(x, v)| v * v * weight(x)).collect();
    Ok((simpson(&mesh, &vals), order, h))
}

/// Global optimal bandwidth from estimated constants, uniform design.
pub fn plugin_from_estimates(kernel: &Kernel, est: &PluginEstimates, n: usize, nu: usize, p: usize) -> Result<f64> {
    let tab = tableau(kernel, p)?;
    let d = est.derivative_order;
    let fnu = factorial(nu);
    let form = if d == p + 1 {
        tab.bias_first(nu)
    } else {
        tab.bias_tilde(nu)
    };
    let coef = fnu * form / factorial(d);
    let power = 2 * (d - nu) as i32;
    TruncatedMse {
        bias_sq: coef * coef * est.int_curvature,
        bias_power: power,
        variance_terms: vec![(-fnu * fnu * est.int_alpha * tab.var_rough(nu), 1 - 2 * nu as i32)],
        n: n as f64,
    }
    .minimizer()
}

/// Plug-in bandwidth: quadratic variation for the integrated alpha and a
/// pilot local polynomial for the integrated squared derivative.
pub fn plugin_bandwidth(
    sample: &FunctionalSample,
    nu: usize,
    p: usize,
    kernel: &Kernel,
    weight: &dyn Fn(f64) -> f64,
) -> Result<BandwidthResult> {
    if sample.n_curves() < 2 {
        return Err(Error::InvalidArgument("plug-in needs at least two curves".into()));
    }
    if sample.grid().len() < p + 3 {
        return Err(Error::InvalidArgument(format!(
            "plug-in needs at least {} design points",
            p + 3
        )));
    }
    if nu > 1 || p > 2 || nu > p {
        return Err(Error::InvalidArgument(format!(
            "plug-in is implemented for nu in {{0, 1}}, p <= 2 (got nu = {nu}, p = {p})"
        )));
    }
    let d = bias_derivative_order(p, nu);
    let int_alpha = quadratic_variation(sample, weight);
    let (int_curvature, pilot_order, pilot_bandwidth) = pilot_curvature(sample, d, kernel, weight)?;
    let est = PluginEstimates {
        int_alpha,
        int_curvature,
        derivative_order: d,
        pilot_order,
        pilot_bandwidth,
    };
    let h = plugin_from_estimates(kernel, &est, sample.n_curves(), nu, p)?;
    let mut constants = BTreeMap::new();
    constants.insert("int_alpha".into(), int_alpha);
    constants.insert("int_curvature".into(), int_curvature);
    constants.insert("derivative_order".into(), d as f64);
    constants.insert("pilot_order".into(), pilot_order as f64);
    constants.insert("pilot_bandwidth".into(), pilot_bandwidth);
    Ok(BandwidthResult {
        h: Bandwidth::Finite(h),
        method: Method::Plugin,
        curve: Vec::new(),
        diagnostics: Diagnostics::default(),
        constants,
    })
}

/// The global asymptotic bandwidth as a result record.
#[allow(clippy::too_many_arguments)]
pub fn asymptotic_bandwidth(
    truth: &dyn Regression,
    model: &CovarianceModel,
    density: &SamplingDensity,
    n: usize,
    nu: usize,
    p: usize,
    kernel: &Kernel,
    weight: &dyn Fn(f64) -> f64,
) -> Result<BandwidthResult> {
    let tab = tableau(kernel, p)?;
    let g = crate::asymptotics::global_constants(
        &tab,
        model,
        truth,
        density,
        weight,
        n,
        nu,
        crate::asymptotics::GLOBAL_MESH,
    )?;
    let h = g.mse.minimizer()?;
    let mut constants = BTreeMap::new();
    constants.insert("int_bias_sq".into(), g.bias_sq);
    constants.insert("bias_power".into(), g.bias_power as f64);
    constants.insert("roughness".into(), g.roughness);
    for (k, (c, s)) in g.mse.variance_terms.iter().enumerate() {
        constants.insert(format!("variance_coef_{k}"), *c);
        constants.insert(format!("variance_power_{k}"), *s as f64);
    }
    Ok(BandwidthResult {
        h: Bandwidth::Finite(h),
        method: Method::Asymptotic,
        curve: Vec::new(),
        diagnostics: Diagnostics::default(),
        constants,
    })
}
