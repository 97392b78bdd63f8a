//! Closed-form bias and variance expansions, optimal bandwidths and limit
//! distribution parameters of the local polynomial estimator.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariance::{CovarianceModel, DiagonalPartials, Smoothness};
use crate::design::SamplingDensity;
use crate::error::{Error, Result};
use crate::kernels::KernelTableau;
use crate::locpoly::{factorial, FitSpec, Regression};
use crate::quadrature::simpson_fn;

/// Points used by the composite Simpson rule in the integrated formulas.
pub const GLOBAL_MESH: usize = 201;

/// One expansion term: coefficient * h^h_power * n^n_power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub coefficient: f64,
    pub h_power: i32,
    pub n_power: i32,
}

impl Term {
    fn new(coefficient: f64, h_power: i32, n_power: i32) -> Self {
        Self {
            coefficient,
            h_power,
            n_power,
        }
    }

    pub fn value(&self, h: f64, n: f64) -> f64 {
        if self.coefficient == 0.0 {
            return 0.0;
        }
        self.coefficient * h.powi(self.h_power) * n.powi(self.n_power)
    }
}

/// Which variance expansion applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Rough covariance: second term driven by the derivative jump alpha.
    Rough,
    /// Smooth covariance, even derivative order.
    RegularEven,
    /// Smooth covariance, odd derivative order.
    RegularOdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expansion {
    pub leading: Term,
    pub second: Term,
}

impl Expansion {
    pub fn total(&self, h: f64, n: f64) -> f64 {
        self.leading.value(h, n) + self.second.value(h, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticMoments {
    pub bias: Expansion,
    pub variance: Expansion,
    pub route: Route,
}

/// Second-order bias coefficient g_{p,nu}(x).
pub fn g_coefficient(
    tab: &KernelTableau,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    nu: usize,
) -> f64 {
    let p = tab.p;
    let tilde = tab.bias_tilde(nu);
    let design = tab.bias_design(nu);
    let smooth = m.derivative(p + 2, x) / factorial(p + 2) * tilde;
    let slope = f.derivative(x);
    if slope == 0.0 {
        return smooth;
    }
    smooth + m.derivative(p + 1, x) / factorial(p + 1) * slope / f.pdf(x) * (tilde - design)
}

/// Bias expansion: leading term of order h^(p+1-nu), second of order
/// h^(p+2-nu). Coefficients that vanish by symmetry are exact zeros.
pub fn asym_bias(
    tab: &KernelTableau,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    nu: usize,
) -> Expansion {
    let p = tab.p;
    let fnu = factorial(nu);
    let lead = if (p - nu).is_multiple_of(2) {
        0.0
    } else {
        fnu * m.derivative(p + 1, x) / factorial(p + 1) * tab.bias_first(nu)
    };
    let second = if (p - nu) % 2 == 1 {
        0.0
    } else {
        fnu * g_coefficient(tab, m, f, x, nu)
    };
    Expansion {
        leading: Term::new(lead, (p + 1 - nu) as i32, 0),
        second: Term::new(second, (p + 2 - nu) as i32, 0),
    }
}

/// Variance expansion for a rough covariance: leading order 1/(n h^(2nu)),
/// second order 1/(n h^(2nu-1)) driven by alpha(x).
pub fn asym_variance(
    tab: &KernelTableau,
    model: &CovarianceModel,
    x: f64,
    nu: usize,
) -> Result<Expansion> {
    let alpha = model.alpha(x)?;
    let f2 = factorial(nu).powi(2);
    let lead = if nu % 2 == 1 {
        0.0
    } else {
        f2 * model.variance(x) * tab.var_leading(nu)
    };
    let second = if alpha == 0.0 {
        0.0
    } else {
        -f2 * alpha * tab.var_rough(nu)
    };
    Ok(Expansion {
        leading: Term::new(lead, -2 * nu as i32, -1),
        second: Term::new(second, 1 - 2 * nu as i32, -1),
    })
}

/// Variance expansion for a smooth covariance on an equispaced design.
pub fn asym_variance_regular(
    tab: &KernelTableau,
    model: &CovarianceModel,
    x: f64,
    nu: usize,
) -> Result<Expansion> {
    let d = model.diagonal_partials(x)?;
    let f2 = factorial(nu).powi(2);
    let nu_i = nu as i32;
    if nu.is_multiple_of(2) {
        Ok(Expansion {
            leading: Term::new(f2 * model.variance(x) * tab.var_leading(nu), -2 * nu_i, -1),
            second: Term::new(f2 * d.rho02 * tab.sandwich(nu, &tab.a1), 2 - 2 * nu_i, -1),
        })
    } else {
        let rho13 = d.rho13.ok_or_else(|| {
            Error::NotAvailable(format!("fourth-order diagonal partial of `{}`", model.id()))
        })?;
        Ok(Expansion {
            leading: Term::new(f2 * d.rho11 * tab.sandwich(nu, &tab.a2), 2 - 2 * nu_i, -1),
            second: Term::new(f2 * rho13 * tab.sandwich(nu, &tab.a3), 4 - 2 * nu_i, -1),
        })
    }
}

/// Full asymptotic moments, choosing the variance route from the
/// covariance regularity at x.
pub fn asym_moments(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    nu: usize,
) -> Result<AsymptoticMoments> {
    let route = select_route(model, f, x, nu)?;
    let variance = match route {
        Route::Rough => asym_variance(tab, model, x, nu)?,
        _ => asym_variance_regular(tab, model, x, nu)?,
    };
    Ok(AsymptoticMoments {
        bias: asym_bias(tab, m, f, x, nu),
        variance,
        route,
    })
}

fn select_route(model: &CovarianceModel, f: &SamplingDensity, x: f64, nu: usize) -> Result<Route> {
    let alpha = model.alpha(x)?;
    if alpha > 0.0 {
        return Ok(Route::Rough);
    }
    let needed = if nu.is_multiple_of(2) {
        Smoothness::C2Diagonal
    } else {
        Smoothness::C4Diagonal
    };
    if model.smoothness() < needed || !f.is_uniform() {
        return Err(Error::NotAvailable(format!(
            "higher-order variance expansion for `{}`",
            model.id()
        )));
    }
    Ok(if nu.is_multiple_of(2) {
        Route::RegularEven
    } else {
        Route::RegularOdd
    })
}

/// Truncated asymptotic mean squared error
/// bias_sq * h^bias_power + sum_i c_i h^(s_i) / n.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedMse {
    pub bias_sq: f64,
    pub bias_power: i32,
    pub variance_terms: Vec<(f64, i32)>,
    pub n: f64,
}

impl TruncatedMse {
    pub fn eval(&self, h: f64) -> f64 {
        self.bias_sq * h.powi(self.bias_power)
            + self
                .variance_terms
                .iter()
                .map(|&(c, s)| if c == 0.0 { 0.0 } else { c * h.powi(s) })
                .sum::<f64>()
                / self.n
    }

    pub fn derivative(&self, h: f64) -> f64 {
        let b = self.bias_power as f64;
        b * self.bias_sq * h.powi(self.bias_power - 1)
            + self
                .variance_terms
                .iter()
                .filter(|&&(c, s)| c != 0.0 && s != 0)
                .map(|&(c, s)| s as f64 * c * h.powi(s - 1))
                .sum::<f64>()
                / self.n
    }

    /// Stationary point h^(2r - s) = -s c / (2r b^2 n) of the single
    /// h-dependent variance term.
    pub fn minimizer(&self) -> Result<f64> {
        let varying: Vec<(f64, i32)> = self
            .variance_terms
            .iter()
            .copied()
            .filter(|&(c, s)| s != 0 && c != 0.0)
            .collect();
        let &[(c, s)] = varying.as_slice() else {
            return Err(Error::NotOptimizable(
                "variance has no single bandwidth-dependent term".into(),
            ));
        };
        let num = -(s as f64) * c;
        let den = self.bias_power as f64 * self.bias_sq * self.n;
        if !(num > 0.0 && den > 0.0) || self.bias_power == s {
            return Err(Error::NotOptimizable(format!(
                "bias and variance terms do not trade off (c = {c:.4e}, s = {s})"
            )));
        }
        Ok((num / den).powf(1.0 / (self.bias_power - s) as f64))
    }
}

/// Dominant bias coefficient and its order in h.
fn dominant_bias(
    tab: &KernelTableau,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    nu: usize,
) -> Result<(f64, i32)> {
    let b = asym_bias(tab, m, f, x, nu);
    let p = tab.p;
    if (p - nu) % 2 == 1 {
        if m.derivative(p + 1, x) == 0.0 {
            return Err(Error::ZeroCurvature(x));
        }
        Ok((b.leading.coefficient, b.leading.h_power))
    } else {
        if b.second.coefficient == 0.0 {
            if nu == 0 && !f.is_uniform() && m.derivative(p + 1, x) != 0.0 {
                return Err(Error::OptimalDensityInUse);
            }
            return Err(Error::ZeroCurvature(x));
        }
        Ok((b.second.coefficient, b.second.h_power))
    }
}

fn check_cases(tab: &KernelTableau, nu: usize) -> Result<()> {
    if nu > 1 || tab.p > 2 || nu > tab.p {
        return Err(Error::InvalidArgument(format!(
            "optimal bandwidths are implemented for nu in {{0, 1}}, p <= 2 (got nu = {nu}, p = {})",
            tab.p
        )));
    }
    Ok(())
}

/// Truncated MSE at x for a rough covariance.
pub fn truncated_mse_local(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    n: usize,
    nu: usize,
) -> Result<TruncatedMse> {
    check_cases(tab, nu)?;
    let alpha = model.alpha(x)?;
    if alpha == 0.0 {
        return Err(Error::AlphaZero);
    }
    let (b, power) = dominant_bias(tab, m, f, x, nu)?;
    let v = asym_variance(tab, model, x, nu)?;
    Ok(TruncatedMse {
        bias_sq: b * b,
        bias_power: 2 * power,
        variance_terms: vec![
            (v.leading.coefficient, v.leading.h_power),
            (v.second.coefficient, v.second.h_power),
        ],
        n: n as f64,
    })
}

/// Pointwise asymptotically optimal bandwidth for a rough covariance.
pub fn h_opt_local(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    f: &SamplingDensity,
    x: f64,
    n: usize,
    nu: usize,
) -> Result<f64> {
    truncated_mse_local(tab, model, m, f, x, n, nu)?.minimizer()
}

/// Truncated MSE at x for a smooth covariance on an equispaced design.
pub fn truncated_mse_regular(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    x: f64,
    n: usize,
    nu: usize,
) -> Result<TruncatedMse> {
    check_cases(tab, nu)?;
    let f = SamplingDensity::uniform();
    let (b, power) = dominant_bias(tab, m, &f, x, nu)?;
    let v = asym_variance_regular(tab, model, x, nu)?;
    Ok(TruncatedMse {
        bias_sq: b * b,
        bias_power: 2 * power,
        variance_terms: vec![
            (v.leading.coefficient, v.leading.h_power),
            (v.second.coefficient, v.second.h_power),
        ],
        n: n as f64,
    })
}

/// Pointwise optimal bandwidth when alpha(x) = 0 and the covariance is
/// smooth at the diagonal.
pub fn h_opt_regular(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    x: f64,
    n: usize,
    nu: usize,
) -> Result<f64> {
    truncated_mse_regular(tab, model, m, x, n, nu)?.minimizer()
}

/// Integrated bias and variance constants used by the global bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalConstants {
    /// Weighted integral of the squared dominant bias coefficient.
    pub bias_sq: f64,
    pub bias_power: i32,
    /// Weighted integral of alpha (rough route) or of the second-order
    /// variance coefficient's covariance factor (smooth route).
    pub roughness: f64,
    pub mse: TruncatedMse,
    pub route: Route,
}

/// Weighted-integral version of the truncated MSE over [0, 1].
pub fn global_constants(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    f: &SamplingDensity,
    weight: &dyn Fn(f64) -> f64,
    n: usize,
    nu: usize,
    mesh: usize,
) -> Result<GlobalConstants> {
    check_cases(tab, nu)?;
    let p = tab.p;
    let power = if (p - nu) % 2 == 1 { p + 1 - nu } else { p + 2 - nu } as i32;
    let bias_sq = simpson_fn(
        |x| {
            let b = asym_bias(tab, m, f, x, nu);
            let c = b.leading.coefficient + b.second.coefficient;
            c * c * weight(x)
        },
        0.0,
        1.0,
        mesh,
    );
    if bias_sq == 0.0 {
        return Err(Error::ZeroCurvature(0.5));
    }
    let route = select_route(model, f, 0.5, nu)?;
    let f2 = factorial(nu).powi(2);
    let (roughness, terms) = match route {
        Route::Rough => {
            model.alpha(0.5)?;
            let int_alpha = simpson_fn(
                |x| model.alpha(x).unwrap_or(f64::NAN) * weight(x),
                0.0,
                1.0,
                mesh,
            );
            if int_alpha == 0.0 {
                return Err(Error::AlphaZero);
            }
            let lead = if nu % 2 == 1 {
                0.0
            } else {
                f2 * tab.var_leading(nu) * simpson_fn(|x| model.variance(x) * weight(x), 0.0, 1.0, mesh)
            };
            (
                int_alpha,
                vec![
                    (lead, -2 * nu as i32),
                    (-f2 * int_alpha * tab.var_rough(nu), 1 - 2 * nu as i32),
                ],
            )
        }
        Route::RegularEven | Route::RegularOdd => {
            let probe = model.diagonal_partials(0.5)?;
            if route == Route::RegularOdd && probe.rho13.is_none() {
                return Err(Error::NotAvailable(format!(
                    "fourth-order diagonal partial of `{}`",
                    model.id()
                )));
            }
            let integrate = |pick: fn(&DiagonalPartials) -> f64| {
                simpson_fn(
                    |x| {
                        model
                            .diagonal_partials(x)
                            .map(|d| pick(&d))
                            .unwrap_or(f64::NAN)
                            * weight(x)
                    },
                    0.0,
                    1.0,
                    mesh,
                )
            };
            let terms = if route == Route::RegularEven {
                let r02 = integrate(|d| d.rho02);
                vec![
                    (
                        f2 * tab.var_leading(nu)
                            * simpson_fn(|x| model.variance(x) * weight(x), 0.0, 1.0, mesh),
                        -2 * nu as i32,
                    ),
                    (f2 * r02 * tab.sandwich(nu, &tab.a1), 2 - 2 * nu as i32),
                ]
            } else {
                let r11 = integrate(|d| d.rho11);
                let r13 = integrate(|d| d.rho13.unwrap_or(f64::NAN));
                vec![
                    (f2 * r11 * tab.sandwich(nu, &tab.a2), 2 - 2 * nu as i32),
                    (f2 * r13 * tab.sandwich(nu, &tab.a3), 4 - 2 * nu as i32),
                ]
            };
            (terms[1].0, terms)
        }
    };
    Ok(GlobalConstants {
        bias_sq,
        bias_power: 2 * power,
        roughness,
        mse: TruncatedMse {
            bias_sq,
            bias_power: 2 * power,
            variance_terms: terms,
            n: n as f64,
        },
        route,
    })
}

/// Global asymptotically optimal bandwidth: the pointwise formula with
/// alpha and the squared bias coefficient replaced by weighted integrals
/// (composite Simpson on 201 points).
pub fn h_opt_global(
    tab: &KernelTableau,
    model: &CovarianceModel,
    m: &dyn Regression,
    f: &SamplingDensity,
    weight: &dyn Fn(f64) -> f64,
    n: usize,
    nu: usize,
) -> Result<f64> {
    global_constants(tab, model, m, f, weight, n, nu, GLOBAL_MESH)?
        .mse
        .minimizer()
}

/// Which limit regime applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalityCase {
    EvenDerivative,
    OddRough,
    OddSmooth,
}

/// sqrt(n h^scaling) (m_hat - m) -> N(0, sigma2) provided
/// n h^condition_exponent -> 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityParams {
    pub scaling: i32,
    pub sigma2: f64,
    pub condition_exponent: i32,
    pub case: NormalityCase,
}

impl NormalityParams {
    pub fn condition_value(&self, n: usize, h: f64) -> f64 {
        n as f64 * h.powi(self.condition_exponent)
    }

    /// Finite-sample reading of the decay condition: n h^e <= 1.
    pub fn condition_holds(&self, n: usize, h: f64) -> bool {
        self.condition_value(n, h) <= 1.0
    }

    pub fn check(&self, n: usize, h: f64) -> Result<()> {
        if self.condition_holds(n, h) {
            Ok(())
        } else {
            Err(Error::ConditionViolated {
                exponent: self.condition_exponent,
                value: self.condition_value(n, h),
            })
        }
    }
}

pub fn normality_params(
    tab: &KernelTableau,
    model: &CovarianceModel,
    x: f64,
    nu: usize,
) -> Result<NormalityParams> {
    let p = tab.p as i32;
    let nu_i = nu as i32;
    let p_even = p % 2 == 0;
    let f2 = factorial(nu).powi(2);
    if nu.is_multiple_of(2) {
        return Ok(NormalityParams {
            scaling: 2 * nu_i,
            sigma2: f2 * model.variance(x) * tab.var_leading(nu),
            condition_exponent: if p_even { 2 * p + 4 } else { 2 * p + 2 },
            case: NormalityCase::EvenDerivative,
        });
    }
    let alpha = model.alpha(x)?;
    if alpha > 0.0 {
        Ok(NormalityParams {
            scaling: 2 * nu_i - 1,
            sigma2: f2 * alpha * tab.var_rough(nu).abs(),
            condition_exponent: if p_even { 2 * p + 1 } else { 2 * p + 3 },
            case: NormalityCase::OddRough,
        })
    } else {
        if model.smoothness() < Smoothness::C4Diagonal {
            return Err(Error::NotAvailable(format!(
                "fourth-order smoothness of `{}`",
                model.id()
            )));
        }
        let d = model.diagonal_partials(x)?;
        Ok(NormalityParams {
            scaling: 2 * nu_i - 2,
            sigma2: f2 * d.rho11 * tab.sandwich(nu, &tab.a2),
            condition_exponent: if p_even { 2 * p } else { 2 * p + 2 },
            case: NormalityCase::OddSmooth,
        })
    }
}

/// Finite-sample cross-covariance matrix of the local design,
/// H^-1 (N^-2 X' W Sigma W X) H^-1 with H = diag(h^k), next to its
/// small-h expansion phi S* + h (phi+ - phi-) A + h (phi+ + phi-) B.
#[derive(Debug, Clone)]
pub struct CrossCovarianceCheck {
    pub finite: DMatrix<f64>,
    pub expansion: DMatrix<f64>,
}

impl CrossCovarianceCheck {
    pub fn max_residual(&self) -> f64 {
        (&self.finite - &self.expansion).amax()
    }
}

pub fn cross_covariance_check(
    tab: &KernelTableau,
    spec: &FitSpec,
    model: &CovarianceModel,
    f: &SamplingDensity,
    grid: &[f64],
    x: f64,
) -> Result<CrossCovarianceCheck> {
    let h = spec.h.value();
    if !h.is_finite() {
        return Err(Error::InvalidArgument("expansion needs a finite bandwidth".into()));
    }
    let dim = tab.p + 1;
    let big_n = grid.len() as f64;
    let idx: Vec<usize> = (0..grid.len())
        .filter(|&j| spec.kernel.eval((grid[j] - x) / h) > 0.0)
        .collect();
    if idx.len() < dim {
        return Err(Error::BandwidthTooSmall {
            in_window: idx.len(),
            needed: dim,
        });
    }
    // rows: (u_j^k K(u_j)/h), columns restricted to the window
    let m = idx.len();
    let mut g = DMatrix::<f64>::zeros(dim, m);
    for (c, &j) in idx.iter().enumerate() {
        let u = (grid[j] - x) / h;
        let w = spec.kernel.eval(u) / h;
        let mut up = 1.0;
        for k in 0..dim {
            g[(k, c)] = up * w;
            up *= u;
        }
    }
    let mut sigma = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = model.eval(grid[idx[a]], grid[idx[b]]);
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    let finite = (&g * sigma * g.transpose()) / (big_n * big_n);

    let (left, right) = model.one_sided_partials(x)?;
    let fx = f.pdf(x);
    let fd = f.derivative(x);
    let rho = model.variance(x);
    let phi = rho * fx * fx;
    let phi_plus = fx * fd * rho + fx * fx * right;
    let phi_minus = fx * fd * rho + fx * fx * left;
    let expansion = &tab.s_star * phi
        + &tab.a * (h * (phi_plus - phi_minus))
        + &tab.b * (h * (phi_plus + phi_minus));
    Ok(CrossCovarianceCheck { finite, expansion })
}

/// Exact weight-row moments next to their expansions at one point; a
/// convenience for oracle comparisons.
pub fn exact_over_asymptotic(
    tab: &KernelTableau,
    spec: &FitSpec,
    model: &CovarianceModel,
    m: &dyn Regression,
    grid: &[f64],
    x: f64,
    n: usize,
) -> Result<(f64, f64)> {
    let f = SamplingDensity::uniform();
    let exact = crate::locpoly::exact_moments(m, model, grid, spec, x, n)?;
    let asym = asym_moments(tab, model, m, &f, x, spec.nu)?;
    let h = spec.h.value();
    let nf = n as f64;
    // the leading bias term vanishes when p - nu is even
    let bias = if asym.bias.leading.coefficient != 0.0 {
        asym.bias.leading.value(h, nf)
    } else {
        asym.bias.second.value(h, nf)
    };
    Ok((exact.bias / bias, exact.variance / asym.variance.total(h, nf)))
}
