//! Covariance models for the error process and Gaussian path sampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const ONE_SIDED_STEP: f64 = 1e-6;
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Regularity of a covariance near the diagonal, ordered from weakest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Smoothness {
    /// No guarantees; one-sided derivatives are not available.
    Irregular,
    /// Continuous first partials off the diagonal with one-sided limits.
    OffDiagonal,
    /// Twice continuously differentiable at the diagonal.
    C2Diagonal,
    /// Four times continuously differentiable at the diagonal.
    C4Diagonal,
}

type CovFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CovarianceModel {
    /// min(x, y)
    Wiener,
    /// exp(-lambda |x - y|)
    OrnsteinUhlenbeck { lambda: f64 },
    /// exp(-((x - y) / scale)^2)
    SquaredExponential { scale: f64 },
    Scaled { factor: f64, inner: Box<CovarianceModel> },
    Sum(Vec<CovarianceModel>),
    Custom {
        name: String,
        eval: CovFn,
        smoothness: Smoothness,
    },
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CovarianceModel({})", self.id())
    }
}

/// Diagonal partial derivatives of a smooth covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalPartials {
    pub rho11: f64,
    pub rho02: f64,
    /// Present only for models smooth to fourth order.
    pub rho13: Option<f64>,
}

impl CovarianceModel {
    pub fn ou(lambda: f64) -> Self {
        Self::OrnsteinUhlenbeck { lambda }
    }

    pub fn sqexp(scale: f64) -> Self {
        Self::SquaredExponential { scale }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::Scaled {
            factor,
            inner: Box::new(self),
        }
    }

    pub fn custom<F>(name: &str, smoothness: Smoothness, eval: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom {
            name: name.to_string(),
            eval: Arc::new(eval),
            smoothness,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Wiener => "wiener".into(),
            Self::OrnsteinUhlenbeck { lambda } => format!("ou:{lambda}"),
            Self::SquaredExponential { scale } => format!("sqexp:{scale}"),
            Self::Scaled { factor, inner } => format!("{factor}*{}", inner.id()),
            Self::Sum(parts) => parts.iter().map(|p| p.id()).collect::<Vec<_>>().join("+"),
            Self::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Self::Wiener | Self::OrnsteinUhlenbeck { .. } => Smoothness::OffDiagonal,
            Self::SquaredExponential { .. } => Smoothness::C4Diagonal,
            Self::Scaled { inner, .. } => inner.smoothness(),
            Self::Sum(parts) => parts
                .iter()
                .map(|p| p.smoothness())
                .min()
                .unwrap_or(Smoothness::C4Diagonal),
            Self::Custom { smoothness, .. } => *smoothness,
        }
    }

    /// Whether the covariance depends only on x - y.
    pub fn is_stationary(&self) -> bool {
        match self {
            Self::Wiener => false,
            Self::OrnsteinUhlenbeck { .. } | Self::SquaredExponential { .. } => true,
            Self::Scaled { inner, .. } => inner.is_stationary(),
            Self::Sum(parts) => parts.iter().all(|p| p.is_stationary()),
            Self::Custom { .. } => false,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Wiener => x.min(y),
            Self::OrnsteinUhlenbeck { lambda } => (-lambda * (x - y).abs()).exp(),
            Self::SquaredExponential { scale } => {
                let r = (x - y) / scale;
                (-r * r).exp()
            }
            Self::Scaled { factor, inner } => factor * inner.eval(x, y),
            Self::Sum(parts) => parts.iter().map(|p| p.eval(x, y)).sum(),
            Self::Custom { eval, .. } => eval(x, y),
        }
    }

    /// rho(t, t)
    pub fn variance(&self, t: f64) -> f64 {
        self.eval(t, t)
    }

    /// One-sided derivatives in the second argument at the diagonal:
    /// (rho^(0,1)(x, x-), rho^(0,1)(x, x+)).
    pub fn one_sided_partials(&self, x: f64) -> Result<(f64, f64)> {
        if self.smoothness() < Smoothness::OffDiagonal {
            return Err(Error::NotAvailable(format!(
                "one-sided derivative of `{}`",
                self.id()
            )));
        }
        Ok(match self {
            Self::Wiener => (1.0, 0.0),
            Self::OrnsteinUhlenbeck { lambda } => (*lambda, -lambda),
            Self::SquaredExponential { .. } => (0.0, 0.0),
            Self::Scaled { factor, inner } => {
                let (l, r) = inner.one_sided_partials(x)?;
                (factor * l, factor * r)
            }
            Self::Sum(parts) => {
                let mut acc = (0.0, 0.0);
                for p in parts {
                    let (l, r) = p.one_sided_partials(x)?;
                    acc.0 += l;
                    acc.1 += r;
                }
                acc
            }
            Self::Custom { eval, .. } => {
                // Richardson-extrapolated one-sided differences
                let d = ONE_SIDED_STEP;
                let left = |s: f64| (eval(x, x) - eval(x, x - s)) / s;
                let right = |s: f64| (eval(x, x + s) - eval(x, x)) / s;
                (
                    2.0 * left(0.5 * d) - left(d),
                    2.0 * right(0.5 * d) - right(d),
                )
            }
        })
    }

    /// Jump of the first partial across the diagonal; nonnegative for any
    /// valid covariance.
    pub fn alpha(&self, x: f64) -> Result<f64> {
        let (l, r) = self.one_sided_partials(x)?;
        Ok(l - r)
    }

    pub fn diagonal_partials(&self, x: f64) -> Result<DiagonalPartials> {
        if self.smoothness() < Smoothness::C2Diagonal {
            return Err(Error::NotAvailable(format!(
                "diagonal second partials of `{}`",
                self.id()
            )));
        }
        let fourth = self.smoothness() >= Smoothness::C4Diagonal;
        Ok(match self {
            Self::SquaredExponential { scale } => {
                let s2 = scale * scale;
                DiagonalPartials {
                    rho11: 2.0 / s2,
                    rho02: -2.0 / s2,
                    rho13: Some(-12.0 / (s2 * s2)),
                }
            }
            Self::Scaled { factor, inner } => {
                let d = inner.diagonal_partials(x)?;
                DiagonalPartials {
                    rho11: factor * d.rho11,
                    rho02: factor * d.rho02,
                    rho13: d.rho13.map(|v| factor * v),
                }
            }
            Self::Sum(parts) => {
                let mut acc = DiagonalPartials {
                    rho11: 0.0,
                    rho02: 0.0,
                    rho13: if fourth { Some(0.0) } else { None },
                };
                for p in parts {
                    let d = p.diagonal_partials(x)?;
                    acc.rho11 += d.rho11;
                    acc.rho02 += d.rho02;
                    acc.rho13 = match (acc.rho13, d.rho13) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
                acc
            }
            Self::Custom { eval, .. } => {
                let d = 1e-4;
                let f = |a: f64, b: f64| eval(a, b);
                let rho02 = (f(x, x + d) - 2.0 * f(x, x) + f(x, x - d)) / (d * d);
                let rho11 = (f(x + d, x + d) - f(x + d, x - d) - f(x - d, x + d)
                    + f(x - d, x - d))
                    / (4.0 * d * d);
                let rho13 = fourth.then(|| {
                    let e = 1e-2;
                    let d3 = |a: f64| {
                        (f(a, x + 2.0 * e) - 2.0 * f(a, x + e) + 2.0 * f(a, x - e)
                            - f(a, x - 2.0 * e))
                            / (2.0 * e * e * e)
                    };
                    (d3(x + e) - d3(x - e)) / (2.0 * e)
                });
                DiagonalPartials { rho11, rho02, rho13 }
            }
            Self::Wiener | Self::OrnsteinUhlenbeck { .. } => unreachable!(),
        })
    }

    /// The matrix (rho(x_i, x_j)).
    pub fn matrix(&self, grid: &[f64]) -> DMatrix<f64> {
        let n = grid.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(grid[i], grid[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

impl FromStr for CovarianceModel {
    type Err = Error;

    /// `wiener`, `ou:<lambda>`, `sqexp:<scale>`, `<c>*<id>`, and sums
    /// `<id>+<id>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains('+') {
            let parts = s
                .split('+')
                .map(str::parse)
                .collect::<Result<Vec<CovarianceModel>>>()?;
            return Ok(Self::Sum(parts));
        }
        if let Some((c, rest)) = s.split_once('*') {
            let factor = parse_positive(c, s)?;
            return Ok(rest.parse::<CovarianceModel>()?.scaled(factor));
        }
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("wiener", None) => Ok(Self::Wiener),
            ("ou", Some(a)) => Ok(Self::ou(parse_positive(a, s)?)),
            ("sqexp", Some(a)) => Ok(Self::sqexp(parse_positive(a, s)?)),
            ("sqexp", None) => Ok(Self::sqexp(1.0)),
            _ => Err(Error::UnknownId(s.to_string())),
        }
    }
}

fn parse_positive(text: &str, whole: &str) -> Result<f64> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(Error::Parse(format!("bad numeric parameter in `{whole}`"))),
    }
}

/// Checks positive semidefiniteness: smallest eigenvalue >= -1e-8 * trace.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let trace = m.trace().abs();
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    min >= -1e-8 * trace.max(f64::MIN_POSITIVE)
}

/// Draws zero-mean Gaussian vectors with the covariance of a model on a grid.
#[derive(Debug, Clone)]
pub struct GaussianPathSampler {
    grid: Vec<f64>,
    /// Lower Cholesky factor of the (jittered) covariance matrix.
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GaussianPathSampler {
    pub fn new(model: &CovarianceModel, grid: &[f64]) -> Result<Self> {
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "grid must be strictly increasing".into(),
            ));
        }
        let sigma = model.matrix(grid);
        let n = grid.len();
        if sigma.iter().all(|&v| v == 0.0) {
            return Ok(Self {
                grid: grid.to_vec(),
                factor: DMatrix::zeros(n, n),
                jitter: 0.0,
            });
        }
        for &jitter in &JITTER_LADDER {
            let mut m = sigma.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    grid: grid.to_vec(),
                    factor: ch.l(),
                    jitter,
                });
            }
        }
        Err(Error::NotPsd {
            jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// n paths as the rows of an n x N matrix. Each path consumes N standard
    /// normals from `rng` in grid order.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let len = self.grid.len();
        let mut z = DMatrix::<f64>::zeros(n, len);
        for i in 0..n {
            for j in 0..len {
                z[(i, j)] = StandardNormal.sample(rng);
            }
        }
        z * self.factor.transpose()
    }
}

/// n paths of `model` on `grid`, deterministic in `seed`.
pub fn sample_paths(
    model: &CovarianceModel,
    grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let sampler = GaussianPathSampler::new(model, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use approx::assert_abs_diff_eq;

    #[test]
    fn alpha_closed_forms() {
        let ou: CovarianceModel = "ou:15".parse().unwrap();
        let w: CovarianceModel = "wiener".parse().unwrap();
        let se: CovarianceModel = "sqexp:1".parse().unwrap();
        for x in [0.1, 0.5, 0.93] {
            assert_abs_diff_eq!(ou.alpha(x).unwrap(), 30.0, epsilon = 1e-12);
            assert_abs_diff_eq!(w.alpha(x).unwrap(), 1.0, epsilon = 1e-12);
            assert_eq!(se.alpha(x).unwrap(), 0.0);
        }
    }

    #[test]
    fn numerical_one_sided_partials_match_closed_forms() {
        let ou = CovarianceModel::custom("ou", Smoothness::OffDiagonal, |x, y| {
            (-15.0 * (x - y).abs()).exp()
        });
        let w = CovarianceModel::custom("w", Smoothness::OffDiagonal, f64::min);
        for x in [0.2, 0.6] {
            assert_abs_diff_eq!(ou.alpha(x).unwrap(), 30.0, epsilon = 1e-5);
            assert_abs_diff_eq!(w.alpha(x).unwrap(), 1.0, epsilon = 1e-6);
        }
        let raw = CovarianceModel::custom("raw", Smoothness::Irregular, f64::min);
        assert!(matches!(raw.alpha(0.5), Err(Error::NotAvailable(_))));
    }

    #[test]
    fn diagonal_partials_of_sqexp() {
        let se = CovarianceModel::sqexp(1.0);
        let d = se.diagonal_partials(0.4).unwrap();
        assert_eq!(d.rho02, -2.0);
        assert_eq!(d.rho11, 2.0);
        assert_eq!(d.rho13, Some(-12.0));
        let num = CovarianceModel::custom("se", Smoothness::C4Diagonal, |x, y| {
            (-(x - y) * (x - y)).exp()
        });
        let dn = num.diagonal_partials(0.4).unwrap();
        assert_abs_diff_eq!(dn.rho02, -2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(dn.rho11, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(dn.rho13.unwrap(), -12.0, epsilon = 1e-2);
        assert!(matches!(
            CovarianceModel::Wiener.diagonal_partials(0.5),
            Err(Error::NotAvailable(_))
        ));
        assert!(CovarianceModel::ou(15.0).diagonal_partials(0.5).is_err());
    }

    #[test]
    fn stationary_rho11_is_constant() {
        let se = CovarianceModel::sqexp(0.7);
        let a = se.diagonal_partials(0.1).unwrap().rho11;
        let b = se.diagonal_partials(0.8).unwrap().rho11;
        assert_eq!(a, b);
    }

    #[test]
    fn id_grammar_round_trips() {
        for id in ["wiener", "ou:15", "sqexp:0.5", "2*wiener", "wiener+ou:3", "0.5*sqexp:2+ou:1"] {
            let m: CovarianceModel = id.parse().unwrap();
            let back: CovarianceModel = m.id().parse().unwrap();
            assert_eq!(m.eval(0.3, 0.7), back.eval(0.3, 0.7));
        }
        assert!(matches!("brownian".parse::<CovarianceModel>(), Err(Error::UnknownId(_))));
        assert!("ou:x".parse::<CovarianceModel>().is_err());
    }

    #[test]
    fn matrices_are_symmetric_psd() {
        let grid = linspace(0.0, 1.0, 40);
        for id in ["wiener", "ou:15", "sqexp:1", "wiener+ou:2"] {
            let m: CovarianceModel = id.parse().unwrap();
            let s = m.matrix(&grid);
            assert_eq!(s, s.transpose());
            assert!(is_psd(&s), "{id}");
        }
    }

    #[test]
    fn empty_sample() {
        let grid = linspace(0.0, 1.0, 5);
        let y = sample_paths(&CovarianceModel::Wiener, &grid, 0, 1).unwrap();
        assert_eq!(y.nrows(), 0);
        assert_eq!(y.ncols(), 5);
    }

    #[test]
    fn wiener_variance_at_one() {
        let grid = linspace(0.0, 1.0, 100);
        let y = sample_paths(&CovarianceModel::Wiener, &grid, 10_000, 11).unwrap();
        let last = y.column(99);
        let var = last.iter().map(|v| v * v).sum::<f64>() / 10_000.0;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn ou_lag_one_correlation() {
        let grid = linspace(0.0, 1.0, 10);
        let y = sample_paths(&CovarianceModel::ou(15.0), &grid, 10_000, 5).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.nrows() {
            for j in 1..10 {
                num += y[(i, j)] * y[(i, j - 1)];
                den += y[(i, j)] * y[(i, j)];
            }
        }
        let r = num / den;
        assert!((r - (-15.0f64 / 9.0).exp()).abs() < 0.03, "{r}");
    }

    #[test]
    fn sample_covariance_converges() {
        let grid = linspace(0.0, 1.0, 6);
        let model = CovarianceModel::ou(3.0);
        let n = 40_000;
        let y = sample_paths(&model, &grid, n, 3).unwrap();
        let sigma = model.matrix(&grid);
        for a in 0..6 {
            let mean = y.column(a).sum() / n as f64;
            assert!(mean.abs() < 0.03);
            for b in 0..6 {
                let c = y.column(a).dot(&y.column(b)) / n as f64;
                assert!((c - sigma[(a, b)]).abs() < 0.04);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let grid = linspace(0.0, 1.0, 20);
        let a = sample_paths(&CovarianceModel::Wiener, &grid, 7, 99).unwrap();
        let b = sample_paths(&CovarianceModel::Wiener, &grid, 7, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wiener_needs_jitter_and_zero_model_needs_none() {
        let grid = linspace(0.0, 1.0, 10);
        let s = GaussianPathSampler::new(&CovarianceModel::Wiener, &grid).unwrap();
        assert!(s.jitter() > 0.0);
        let zero = CovarianceModel::Wiener.scaled(0.0);
        let z = GaussianPathSampler::new(&zero, &grid).unwrap();
        assert_eq!(z.jitter(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(z.sample(&mut rng, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let bad = CovarianceModel::custom("bad", Smoothness::Irregular, |x, y| {
            if x == y { 1.0 } else { -1.0 }
        });
        let grid = linspace(0.0, 1.0, 4);
        assert!(matches!(
            GaussianPathSampler::new(&bad, &grid),
            Err(Error::NotPsd { .. })
        ));
    }
}
