//! Sampling densities on [0, 1] and the quantile grids they generate.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::KernelTableau;
use crate::quadrature::{adaptive, linspace};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const POSITIVITY_MESH: usize = 1001;
const DERIVATIVE_MESH: usize = 201;
const ROOT_TOL: f64 = 1e-12;

#[derive(Clone)]
enum Shape {
    Uniform,
    /// f(t) = (1 + a t) / (1 + a/2)
    Linear(f64),
    /// Constant mass 1/(N-1) on each cell of a grid.
    Piecewise(Vec<f64>),
    General { pdf: RealFn, deriv: Option<RealFn>, mass: f64 },
}

/// A positive density on [0, 1].
#[derive(Clone)]
pub struct SamplingDensity {
    id: String,
    shape: Shape,
}

impl fmt::Debug for SamplingDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SamplingDensity({})", self.id)
    }
}

impl SamplingDensity {
    pub fn uniform() -> Self {
        Self {
            id: "uniform".into(),
            shape: Shape::Uniform,
        }
    }

    pub fn linear(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > -1.0) {
            return Err(Error::BadDensity { x: 1.0 });
        }
        Ok(Self {
            id: format!("linear:{a}"),
            shape: Shape::Linear(a),
        })
    }

    /// The empirical density of a grid: mass 1/(N-1) spread evenly over
    /// each cell.
    pub fn from_grid(grid: &DesignGrid) -> Result<Self> {
        let pts = grid.points();
        if pts.len() < 2 || pts[0] != 0.0 || pts[pts.len() - 1] != 1.0 {
            return Err(Error::InvalidArgument(
                "empirical density needs a grid spanning [0, 1]".into(),
            ));
        }
        Ok(Self {
            id: format!("empirical:{}", pts.len()),
            shape: Shape::Piecewise(pts.to_vec()),
        })
    }

    /// Wraps an arbitrary positive function, normalized to unit mass.
    pub fn from_fn<F>(id: &str, pdf: F, deriv: Option<RealFn>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let pdf: RealFn = Arc::new(pdf);
        check_positive(&*pdf)?;
        let mass = adaptive(&|t| pdf(t), 0.0, 1.0, 1e-14);
        Ok(Self {
            id: id.to_string(),
            shape: Shape::General { pdf, deriv, mass },
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.shape, Shape::Uniform)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Uniform => 1.0,
            Shape::Linear(a) => (1.0 + a * t) / (1.0 + 0.5 * a),
            Shape::Piecewise(pts) => {
                let j = cell(pts, t);
                1.0 / ((pts.len() - 1) as f64 * (pts[j + 1] - pts[j]))
            }
            Shape::General { pdf, mass, .. } => pdf(t) / mass,
        }
    }

    /// f'(t): analytic when known, central differences otherwise.
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Uniform | Shape::Piecewise(_) => 0.0,
            Shape::Linear(a) => a / (1.0 + 0.5 * a),
            Shape::General {
                deriv: Some(d),
                mass,
                ..
            } => d(t) / mass,
            Shape::General { pdf, mass, .. } => {
                let s = 1e-5;
                (pdf(t + s) - pdf(t - s)) / (2.0 * s * mass)
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.shape {
            Shape::Uniform => t,
            Shape::Linear(a) => (t + 0.5 * a * t * t) / (1.0 + 0.5 * a),
            Shape::Piecewise(pts) => {
                let j = cell(pts, t);
                (j as f64 + (t - pts[j]) / (pts[j + 1] - pts[j])) / (pts.len() - 1) as f64
            }
            Shape::General { pdf, mass, .. } => adaptive(&|s| pdf(s), 0.0, t, 1e-14) / mass,
        }
    }

    /// Solves F(x) = q.
    pub fn quantile(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        match &self.shape {
            Shape::Uniform => q,
            Shape::Linear(a) if *a == 0.0 => q,
            Shape::Linear(a) => {
                let disc = 1.0 + 2.0 * a * q * (1.0 + 0.5 * a);
                // rationalized root, stable for small a
                2.0 * q * (1.0 + 0.5 * a) / (1.0 + disc.sqrt())
            }
            Shape::Piecewise(pts) => {
                let scaled = q * (pts.len() - 1) as f64;
                let j = (scaled.floor() as usize).min(pts.len() - 2);
                pts[j] + (scaled - j as f64) * (pts[j + 1] - pts[j])
            }
            Shape::General { .. } => self.solve_quantile(q),
        }
    }

    /// Newton steps safeguarded by a shrinking bracket.
    fn solve_quantile(&self, q: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x = q;
        for _ in 0..200 {
            let g = self.cdf(x) - q;
            if g.abs() < ROOT_TOL {
                return x;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = g / self.pdf(x);
            let newton = x - step;
            x = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 {
                break;
            }
        }
        x
    }
}

fn cell(pts: &[f64], t: f64) -> usize {
    match pts.binary_search_by(|p| p.partial_cmp(&t).expect("finite grid")) {
        Ok(j) => j.min(pts.len() - 2),
        Err(j) => j.saturating_sub(1).min(pts.len() - 2),
    }
}

fn check_positive(f: &dyn Fn(f64) -> f64) -> Result<()> {
    for x in linspace(0.0, 1.0, POSITIVITY_MESH) {
        let v = f(x);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::BadDensity { x });
        }
    }
    Ok(())
}

impl FromStr for SamplingDensity {
    type Err = Error;

    /// `uniform` or `linear:<a>`. The optimal density depends on the
    /// regression function and is built with [`optimal_density`].
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().split_once(':') {
            None if s.trim() == "uniform" => Ok(Self::uniform()),
            Some(("linear", a)) => Self::linear(
                a.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad slope in `{s}`")))?,
            ),
            _ => Err(Error::UnknownId(s.to_string())),
        }
    }
}

/// Sorted, strictly increasing observation points in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignGrid {
    points: Vec<f64>,
    density_id: String,
}

impl DesignGrid {
    pub fn new(points: Vec<f64>, density_id: &str) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty design grid".into()));
        }
        if points.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::InvalidArgument(
                "design points must lie in [0, 1]".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "design points must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            points,
            density_id: density_id.to_string(),
        })
    }

    /// N equispaced points from 0 to 1.
    pub fn uniform(n: usize) -> Result<Self> {
        quantile_grid(&SamplingDensity::uniform(), n)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn density_id(&self) -> &str {
        &self.density_id
    }
}

/// Points with F(x_j) = (j-1)/(N-1).
pub fn quantile_grid(density: &SamplingDensity, n: usize) -> Result<DesignGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a quantile grid needs N >= 2, got {n}"
        )));
    }
    check_positive(&|t| density.pdf(t))?;
    let mut points: Vec<f64> = (0..n)
        .map(|j| density.quantile(j as f64 / (n - 1) as f64))
        .collect();
    points[0] = 0.0;
    points[n - 1] = 1.0;
    DesignGrid::new(points, density.id())
}

/// The density minimizing the second-order bias, proportional to
/// |m^(p+1)|^(gamma/(p+2)). Needs p - nu even and m^(p+1) nonvanishing.
pub fn optimal_density(
    tableau: &KernelTableau,
    nu: usize,
    m_p1: RealFn,
    m_p2: Option<RealFn>,
) -> Result<SamplingDensity> {
    let p = tableau.p;
    if nu > p {
        return Err(Error::InvalidArgument(format!("nu = {nu} exceeds p = {p}")));
    }
    if (p - nu) % 2 == 1 {
        return Err(Error::WrongParity(p - nu));
    }
    for x in linspace(0.0, 1.0, DERIVATIVE_MESH) {
        if m_p1(x).abs() < 1e-10 {
            return Err(Error::VanishingDerivative { order: p + 1, x });
        }
    }
    let gamma = optimal_exponent(tableau, nu);
    let power = gamma / (p as f64 + 2.0);
    let shape = {
        let m_p1 = Arc::clone(&m_p1);
        move |t: f64| m_p1(t).abs().powf(power)
    };
    let deriv: Option<RealFn> = m_p2.map(|m2| {
        let m_p1 = Arc::clone(&m_p1);
        Arc::new(move |t: f64| {
            let d = m_p1(t);
            d.abs().powf(power) * power * m2(t) / d
        }) as RealFn
    });
    let mut f = SamplingDensity::from_fn("optimal", shape, deriv)?;
    f.id = "optimal".into();
    Ok(f)
}

/// gamma = e' S^-1 c~ / (e' S^-1 S~ S^-1 c - e' S^-1 c~)
pub fn optimal_exponent(tableau: &KernelTableau, nu: usize) -> f64 {
    let tilde = tableau.bias_tilde(nu);
    tilde / (tableau.bias_design(nu) - tilde)
}
