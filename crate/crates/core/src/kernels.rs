//! Kernel functions and the kernel-derived moments, vectors and matrices that
//! enter the bias and variance expansions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, GaussLegendre};

/// Highest local polynomial order for which tableaus are built.
pub const MAX_ORDER: usize = 4;

const SINGULAR_CONDITION: f64 = 1e12;
const CROSS_NODES: usize = 64;

type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    /// Standard normal density restricted to [-tau, tau] and renormalized.
    TruncatedGaussian,
    /// 3/(4 tau) (1 - (u/tau)^2) on [-tau, tau].
    Epanechnikov,
    /// 1/(2 tau) on [-tau, tau].
    Uniform,
    /// User-supplied shape, renormalized to integrate to one.
    Custom { name: String, shape: KernelFn },
}

/// A symmetric density with compact support [-tau, tau].
#[derive(Clone)]
pub struct Kernel {
    kind: KernelKind,
    tau: f64,
    scale: f64,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel").field("id", &self.id()).finish()
    }
}

impl Kernel {
    pub fn truncated_gaussian(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let z = libm::erf(tau / std::f64::consts::SQRT_2);
        Ok(Self {
            kind: KernelKind::TruncatedGaussian,
            tau,
            scale: 1.0 / (z * (2.0 * std::f64::consts::PI).sqrt()),
        })
    }

    pub fn epanechnikov(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            kind: KernelKind::Epanechnikov,
            tau,
            scale: 0.75 / tau,
        })
    }

    pub fn uniform(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            kind: KernelKind::Uniform,
            tau,
            scale: 0.5 / tau,
        })
    }

    /// Wraps an arbitrary nonnegative shape on [-tau, tau]; the shape is
    /// renormalized by numerical integration.
    pub fn custom<F>(name: &str, tau: f64, shape: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_tau(tau)?;
        let shape: KernelFn = Arc::new(shape);
        let mass = adaptive(&|u| shape(u), -tau, tau, 1e-13);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "custom kernel `{name}` has nonpositive mass {mass}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Custom {
                name: name.to_string(),
                shape,
            },
            tau,
            scale: 1.0 / mass,
        })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    /// Support half-width.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Canonical identifier, parseable by `FromStr`.
    pub fn id(&self) -> String {
        let base = match &self.kind {
            KernelKind::TruncatedGaussian => "truncated-gaussian",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Uniform => "uniform",
            KernelKind::Custom { name, .. } => return format!("custom:{name}"),
        };
        if self.tau == 1.0 {
            base.to_string()
        } else {
            format!("{base}:{}", self.tau)
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u.abs() > self.tau {
            return 0.0;
        }
        match &self.kind {
            KernelKind::TruncatedGaussian => self.scale * (-0.5 * u * u).exp(),
            KernelKind::Epanechnikov => {
                let r = u / self.tau;
                self.scale * (1.0 - r * r)
            }
            KernelKind::Uniform => self.scale,
            KernelKind::Custom { shape, .. } => self.scale * shape(u).max(0.0),
        }
    }

    /// k-th moment, closed form for the built-in kernels.
    pub fn moment(&self, k: usize) -> f64 {
        if k % 2 == 1 && !matches!(self.kind, KernelKind::Custom { .. }) {
            return 0.0;
        }
        let tau = self.tau;
        match &self.kind {
            KernelKind::Uniform => tau.powi(k as i32) / (k as f64 + 1.0),
            KernelKind::Epanechnikov => {
                3.0 * tau.powi(k as i32) / ((k as f64 + 1.0) * (k as f64 + 3.0))
            }
            KernelKind::TruncatedGaussian => {
                // int_0^tau u^k e^{-u^2/2} du
                //   = e^{-tau^2/2} sum_j tau^{k+1+2j} / ((k+1)(k+3)...(k+1+2j)),
                // a series of positive terms
                let t2 = tau * tau;
                let mut term = tau.powi(k as i32 + 1) / (k as f64 + 1.0);
                let mut sum = term;
                let mut j = 1.0;
                while term > 1e-18 * sum {
                    term *= t2 / (k as f64 + 1.0 + 2.0 * j);
                    sum += term;
                    j += 1.0;
                }
                2.0 * self.scale * (-0.5 * t2).exp() * sum
            }
            KernelKind::Custom { .. } => {
                adaptive(&|u| u.powi(k as i32) * self.eval(u), -tau, tau, 1e-12)
            }
        }
    }

    /// 1/2 of the double integral of |u - v| u^k v^l K(u) K(v).
    pub fn cross_moment_abs(&self, k: usize, l: usize) -> f64 {
        let m = self.abs_cross_matrix(k.max(l));
        m[(k, l)]
    }

    /// The (p+1)x(p+1) matrix of halved absolute cross moments. Each inner
    /// integral is split at u = v so both pieces are smooth.
    pub fn abs_cross_matrix(&self, p: usize) -> DMatrix<f64> {
        let tau = self.tau;
        let kv = |v: f64| self.eval(v);
        split_abs_integral(tau, p, &kv, &kv) * 0.5
    }

    /// Numerical Lipschitz constant over the support (10^4 subintervals).
    pub fn lipschitz_estimate(&self) -> f64 {
        let n = 10_000;
        let step = 2.0 * self.tau / n as f64;
        (0..n)
            .map(|i| {
                let a = -self.tau + step * i as f64;
                let b = a + step;
                (self.eval(b.min(self.tau)) - self.eval(a)).abs() / step
            })
            .fold(0.0, f64::max)
    }
}

/// Double integral over [-tau, tau]^2 of |u - v| u^k v^l wu(u) wv(v) for all
/// k, l <= p, with 64 Gauss–Legendre nodes per axis and the inner axis split
/// at the diagonal.
fn split_abs_integral(
    tau: f64,
    p: usize,
    wu: &dyn Fn(f64) -> f64,
    wv: &dyn Fn(f64) -> f64,
) -> DMatrix<f64> {
    thread_local! {
        static RULE: GaussLegendre = GaussLegendre::new(CROSS_NODES);
    }
    RULE.with(|rule| {
        let mut out = DMatrix::zeros(p + 1, p + 1);
        let mut upow = vec![0.0; p + 1];
        let mut inner = vec![0.0; p + 1];
        for (u, w_u) in rule.mapped(-tau, tau) {
            let ku = wu(u);
            if ku == 0.0 {
                continue;
            }
            inner.iter_mut().for_each(|x| *x = 0.0);
            for (lo, hi) in [(-tau, u), (u, tau)] {
                for (v, w_v) in rule.mapped(lo, hi) {
                    let g = w_v * (u - v).abs() * wv(v);
                    let mut vp = 1.0;
                    for slot in inner.iter_mut() {
                        *slot += g * vp;
                        vp *= v;
                    }
                }
            }
            let mut up = 1.0;
            for slot in upow.iter_mut() {
                *slot = up;
                up *= u;
            }
            for k in 0..=p {
                for l in 0..=p {
                    out[(k, l)] += w_u * ku * upow[k] * inner[l];
                }
            }
        }
        out
    })
}

/// The unweighted identity: double integral over [-1,1]^2 of uv|u - v|,
/// which equals -8/15. Exposed as a self-test of the split quadrature.
pub fn uv_abs_identity() -> f64 {
    let one = |_: f64| 1.0;
    split_abs_integral(1.0, 1, &one, &one)[(1, 1)]
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "kernel support half-width must be positive, got {tau}"
        )))
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// `truncated-gaussian[:tau]`, `epanechnikov[:tau]`, `uniform[:tau]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, tau) = match s.split_once(':') {
            Some((n, t)) => (
                n,
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad kernel half-width in `{s}`")))?,
            ),
            None => (s, 1.0),
        };
        match name.trim() {
            "truncated-gaussian" | "gaussian" => Kernel::truncated_gaussian(tau),
            "epanechnikov" => Kernel::epanechnikov(tau),
            "uniform" => Kernel::uniform(tau),
            other => Err(Error::UnknownId(other.to_string())),
        }
    }
}

/// All kernel-derived quantities at a fixed local polynomial order `p`.
/// Matrices are indexed k, l = 0..=p.
#[derive(Debug, Clone)]
pub struct KernelTableau {
    pub kernel_id: String,
    pub p: usize,
    /// mu_0 .. mu_{2p+4}
    pub moments: Vec<f64>,
    pub c: DVector<f64>,
    pub c_tilde: DVector<f64>,
    pub s: DMatrix<f64>,
    pub s_tilde: DMatrix<f64>,
    pub s_star: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub a3: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    pub condition: f64,
}

impl KernelTableau {
    pub fn build(kernel: &Kernel, p: usize) -> Result<Self> {
        if p > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "order p = {p} exceeds supported maximum {MAX_ORDER}"
            )));
        }
        let moments: Vec<f64> = (0..=2 * p + 4).map(|k| kernel.moment(k)).collect();
        let mu = |k: usize| moments[k];
        let dim = p + 1;
        let s = DMatrix::from_fn(dim, dim, |k, l| mu(k + l));
        let s_tilde = DMatrix::from_fn(dim, dim, |k, l| mu(k + l + 1));
        let s_star = DMatrix::from_fn(dim, dim, |k, l| mu(k) * mu(l));
        let b = DMatrix::from_fn(dim, dim, |k, l| 0.5 * (mu(k + 1) * mu(l) + mu(k) * mu(l + 1)));
        let a1 = DMatrix::from_fn(dim, dim, |k, l| 0.5 * (mu(k) * mu(l + 2) + mu(k + 2) * mu(l)));
        let a2 = DMatrix::from_fn(dim, dim, |k, l| mu(k + 1) * mu(l + 1));
        let a3 = DMatrix::from_fn(dim, dim, |k, l| {
            (mu(k + 3) * mu(l + 1) + mu(k + 1) * mu(l + 3)) / 6.0
        });
        let c = DVector::from_fn(dim, |k, _| mu(p + 1 + k));
        let c_tilde = DVector::from_fn(dim, |k, _| mu(p + 2 + k));
        let a = kernel.abs_cross_matrix(p);

        let condition = symmetric_condition(&s);
        if !(condition.is_finite() && condition <= SINGULAR_CONDITION) {
            return Err(Error::SingularMoments { condition });
        }
        let s_inv = s
            .clone()
            .cholesky()
            .ok_or(Error::SingularMoments { condition })?
            .inverse();

        Ok(Self {
            kernel_id: kernel.id(),
            p,
            moments,
            c,
            c_tilde,
            s,
            s_tilde,
            s_star,
            a,
            b,
            a1,
            a2,
            a3,
            s_inv,
            condition,
        })
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.moments[k]
    }

    fn s_inv_row(&self, nu: usize) -> DVector<f64> {
        self.s_inv.column(nu).into_owned()
    }

    /// e_nu' S^{-1} v
    pub fn project(&self, nu: usize, v: &DVector<f64>) -> f64 {
        self.s_inv_row(nu).dot(v)
    }

    /// e_nu' S^{-1} M S^{-1} e_nu
    pub fn sandwich(&self, nu: usize, m: &DMatrix<f64>) -> f64 {
        let r = self.s_inv_row(nu);
        (r.transpose() * m * &r)[(0, 0)]
    }

    /// e_nu' S^{-1} c: first-order bias constant.
    pub fn bias_first(&self, nu: usize) -> f64 {
        self.project(nu, &self.c)
    }

    /// e_nu' S^{-1} c~
    pub fn bias_tilde(&self, nu: usize) -> f64 {
        self.project(nu, &self.c_tilde)
    }

    /// e_nu' S^{-1} S~ S^{-1} c: the design-density contribution.
    pub fn bias_design(&self, nu: usize) -> f64 {
        let v = &self.s_tilde * (&self.s_inv * &self.c);
        self.project(nu, &v)
    }

    pub fn var_leading(&self, nu: usize) -> f64 {
        self.sandwich(nu, &self.s_star)
    }

    pub fn var_rough(&self, nu: usize) -> f64 {
        self.sandwich(nu, &self.a)
    }

    /// e_nu' S^{-1} S~ S^{-1} S* S^{-1} e_nu (vanishes by parity).
    pub fn parity_form_design(&self, nu: usize) -> f64 {
        let r = self.s_inv_row(nu);
        let m = &self.s_tilde * &self.s_inv * &self.s_star;
        (r.transpose() * m * &r)[(0, 0)]
    }

    pub fn summary(&self) -> TableauSummary {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        let forms = (0..=self.p)
            .map(|nu| ScalarForms {
                nu,
                bias_first: self.bias_first(nu),
                bias_tilde: self.bias_tilde(nu),
                bias_design: self.bias_design(nu),
                var_leading: self.var_leading(nu),
                var_rough: self.var_rough(nu),
                var_a1: self.sandwich(nu, &self.a1),
                var_a2: self.sandwich(nu, &self.a2),
                var_a3: self.sandwich(nu, &self.a3),
                var_b: self.sandwich(nu, &self.b),
            })
            .collect();
        TableauSummary {
            kernel: self.kernel_id.clone(),
            p: self.p,
            moments: self.moments.clone(),
            c: self.c.iter().copied().collect(),
            c_tilde: self.c_tilde.iter().copied().collect(),
            s: rows(&self.s),
            s_tilde: rows(&self.s_tilde),
            s_star: rows(&self.s_star),
            a: rows(&self.a),
            b: rows(&self.b),
            a1: rows(&self.a1),
            a2: rows(&self.a2),
            a3: rows(&self.a3),
            s_inverse: rows(&self.s_inv),
            condition: self.condition,
            forms,
        }
    }
}

/// JSON view of a tableau.
#[derive(Debug, Clone, Serialize)]
pub struct TableauSummary {
    pub kernel: String,
    pub p: usize,
    pub moments: Vec<f64>,
    pub c: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub s_tilde: Vec<Vec<f64>>,
    pub s_star: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub a3: Vec<Vec<f64>>,
    pub s_inverse: Vec<Vec<f64>>,
    pub condition: f64,
    pub forms: Vec<ScalarForms>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarForms {
    pub nu: usize,
    pub bias_first: f64,
    pub bias_tilde: f64,
    pub bias_design: f64,
    pub var_leading: f64,
    pub var_rough: f64,
    pub var_a1: f64,
    pub var_a2: f64,
    pub var_a3: f64,
    pub var_b: f64,
}

pub(crate) fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Tableau for a built-in kernel, cached by (kernel id, p). Custom kernels
/// are rebuilt on every call.
pub fn tableau(kernel: &Kernel, p: usize) -> Result<Arc<KernelTableau>> {
    static CACHE: OnceLock<Mutex<HashMap<(String, usize), Arc<KernelTableau>>>> = OnceLock::new();
    if matches!(kernel.kind, KernelKind::Custom { .. }) {
        return KernelTableau::build(kernel, p).map(Arc::new);
    }
    let key = (kernel.id(), p);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("tableau cache poisoned").get(&key) {
        return Ok(Arc::clone(t));
    }
    let built = Arc::new(KernelTableau::build(kernel, p)?);
    cache
        .lock()
        .expect("tableau cache poisoned")
        .insert(key, Arc::clone(&built));
    Ok(built)
}
