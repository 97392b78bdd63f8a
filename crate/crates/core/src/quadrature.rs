//! Numerical integration: Gauss–Legendre rules, adaptive Gauss–Legendre
//! bisection, and composite Simpson on (possibly uneven) meshes.

use std::f64::consts::PI;

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&t, &w)| (mid + half * t, half * w))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive integration by recursive bisection of a 20-point Gauss–Legendre
/// rule, stopping when the two halves agree with the parent to `tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    thread_local! {
        static RULE: GaussLegendre = GaussLegendre::new(20);
    }
    RULE.with(|rule| {
        let whole = rule.integrate(f, a, b);
        adaptive_step(rule, f, a, b, whole, tol, 0)
    })
}

fn adaptive_step<F: Fn(f64) -> f64>(
    rule: &GaussLegendre,
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(f, a, mid);
    let right = rule.integrate(f, mid, b);
    if (left + right - whole).abs() <= tol || depth >= 40 {
        return left + right;
    }
    adaptive_step(rule, f, a, mid, left, 0.5 * tol, depth + 1)
        + adaptive_step(rule, f, mid, b, right, 0.5 * tol, depth + 1)
}

/// Composite Simpson rule on a sorted mesh. Pairs of intervals are integrated
/// with the interpolating quadratic; an odd trailing interval uses the
/// quadratic through the last three nodes. Exact for quadratics on any mesh.
pub fn simpson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "mesh and values differ in length");
    match x.len() {
        0 | 1 => 0.0,
        2 => 0.5 * (x[1] - x[0]) * (y[0] + y[1]),
        len => {
            let mut total = 0.0;
            let mut i = 0;
            while i + 2 < len {
                total += quadratic_integral(&x[i..i + 3], &y[i..i + 3], x[i], x[i + 2]);
                i += 2;
            }
            if i + 1 < len {
                total += quadratic_integral(&x[len - 3..], &y[len - 3..], x[len - 2], x[len - 1]);
            }
            total
        }
    }
}

/// Simpson on `points` equally spaced nodes of [a, b] (`points` is rounded up to odd).
pub fn simpson_fn<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    let points = if points.is_multiple_of(2) { points + 1 } else { points.max(3) };
    let mesh = linspace(a, b, points);
    let vals: Vec<f64> = mesh.iter().map(|&t| f(t)).collect();
    simpson(&mesh, &vals)
}

fn quadratic_integral(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let d1 = (y[1] - y[0]) / (x1 - x0);
    let d12 = (y[2] - y[1]) / (x2 - x1);
    let d2 = (d12 - d1) / (x2 - x0);
    // q(t) = y0 + d1 (t - x0) + d2 (t - x0)(t - x1), integrated in the shifted variable s = t - x0
    let prim = |t: f64| {
        let s = t - x0;
        let h1 = x1 - x0;
        y[0] * s + d1 * s * s / 2.0 + d2 * (s * s * s / 3.0 - h1 * s * s / 2.0)
    };
    prim(b) - prim(a)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
            v[n - 1] = b;
            v
        }
    }
}

/// `n` log-spaced values from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}
