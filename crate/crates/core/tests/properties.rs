use std::sync::Arc;

use funcpoly::bandwidth::{cv_score_naive, CvPlan};
use funcpoly::covariance::{CovarianceModel, Smoothness};
use funcpoly::design::{quantile_grid, DesignGrid, SamplingDensity};
use funcpoly::kernels::{tableau, Kernel};
use funcpoly::locpoly::{
    curve_estimate, factorial, local_weights, Bandwidth, FitSpec, FunctionalSample, Polynomial, Regression,
};
use funcpoly::simlab::{quantile_type8, Experiment, ExperimentConfig, Quartiles};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    (0usize..3, 0.5f64..4.0).prop_map(|(k, tau)| match k {
        0 => Kernel::truncated_gaussian(tau).unwrap(),
        1 => Kernel::epanechnikov(tau).unwrap(),
        _ => Kernel::uniform(tau).unwrap(),
    })
}

fn uneven_grid(big_n: usize, jitter: &[f64]) -> Vec<f64> {
    let step = 1.0 / (big_n - 1) as f64;
    (0..big_n)
        .map(|j| {
            if j == 0 || j == big_n - 1 {
                j as f64 * step
            } else {
                (j as f64 + 0.4 * jitter[j % jitter.len()]) * step
            }
        })
        .collect()
}

struct Shifted(Arc<dyn Regression>, f64);

impl Regression for Shifted {
    fn derivative(&self, order: usize, x: f64) -> f64 {
        self.0.derivative(order, x) + if order == 0 { self.1 } else { 0.0 }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polynomials_of_degree_p_are_reproduced(
        kernel in kernel_strategy(),
        p in 0usize..=3,
        nu_frac in 0.0f64..1.0,
        coef in prop::collection::vec(-3.0f64..3.0, 4),
        jitter in prop::collection::vec(-1.0f64..1.0, 7),
        x in 0.0f64..1.0,
        h_scale in 0.3f64..3.0,
        unbounded in any::<bool>(),
    ) {
        let nu = ((p + 1) as f64 * nu_frac) as usize;
        let big_n = 41;
        let grid = uneven_grid(big_n, &jitter);
        let q = Polynomial(coef[..=p].to_vec());
        let h = if unbounded { Bandwidth::Unbounded } else { Bandwidth::Finite(h_scale * 0.25 / kernel.tau()) };
        let spec = FitSpec::new(p, nu, h, kernel).unwrap();
        let values = DMatrix::from_fn(2, big_n, |_, j| q.value(grid[j]));
        let sample = FunctionalSample::new(DesignGrid::new(grid, "uneven").unwrap(), values).unwrap();
        let est = curve_estimate(&sample, &spec, &[x]).unwrap();
        let scale = 1.0 + q.derivative(nu, x).abs();
        prop_assert!((est[0].1 - q.derivative(nu, x)).abs() <= 1e-8 * scale,
            "{} vs {}", est[0].1, q.derivative(nu, x));
    }

    #[test]
    fn weight_rows_satisfy_moment_conditions(
        kernel in kernel_strategy(),
        p in 0usize..=3,
        nu_frac in 0.0f64..1.0,
        jitter in prop::collection::vec(-1.0f64..1.0, 5),
        x in 0.0f64..1.0,
    ) {
        let nu = ((p + 1) as f64 * nu_frac) as usize;
        let grid = uneven_grid(51, &jitter);
        let spec = FitSpec::new(p, nu, Bandwidth::Finite(0.3 / kernel.tau()), kernel).unwrap();
        let w = local_weights(&grid, &spec, x).unwrap().derivative_row(nu);
        for k in 0..=p {
            let m: f64 = grid.iter().zip(w.iter()).map(|(g, wj)| wj * (g - x).powi(k as i32)).sum();
            let want = if k == nu { factorial(nu) } else { 0.0 };
            prop_assert!((m - want).abs() < 1e-8, "k={k}: {m}");
        }
    }

    #[test]
    fn estimate_is_average_of_single_curve_fits(
        values in prop::collection::vec(-5.0f64..5.0, 4 * 21),
        x in 0.0f64..1.0,
        p in 0usize..=2,
    ) {
        let grid = DesignGrid::uniform(21).unwrap();
        let y = DMatrix::from_row_slice(4, 21, &values);
        let spec = FitSpec::new(p, 0, Bandwidth::Finite(0.3), Kernel::epanechnikov(1.0).unwrap()).unwrap();
        let pooled = curve_estimate(&FunctionalSample::new(grid.clone(), y.clone()).unwrap(), &spec, &[x]).unwrap()[0].1;
        let mut acc = 0.0;
        for i in 0..4 {
            let one = FunctionalSample::new(grid.clone(), y.rows(i, 1).into_owned()).unwrap();
            acc += curve_estimate(&one, &spec, &[x]).unwrap()[0].1;
        }
        prop_assert!((pooled - acc / 4.0).abs() < 1e-10);
    }

    #[test]
    fn kernel_parity_structure(kernel in kernel_strategy(), p in 0usize..=4) {
        let t = tableau(&kernel, p).unwrap();
        for k in 0..5 {
            prop_assert!(kernel.moment(2 * k + 1).abs() < 1e-12);
        }
        for nu in 0..=p {
            prop_assert!(t.parity_form_design(nu).abs() < 1e-10);
        }
    }

    #[test]
    fn jump_is_nonnegative_for_valid_covariances(
        mins in prop::collection::vec(0.0f64..2.0, 3),
        shifts in prop::collection::vec(0.0f64..1.0, 3),
        exps in prop::collection::vec((0.0f64..2.0, 0.1f64..30.0), 3),
        sqexps in prop::collection::vec((0.0f64..2.0, 0.05f64..2.0), 2),
        xs in prop::collection::vec(0.02f64..0.98, 20),
    ) {
        let (m2, s2, e2, q2) = (mins.clone(), shifts.clone(), exps.clone(), sqexps.clone());
        let rho = move |x: f64, y: f64| {
            let mut v = 0.0;
            for (w, c) in m2.iter().zip(&s2) {
                v += w * ((x + c).min(y + c));
            }
            for (w, l) in &e2 {
                v += w * (-l * (x - y).abs()).exp();
            }
            for (w, s) in &q2 {
                v += w * (-((x - y) / s).powi(2)).exp();
            }
            v
        };
        let numeric = CovarianceModel::custom("mixture", Smoothness::OffDiagonal, rho);
        let mut parts: Vec<CovarianceModel> = mins.iter().map(|w| CovarianceModel::Wiener.scaled(*w)).collect();
        parts.extend(exps.iter().map(|(w, l)| CovarianceModel::ou(*l).scaled(*w)));
        parts.extend(sqexps.iter().map(|(w, s)| CovarianceModel::sqexp(*s).scaled(*w)));
        let structured = CovarianceModel::Sum(parts);
        for x in xs {
            let a = numeric.alpha(x).unwrap();
            let b = structured.alpha(x).unwrap();
            prop_assert!(a >= -1e-8, "alpha({x}) = {a}");
            prop_assert!(b >= -1e-8);
            prop_assert!((a - b).abs() < 1e-5 * (1.0 + b));
        }
    }

    #[test]
    fn fast_cv_matches_leave_one_out_refits(
        n in 2usize..=10,
        big_n in 5usize..=20,
        p in 0usize..=2,
        seed in prop::collection::vec(-3.0f64..3.0, 200),
    ) {
        let grid = DesignGrid::uniform(big_n).unwrap();
        let y = DMatrix::from_fn(n, big_n, |i, j| seed[(i * big_n + j) % seed.len()] + (i * j) as f64 * 0.01);
        let sample = FunctionalSample::new(grid.clone(), y).unwrap();
        let kernel = Kernel::truncated_gaussian(1.0).unwrap();
        let plan = CvPlan::new(grid.points(), n, p, &kernel).unwrap();
        for (i, fast) in plan.scores(&sample).unwrap() {
            let naive = cv_score_naive(&sample, p, &kernel, plan.candidates()[i]).unwrap();
            prop_assert!((fast - naive).abs() <= 1e-10 * (1.0 + naive.abs()), "{fast} vs {naive}");
        }
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let q = Quartiles::from_values(&values).unwrap();
        prop_assert!(q.q1 <= q.median && q.median <= q.q3);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= q.q1 && q.q3 <= hi);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(quantile_type8(&sorted, 0.5), q.median);
    }

    #[test]
    fn bandwidth_serde_round_trip(h in prop::option::of(1e-6f64..10.0)) {
        let b = match h {
            Some(v) => Bandwidth::Finite(v),
            None => Bandwidth::Unbounded,
        };
        let text = serde_json::to_string(&b).unwrap();
        let back: Bandwidth = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(b, back);
        let parsed: Bandwidth = b.to_string().parse().unwrap();
        prop_assert_eq!(b, parsed);
    }

    #[test]
    fn quantile_grid_hits_cdf_levels(a in -0.95f64..20.0, big_n in 2usize..60) {
        let f = SamplingDensity::linear(a).unwrap();
        let grid = quantile_grid(&f, big_n).unwrap();
        let pts = grid.points();
        prop_assert_eq!(pts[0], 0.0);
        prop_assert_eq!(pts[big_n - 1], 1.0);
        for (j, x) in pts.iter().enumerate() {
            prop_assert!((f.cdf(*x) - j as f64 / (big_n - 1) as f64).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn l2_error_is_shift_equivariant(shift in -50.0f64..50.0, seed in 0u64..1000) {
        let mut cfg = ExperimentConfig::new("m1", "wiener", 5, 15, 0, 1);
        cfg.methods = vec![funcpoly::bandwidth::Method::Exact, funcpoly::bandwidth::Method::Asymptotic];
        cfg.replications = 30;
        cfg.seed = seed;
        let truth: Arc<dyn Regression> = Arc::new(funcpoly::simlab::CatalogRegression::Quartic);
        let base = Experiment::with_parts(cfg.clone(), truth.clone(), CovarianceModel::Wiener)
            .unwrap()
            .run(Some(1))
            .unwrap();
        let moved = Experiment::with_parts(cfg, Arc::new(Shifted(truth, shift)), CovarianceModel::Wiener)
            .unwrap()
            .run(Some(1))
            .unwrap();
        prop_assert_eq!(base.h_ex, moved.h_ex);
        for (a, b) in [(base.l2_ex, moved.l2_ex), (base.l2_as, moved.l2_as)] {
            let (a, b) = (a.unwrap(), b.unwrap());
            prop_assert!((a.median - b.median).abs() < 1e-9 * (1.0 + shift.abs()));
            prop_assert!((a.q1 - b.q1).abs() < 1e-9 * (1.0 + shift.abs()));
            prop_assert!((a.q3 - b.q3).abs() < 1e-9 * (1.0 + shift.abs()));
        }
    }
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let mut cfg = ExperimentConfig::new("m2", "ou:15", 10, 30, 0, 1);
    cfg.replications = 40;
    cfg.seed = 17;
    let serial = Experiment::new(cfg.clone()).unwrap().run(Some(1)).unwrap();
    let parallel = Experiment::new(cfg.clone()).unwrap().run(Some(8)).unwrap();
    let again = Experiment::new(cfg).unwrap().run(None).unwrap();
    let text = serde_json::to_string(&serial).unwrap();
    assert_eq!(text, serde_json::to_string(&parallel).unwrap());
    assert_eq!(text, serde_json::to_string(&again).unwrap());
}

#[test]
fn oracle_median_is_not_beaten_beyond_noise() {
    let mut cfg = ExperimentConfig::new("m1", "wiener", 50, 50, 0, 1);
    cfg.kernel = "truncated-gaussian:4".into();
    cfg.replications = 1000;
    cfg.seed = 5;
    let r = Experiment::new(cfg).unwrap().run(None).unwrap();
    let ex = r.l2_ex.unwrap().median;
    assert!(ex <= 1.05 * r.l2_as.unwrap().median);
    assert!(ex <= 1.05 * r.l2_cv.unwrap().median);
}
