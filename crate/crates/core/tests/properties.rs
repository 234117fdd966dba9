mod common;

use common::*;
use csdesign::designer::*;
use csdesign::estimators::*;
use csdesign::metrics::*;
use csdesign::model::*;
use csdesign::rng::seeded;
use csdesign::sdr::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn model(n: usize, k: usize, m: usize, g: f64, sv: f64, sw: f64, p: f64, rho: f64) -> SystemModel {
    SystemModel::builder(n, k, m)
        .source_covariance(exponential_correlation(k, rho).unwrap())
        .gain(g)
        .sigma_v(sv)
        .sigma_w(sw)
        .power(p)
        .build()
        .unwrap()
}

fn arb_model() -> impl Strategy<Value = SystemModel> {
    (4usize..8, 1usize..3, 0.2f64..1.5, 0.0f64..0.3, 0.05f64..0.5, 0.5f64..10.0, 0.0f64..0.8).prop_flat_map(
        |(n, k, g, sv, sw, p, rho)| (1..n).prop_map(move |m| model(n, k, m, g, sv, sw, p, rho)),
    )
}

fn psd(l: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let b = gaussian(l, l, &mut seeded(seed));
    b.transpose() * b * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn relaxed_objective_is_midpoint_convex(m in arb_model(), s1 in 0u64..1000, s2 in 0u64..1000) {
        let e = SupportEnsemble::full(m.n(), m.k()).unwrap();
        let q1 = psd(m.l(), s1, 0.3);
        let q2 = psd(m.l(), s2 + 1000, 0.3);
        let mid = (&q1 + &q2) * 0.5;
        let f = |q: &DMatrix<f64>| relaxed_objective(&m, &e, q).unwrap();
        prop_assert!(f(&mid) <= 0.5 * (f(&q1) + f(&q2)) * (1.0 + 1e-12));
    }

    #[test]
    fn bound_invariant_under_left_orthogonal(m in arb_model(), seed in 0u64..1000) {
        let e = SupportEnsemble::full(m.n(), m.k()).unwrap();
        let mut rng = seeded(seed);
        let a = gaussian(m.m(), m.l(), &mut rng);
        let u = haar_orthogonal(m.m(), &mut rng);
        let b1 = mse_lower_bound(&m, &e, &a).unwrap().value;
        let b2 = mse_lower_bound(&m, &e, &(u * &a)).unwrap().value;
        prop_assert!((b1 - b2).abs() <= 1e-9 * b1);
    }

    #[test]
    fn designs_spend_exactly_the_budget(m in arb_model(), seed in 0u64..1000) {
        let e = SupportEnsemble::full(m.n(), m.k()).unwrap();
        let mut rng = seeded(seed);
        let designs = [
            design_lower_bound(&m, &e, &DesignOptions::default()).unwrap().matrix,
            design_upper_bound(&m, &DesignOptions::default()).unwrap().matrix,
            design_gaussian(&m, &mut rng).unwrap(),
            design_tight_frame(&m, &mut rng).unwrap(),
        ];
        for d in designs {
            let p = transmit_power(&m, &d.a).unwrap();
            prop_assert!((p - m.power()).abs() <= 1e-9 * m.power(), "{} {}", d.method, p);
        }
    }

    #[test]
    fn estimators_are_linear_in_y(m in arb_model(), seed in 0u64..1000, c in -3.0f64..3.0) {
        let mut rng = seeded(seed);
        let a = gaussian(m.m(), m.l(), &mut rng);
        let ctx = EstimationContext::new(&m, &a).unwrap();
        let y1 = gaussian_vec(m.m(), &mut rng);
        let y2 = gaussian_vec(m.m(), &mut rng);
        let y = &y1 * c + &y2;
        let support: Vec<usize> = (0..m.k()).collect();
        let lin = |f: &dyn Fn(&nalgebra::DVector<f64>) -> nalgebra::DVector<f64>| {
            let lhs = f(&y);
            let rhs = f(&y1) * c + f(&y2);
            (lhs - &rhs).norm() <= 1e-9 * (1.0 + rhs.norm())
        };
        prop_assert!(lin(&|v| ctx.lmmse(v).unwrap().x_hat));
        prop_assert!(lin(&|v| ctx.oracle(v, &support).unwrap().x_hat));
    }

    #[test]
    fn omp_support_ignores_scaling(m in arb_model(), seed in 0u64..1000, c in 0.01f64..100.0) {
        // With one measurement every normalized correlation is |y|: all ties.
        prop_assume!(m.m() >= 2);
        let mut rng = seeded(seed);
        let a = gaussian(m.m(), m.l(), &mut rng);
        let ctx = EstimationContext::new(&m, &a).unwrap();
        let y = gaussian_vec(m.m(), &mut rng);
        let s1 = ctx.omp(&y).unwrap().support_estimate;
        let s2 = ctx.omp(&(&y * c)).unwrap().support_estimate;
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn sampled_with_every_support_equals_full(n in 4usize..9, k in 1usize..4, seed in 0u64..100) {
        let full = SupportEnsemble::full(n, k).unwrap();
        let s = SupportEnsemble::sampled(n, k, full.len(), seed).unwrap();
        prop_assert!(full.iter().eq(s.iter()));
        let m = model(n, k, 2, 0.5, 0.0, 0.1, 3.0, 0.3);
        let a = gaussian(2, n, &mut seeded(seed));
        prop_assert_eq!(mse_lower_bound(&m, &full, &a).unwrap().value, mse_lower_bound(&m, &s, &a).unwrap().value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn more_power_never_hurts(m in arb_model()) {
        let e = SupportEnsemble::full(m.n(), m.k()).unwrap();
        let opts = SolverOptions::default();
        let (lo, _) = solve_sdr(&m, &e, &opts).unwrap();
        let doubled = m.with_power(2.0 * m.power()).unwrap();
        let (hi, _) = solve_sdr(&doubled, &e, &opts).unwrap();
        prop_assert!(hi.objective <= lo.objective * (1.0 + 1e-9));
    }

    #[test]
    fn solver_iterates_never_increase(m in arb_model()) {
        let e = SupportEnsemble::full(m.n(), m.k()).unwrap();
        let (cand, trace) = solve_sdr(&m, &e, &SolverOptions::default()).unwrap();
        for w in trace.iterates.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective * (1.0 + 1e-12));
        }
        prop_assert!(cand.residuals.power_slack >= -1e-9 * m.power());
        prop_assert!(cand.residuals.min_eigenvalue >= -1e-9 * cand.q.norm());
    }
}
