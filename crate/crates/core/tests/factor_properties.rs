use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;
use volgsc::factor::{
    cross_validate, fit_ife, fit_twoway, project_loadings, residuals, CvOptions, IfeInit, IfeOptions, PanelBlock,
};
use volgsc::rng;
use volgsc::sim::{simulate_panel, PanelSpec};

fn orthonormal(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Largest principal angle (degrees) between two column spaces.
fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = (orthonormal(a).transpose() * orthonormal(b)).singular_values();
    let min_cos = s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    min_cos.acos().to_degrees()
}

fn recovery_block(seed: u64) -> (PanelBlock, volgsc::sim::Truth) {
    let sim = simulate_panel(&PanelSpec::factor_recovery(28, 160, 2, 5.0), seed).unwrap();
    (PanelBlock::controls(&sim.panel), sim.truth)
}

#[test]
fn factor_space_is_recovered() {
    for seed in 0..5 {
        let (block, truth) = recovery_block(seed);
        let model = fit_ife(&block, 2, &IfeOptions::default()).unwrap();
        // the within transform removes the time mean, so compare demeaned factors
        let mut f = truth.factors.clone();
        for mut col in f.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let angle = max_principal_angle(&model.factors, &f);
        assert!(angle < 5.0, "seed {seed}: {angle} degrees");
    }
}

#[test]
fn normalization_holds_on_every_fit() {
    for (seed, r) in [(1, 1), (2, 2), (3, 3), (4, 4)] {
        let (block, _) = recovery_block(seed);
        let m = fit_ife(&block, r, &IfeOptions::default()).unwrap();
        let t = block.n_times() as f64;
        let ftf = m.factors.transpose() * &m.factors / t;
        assert!((ftf - DMatrix::identity(r, r)).amax() < 1e-8);
        let ltl = m.estimation_loadings().transpose() * m.estimation_loadings();
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    assert!(ltl[(i, j)].abs() < 1e-8 * (1.0 + ltl[(i, i)].abs()));
                }
            }
        }
    }
}

#[test]
fn objective_is_non_increasing() {
    for seed in 0..6 {
        let (block, _) = recovery_block(seed);
        let m = fit_ife(&block, 2, &IfeOptions::default()).unwrap();
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "seed {seed}: {:?}", w);
        }
    }
}

#[test]
fn beta_is_invariant_to_rotated_initial_factors() {
    let (block, _) = recovery_block(7);
    let mut g = rng::seeded(70);
    let f0 = DMatrix::from_fn(160, 2, |_, _| g.random::<f64>() - 0.5);
    let theta: f64 = 0.7;
    let rot = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]) * 3.0;
    let opts = |f: DMatrix<f64>| IfeOptions {
        init: IfeInit::Factors(f),
        ..IfeOptions::default()
    };
    let a = fit_ife(&block, 2, &opts(f0.clone())).unwrap();
    let b = fit_ife(&block, 2, &opts(&f0 * rot)).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn noiseless_fit_has_no_residual_variance() {
    let mut spec = PanelSpec::factor_recovery(28, 160, 2, 5.0);
    spec.noise_sd = 0.0;
    let block = PanelBlock::controls(&simulate_panel(&spec, 3).unwrap().panel);
    // at the default tolerance the stopping error alone leaves sigma2 near 1e-15
    let opts = IfeOptions {
        tol: 1e-11,
        ..IfeOptions::default()
    };
    let m = fit_ife(&block, 2, &opts).unwrap();
    assert!(m.sigma2 <= 1e-16, "{}", m.sigma2);
}

#[test]
fn zero_factors_equals_twoway() {
    let (block, _) = recovery_block(8);
    let a = fit_ife(&block, 0, &IfeOptions::default()).unwrap();
    let b = fit_twoway(&block).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-8);
    }
    assert!((residuals(&a, &block) - residuals(&b, &block)).amax() < 1e-8);
}

#[test]
fn cross_validation_is_deterministic_and_singleton_is_forced() {
    let sim = simulate_panel(&PanelSpec::factor_recovery(28, 160, 2, 5.0), 9).unwrap();
    let opts = CvOptions::default();
    let a = cross_validate(&sim.panel, 0..=4, &opts).unwrap();
    let b = cross_validate(&sim.panel, 0..=4, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(cross_validate(&sim.panel, 2..=2, &opts).unwrap().selected_r, 2);
    assert_eq!(a.selected_r, 2);
}

#[test]
fn projected_loadings_beat_random_perturbations() {
    let mut g = rng::seeded(11);
    let f = DMatrix::from_fn(40, 3, |_, _| g.random::<f64>() - 0.5);
    let y = DMatrix::from_fn(40, 1, |_, _| g.random::<f64>() * 2.0 - 1.0);
    let lambda = project_loadings(&f, &y).unwrap();
    let sse = |l: &DMatrix<f64>| (&y - &f * l.transpose()).norm_squared();
    let best = sse(&lambda);
    for _ in 0..100 {
        let d = DMatrix::from_fn(1, 3, |_, _| (g.random::<f64>() - 0.5) * 0.2);
        assert!(sse(&(&lambda + d)) >= best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn twoway_effects_identity_holds(seed in 0u64..1000) {
        // Y = X beta + alpha + xi exactly: the two-way fit has zero residual
        let mut g = rng::seeded(seed);
        let (n, t) = (6, 9);
        let x = DMatrix::from_fn(n, t, |_, _| g.random::<f64>());
        let a: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
        let b: Vec<f64> = (0..t).map(|_| g.random::<f64>()).collect();
        let y = DMatrix::from_fn(n, t, |i, s| 1.5 * x[(i, s)] + a[i] + b[s]);
        let block = PanelBlock::new(y, vec![x], vec!["x".into()]).unwrap();
        let m = fit_twoway(&block).unwrap();
        prop_assert!((m.beta[0] - 1.5).abs() < 1e-10);
        prop_assert!(residuals(&m, &block).amax() < 1e-10);
        prop_assert!(m.alpha.iter().sum::<f64>().abs() < 1e-10);
    }
}
