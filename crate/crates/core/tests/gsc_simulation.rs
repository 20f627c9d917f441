use volgsc::diagnostics::{equivalence_test, in_space_placebo};
use volgsc::gsc::{estimate_att, estimate_per_unit, BootstrapConfig, CiScheme, FactorSelection, GscConfig};
use volgsc::sim::{simulate_panel, PanelSpec};

fn with_bootstrap(reps: usize, seed: u64) -> GscConfig {
    GscConfig {
        bootstrap: Some(BootstrapConfig {
            reps,
            ..BootstrapConfig::default()
        }),
        seed,
        ..GscConfig::default()
    }
}

#[test]
fn per_unit_effects_are_recovered() {
    let spec = PanelSpec::adoption_study(0.0, 0.3).with_effects(vec![0.0, 1.0, 2.0]);
    let mut err = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let sim = simulate_panel(&spec, 40 + seed).unwrap();
        let cfg = GscConfig::default().point_only();
        for (k, unit) in sim.panel.treated_set().iter().enumerate() {
            let res = estimate_per_unit(&sim.panel, unit, &cfg).unwrap();
            err[k] += (res.avg_att - spec.effects[k]).abs() / seeds as f64;
        }
    }
    assert!(err.iter().all(|&e| e < 0.15), "{err:?}");
}

#[test]
fn percentile_interval_covers_true_effect() {
    let runs = 50;
    let mut covered = 0;
    for seed in 0..runs {
        let sim = simulate_panel(&PanelSpec::adoption_study(1.0, 0.3), 2000 + seed).unwrap();
        let inf = estimate_att(&sim.panel, &with_bootstrap(200, seed)).unwrap().inference.unwrap();
        if inf.ci_lower <= 1.0 && 1.0 <= inf.ci_upper {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.88 * runs as f64, "{covered}/{runs}");
}

#[test]
fn normal_interval_is_centred_on_estimate() {
    let sim = simulate_panel(&PanelSpec::adoption_study(1.0, 0.3), 3).unwrap();
    let mut cfg = with_bootstrap(200, 1);
    cfg.bootstrap.as_mut().unwrap().ci = CiScheme::Normal;
    let res = estimate_att(&sim.panel, &cfg).unwrap();
    let inf = res.inference.unwrap();
    assert!(((inf.ci_lower + inf.ci_upper) / 2.0 - res.avg_att).abs() < 1e-12);
}

#[test]
fn well_fit_null_panels_show_equivalence() {
    let runs = 20;
    let mut pass = 0;
    for seed in 0..runs {
        let sim = simulate_panel(&PanelSpec::adoption_study(0.0, 0.1), 500 + seed).unwrap();
        let res = estimate_att(&sim.panel, &with_bootstrap(200, seed)).unwrap();
        if equivalence_test(&res, None).unwrap().overall {
            pass += 1;
        }
    }
    assert!(pass as f64 >= 0.8 * runs as f64, "{pass}/{runs}");
}

#[test]
fn in_space_placebo_p_is_roughly_uniform_under_exchangeability() {
    let seeds = 20;
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut spec = PanelSpec::adoption_study(0.0, 0.3).with_effects(vec![0.0]);
        spec.n_ctrl = 15;
        spec.n_times = 60;
        spec.treated_t0 = vec![40];
        let panel = simulate_panel(&spec, 700 + seed).unwrap().panel;
        let cfg = GscConfig {
            factors: FactorSelection::Auto { max: 3 },
            ..GscConfig::default().point_only()
        };
        let true_att = estimate_att(&panel, &cfg).unwrap().avg_att;
        let rep = in_space_placebo(&panel, true_att, &[panel.times[40]], &cfg).unwrap();
        total += rep.empirical_p.unwrap();
    }
    let mean = total / seeds as f64;
    assert!((0.35..=0.65).contains(&mean), "{mean}");
}
