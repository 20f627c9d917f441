//! Sequential vs rayon execution of the embarrassingly parallel sweeps.
//! Build with `--no-default-features` to confirm both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use volgsc::diagnostics::in_space_placebo;
use volgsc::factor::{cross_validate, CvOptions};
use volgsc::gsc::{estimate_att, BootstrapConfig, FactorSelection, GscConfig};
use volgsc::par::Execution;
use volgsc::sim::{simulate_panel, PanelSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn panel() -> volgsc::dataio::PanelData {
    simulate_panel(&PanelSpec::adoption_study(1.0, 0.3), 1).unwrap().panel
}

fn bootstrap(c: &mut Criterion) {
    let panel = panel();
    let mut group = c.benchmark_group("bootstrap_b200");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = GscConfig {
            factors: FactorSelection::Fixed(3),
            bootstrap: Some(BootstrapConfig {
                reps: 200,
                ..BootstrapConfig::default()
            }),
            execution,
            ..GscConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_att(&panel, &cfg).unwrap())
        });
    }
    group.finish();
}

fn cv(c: &mut Criterion) {
    let panel = panel();
    let mut group = c.benchmark_group("cross_validate_r0_5");
    group.sample_size(10);
    for (name, execution) in MODES {
        let opts = CvOptions {
            execution,
            ..CvOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_validate(&panel, 0..=5, &opts).unwrap())
        });
    }
    group.finish();
}

fn placebo(c: &mut Criterion) {
    let panel = panel();
    let dates = [panel.times[121]];
    let mut group = c.benchmark_group("in_space_placebo");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = GscConfig {
            factors: FactorSelection::Auto { max: 3 },
            execution,
            ..GscConfig::default().point_only()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| in_space_placebo(&panel, 0.0, &dates, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bootstrap, cv, placebo);
criterion_main!(benches);
