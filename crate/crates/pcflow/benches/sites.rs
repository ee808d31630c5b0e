//! Per-site kernels on a single worker versus the default rayon pool.
//! Built with `--no-default-features` both arms run the sequential loops.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pcflow::flow::{pcf_rhs, step, FlowContext, FlowState, FlowVariant, Scheme, StepControl, stability_bound};
use pcflow::functionals::{diagnostics, DiagOptions};
use pcflow::grid::{make_grid, DerivativeMode};
use pcflow::scenarios::{generate, ScenarioKind, ScenarioSpec};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    let k = all.current_num_threads();
    vec![("1-thread".into(), one), (format!("default-{k}"), all)]
}

fn bench(c: &mut Criterion) {
    let grid = make_grid(2, 16, DerivativeMode::Spectral).unwrap();
    let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &grid).unwrap();
    let ctx = Arc::new(FlowContext::flat(FlowVariant::Pcf, &g));
    let s = FlowState::initial(g.clone(), ctx, true);
    let dt = stability_bound(&g, StepControl::default().c_cfl);
    let mut grp = c.benchmark_group("sites_n16");
    grp.sample_size(10);
    for (name, pool) in pools() {
        grp.bench_function(BenchmarkId::new("pcf_rhs", &name), |b| {
            b.iter(|| pool.install(|| pcf_rhs(&g)))
        });
        grp.bench_function(BenchmarkId::new("rk4_step", &name), |b| {
            b.iter(|| pool.install(|| step(&s, dt, Scheme::Rk4, &StepControl::default()).unwrap()))
        });
        grp.bench_function(BenchmarkId::new("diagnostics", &name), |b| {
            b.iter(|| pool.install(|| diagnostics(&s, &DiagOptions::default(), None).unwrap()))
        });
    }
    grp.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
