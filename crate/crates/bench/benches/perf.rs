use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use slt_bench::brownian_path;
use slt_core::change_of_variable::cvf_lhs_value;
use slt_core::exposure::{ee_forward, ee_mc};
use slt_core::level_curves::extract_branches;
use slt_core::local_time::{occupation_value, tanaka_value};
use slt_core::sde::simulate;
use slt_core::{
    DensityModel, Ensemble, LevelSpec, PathGrid, Rect, SdeModel, Side, Surface, Thresholds,
    TraceOptions,
};

const N: usize = 1 << 14;

fn bench_simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(N as u64));
    let grid = PathGrid::new(1.0, N);
    let cases = [
        ("brownian", SdeModel::brownian()),
        ("gbm", SdeModel::gbm(0.05, 0.2, 1.0)),
        ("custom", SdeModel::custom_from_sources("0.1*(1 - x)", "0.3 + 0.1*sin(x)", 1.0).unwrap()),
    ];
    for (name, model) in &cases {
        g.bench_function(*name, |b| {
            let mut seed = 0u64;
            b.iter(|| {
                seed += 1;
                simulate(model, grid, seed).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_estimators(c: &mut Criterion) {
    let mut g = c.benchmark_group("local_time");
    g.throughput(Throughput::Elements(N as u64));
    let path = brownian_path(N);
    let spec = LevelSpec::new(0.0, 0.02, Side::Symmetric).unwrap();
    let v = Surface::parse("x^2 - t").unwrap();
    g.bench_function("tanaka", |b| b.iter(|| tanaka_value(&path, 0.0, 1.0)));
    g.bench_function("occupation", |b| b.iter(|| occupation_value(&path, &spec, 1.0)));
    g.bench_function("composed_occupation", |b| {
        b.iter(|| cvf_lhs_value(&path, &v, 0.0, 0.02, 1.0))
    });
    g.finish();
}

fn bench_exposure(c: &mut Criterion) {
    let mut g = c.benchmark_group("exposure");
    g.sample_size(20);
    let model = SdeModel::brownian();
    let v = Surface::parse("x").unwrap();
    let times = [0.25, 0.5, 0.75, 1.0];
    let rect = Rect::new(0.0, 1.0, -4.0, 4.0);
    let branches =
        extract_branches(&v, &rect, 9, 257, &Thresholds::default(), &TraceOptions::default());
    let density = DensityModel::closed_form(&model).unwrap();
    g.bench_function("forward_quadrature", |b| {
        b.iter(|| ee_forward(&model, &v, &branches, &density, &times, false).unwrap())
    });
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 10), 100, 7);
    g.bench_function("monte_carlo_100_paths", |b| b.iter(|| ee_mc(&ens, &v, &times).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_simulate, bench_estimators, bench_exposure);
criterion_main!(benches);
