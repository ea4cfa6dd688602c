use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rostf::fusion::{build_problem, default_params, initial_state};
use rostf::linops::{BlurDownsample, DiffOperator, LinearOperator};
use rostf::ppds::{compute_stepsizes, iterate};
use rostf::simulate::{make_fixture, CaseConfig, FixtureSpec};
use rostf::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];
const SIZES: [usize; 2] = [64, 256];

fn operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("operators");
    for size in SIZES {
        let spec = FixtureSpec::standard(1).with_size(size);
        let geom = spec.geometry().unwrap();
        let x: Vec<f64> = (0..geom.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        for (name, exec) in MODES {
            let d = DiffOperator::stacked(geom).with_exec(exec);
            let mut dx = vec![0.0; d.output_len()];
            group.bench_with_input(BenchmarkId::new(format!("D/{name}"), size), &x, |b, x| {
                b.iter(|| d.apply(black_box(x), &mut dx))
            });
            let mut back = vec![0.0; d.input_len()];
            group.bench_with_input(BenchmarkId::new(format!("Dt/{name}"), size), &dx.clone(), |b, y| {
                b.iter(|| d.apply_adjoint(black_box(y), &mut back))
            });
            let sb = BlurDownsample::new(geom, spec.k).unwrap().with_exec(exec);
            let mut lr = vec![0.0; sb.output_len()];
            group.bench_with_input(BenchmarkId::new(format!("SB/{name}"), size), &x, |b, x| {
                b.iter(|| sb.apply(black_box(x), &mut lr))
            });
        }
    }
    group.finish();
}

fn solver_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("ppds_iteration");
    group.sample_size(20);
    for size in SIZES {
        let spec = FixtureSpec::standard(1).with_size(size);
        let noise = CaseConfig::case4(1);
        let fixture = make_fixture(&spec, &noise).unwrap();
        let params = default_params(&fixture.inputs, &noise, 1).unwrap();
        for (name, exec) in MODES {
            let problem = build_problem(&fixture.inputs, &params, exec).unwrap();
            let steps = compute_stepsizes(&problem.graph).unwrap();
            let state = initial_state(&problem, &fixture.inputs, spec.k).unwrap();
            group.bench_with_input(BenchmarkId::new(name, size), &state, |b, s| {
                b.iter(|| iterate(&problem.graph, black_box(s), &steps).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, operators, solver_iteration);
criterion_main!(benches);
