use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dichotomy::dynamics::{verify_dichotomy, Window};
use dichotomy::green::GreenOperator;
use dichotomy::linalg::DEFAULT_RANK_TOL;
use dichotomy::problems::random_manufactured;
use dichotomy::Execution;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut m = vec![("sequential", Execution::Sequential)];
    if Execution::parallel_available() {
        m.push(("parallel", Execution::Parallel));
    }
    m
}

fn green_apply_all(c: &mut Criterion) {
    let mut group = c.benchmark_group("green_apply_all");
    for &d in &[8usize, 24] {
        let problem = random_manufactured(d, 7, (0.5, 0.5), 2);
        let spec = &problem.spec;
        let window = Window::new(-8, 8, 60).unwrap();
        for (name, exec) in modes() {
            let green = GreenOperator::new(&spec.family, &spec.dichotomy, window, DEFAULT_RANK_TOL, exec).unwrap();
            group.bench_with_input(BenchmarkId::new(name, d), &d, |b, _| {
                b.iter(|| black_box(green.apply_all(&spec.h)))
            });
        }
    }
    group.finish();
}

fn dichotomy_check(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_dichotomy");
    let problem = random_manufactured(16, 11, (0.5, 0.5), 2);
    let spec = &problem.spec;
    let window = Window::new(-8, 8, 2).unwrap();
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| black_box(verify_dichotomy(&spec.family, &spec.dichotomy, &window, 1e-8, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, green_apply_all, dichotomy_check);
criterion_main!(benches);
