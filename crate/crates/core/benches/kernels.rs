//! Sequential against rayon-parallel execution of the hot kernels.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use westervelt_core::assembly::{stiffness_with, weighted_mass_with, CoefficientField};
use westervelt_core::config::{ExperimentConfig, ExperimentKind};
use westervelt_core::linalg::pcg_solve;
use westervelt_core::mesh::focus_mesh;
use westervelt_core::study::focus_problem;
use westervelt_core::wavesolver::westervelt_step;
use westervelt_core::{Exec, FeSpace, SolverConfig, WaveState};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spaces() -> Vec<(usize, Arc<FeSpace>)> {
    (3..=5).map(|l| (l, Arc::new(FeSpace::new(Arc::new(focus_mesh(l).unwrap()))))).collect()
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    g.sample_size(10);
    for (level, space) in spaces() {
        let w: Vec<f64> = (0..space.n_dofs()).map(|i| 1.0 + 1e-3 * (i % 7) as f64).collect();
        for (name, exec) in EXECS {
            g.bench_with_input(BenchmarkId::new(format!("stiffness/{name}"), level), &space, |b, s| {
                b.iter(|| black_box(stiffness_with(s, exec)))
            });
            g.bench_with_input(BenchmarkId::new(format!("weighted_mass/{name}"), level), &space, |b, s| {
                b.iter(|| black_box(weighted_mass_with(s, exec, CoefficientField::Nodal(&w))))
            });
        }
    }
    g.finish();
}

fn spmv(c: &mut Criterion) {
    let mut g = c.benchmark_group("spmv");
    for (level, space) in spaces() {
        let k = stiffness_with(&space, Exec::default());
        let x: Vec<f64> = (0..space.n_dofs()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; x.len()];
        for (name, exec) in EXECS {
            g.bench_function(BenchmarkId::new(name, level), |b| {
                b.iter(|| k.spmv_into_with(exec, black_box(&x), &mut y).unwrap())
            });
        }
    }
    g.finish();
}

fn pcg(c: &mut Criterion) {
    let mut g = c.benchmark_group("pcg");
    g.sample_size(10);
    for (level, space) in spaces() {
        // Effective Newmark matrix M + dt^2 c^2 K / 4 at the focus time step.
        let dt = 40e-6 / 3500.0;
        let mut a = weighted_mass_with(&space, Exec::default(), CoefficientField::Constant(1.0));
        a.add_scaled(0.25 * dt * dt * 1500.0 * 1500.0, &stiffness_with(&space, Exec::default())).unwrap();
        let rhs: Vec<f64> = (0..space.n_dofs()).map(|i| (i as f64 * 0.11).cos()).collect();
        for (name, exec) in EXECS {
            let cfg = SolverConfig { tol: 1e-10, max_iter: None, exec };
            g.bench_function(BenchmarkId::new(name, level), |b| {
                b.iter(|| {
                    let mut x = vec![0.0; rhs.len()];
                    pcg_solve(&a, &rhs, &mut x, &cfg).unwrap();
                    black_box(x)
                })
            });
        }
    }
    g.finish();
}

fn time_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("westervelt_step");
    g.sample_size(10);
    let cfg = ExperimentConfig::defaults(ExperimentKind::Focus);
    for level in [3, 4] {
        for (name, exec) in EXECS {
            let mut p = focus_problem(&cfg, level).unwrap();
            p.settings.pcg.exec = exec;
            let dt = p.time.dt();
            // a state part-way through the pulse, so the nonlinearity is active
            let mut state = WaveState::zeros(p.ops.n_dofs());
            for _ in 0..200 {
                state = westervelt_step(&p.ops, &state, dt, &p.settings).unwrap().0;
            }
            g.bench_function(BenchmarkId::new(name, level), |b| {
                b.iter(|| black_box(westervelt_step(&p.ops, &state, dt, &p.settings).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, assembly, spmv, pcg, time_step);
criterion_main!(benches);
