use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use westervelt_core::assembly::{
    assemble_matrix, local_stiffness, local_weighted_mass, mass, stiffness, weighted_mass, CoefficientField,
};
use westervelt_core::convergence::{fit_power, fit_start, h1_seminorm, l2_norm, order, Norms};
use westervelt_core::fespace::{nodal_interpolate, FeFunction, FeSpace};
use westervelt_core::linalg::{pcg, SparseMatrix};
use westervelt_core::mesh::{channel_mesh, focus_mesh, interval_mesh, rectangle_mesh, BoundaryTag};
use westervelt_core::Exec;

fn interval_space(n: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Arc::new(interval_mesh(1.0, n, BoundaryTag::Dirichlet).unwrap())))
}

fn square_space(nx: usize, ny: usize) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Arc::new(rectangle_mesh(0.0, 1.0, 0.0, 2.0, nx, ny, BoundaryTag::Dirichlet).unwrap())))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn residual_norm(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.spmv(x).unwrap();
    ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spmv_is_linear(n in 2usize..40, seed in any::<u64>(), s in -10.0f64..10.0, t in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = interval_space(n);
        let a = weighted_mass(&space, CoefficientField::Function(&|p| 1.0 + p[0] * p[0]));
        let x: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let comb: Vec<f64> = x.iter().zip(&y).map(|(x, y)| s * x + t * y).collect();
        let lhs = a.spmv(&comb).unwrap();
        let ax = a.spmv(&x).unwrap();
        let ay = a.spmv(&y).unwrap();
        let scale = ax.iter().chain(&ay).fold(0.0f64, |m, v| m.max(v.abs())) * (s.abs() + t.abs()).max(1.0);
        for i in 0..=n {
            prop_assert!((lhs[i] - (s * ax[i] + t * ay[i])).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn norms_are_homogeneous(n in 2usize..64, seed in any::<u64>(), s in -1e6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = interval_space(n);
        let dofs: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = FeFunction::new(space.clone(), dofs.clone()).unwrap();
        let g = FeFunction::new(space, dofs.iter().map(|v| s * v).collect()).unwrap();
        prop_assert!(rel_close(l2_norm(&g), s.abs() * l2_norm(&f), 1e-12));
        prop_assert!(rel_close(h1_seminorm(&g), s.abs() * h1_seminorm(&f), 1e-12));
    }

    #[test]
    fn order_of_exact_powers(e in 1e-12f64..1e3, p in 1usize..=3) {
        let o = order(e, e / 2f64.powi(p as i32)).unwrap();
        prop_assert!((o - p as f64).abs() <= 1e-12);
    }

    #[test]
    fn pcg_residual_contract_on_dense_spd(n in 1usize..=50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_mat: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // A = B^T B + (n/4) I: SPD with a condition number of order ten, so
        // rounding cannot stretch the iteration count far past n.
        let shift = n as f64 / 4.0;
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| b_mat[k][i] * b_mat[k][j]).sum::<f64>() + if i == j { shift } else { 0.0 }).collect())
            .collect();
        let a = SparseMatrix::from_dense(&dense).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, report) = pcg(&a, &b, 1e-12, 10 * n).unwrap();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(residual_norm(&a, &x, &b) <= 1e-12 * bn * (1.0 + 1e-6));
        prop_assert!(report.iterations <= n + 5, "{} iterations for n = {}", report.iterations, n);
    }

    #[test]
    fn pcg_residual_contract_on_assembled_systems(nx in 1usize..12, ny in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = square_space(nx, ny);
        let w: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut a = weighted_mass(&space, CoefficientField::Nodal(&w));
        a.add_scaled(0.01, &stiffness(&space)).unwrap();
        let b: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, _) = pcg(&a, &b, 1e-10, 10 * space.n_dofs()).unwrap();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(residual_norm(&a, &x, &b) <= 1e-10 * bn * (1.0 + 1e-6));
    }

    #[test]
    fn assembly_is_additive_over_elements(nx in 1usize..8, ny in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = square_space(nx, ny);
        let ne = space.mesh().n_elements();
        let (left, right): (Vec<usize>, Vec<usize>) = (0..ne).partition(|_| rng.gen_bool(0.5));
        let local = |e| local_stiffness(&space, e);
        let full = assemble_matrix(&space, Exec::Sequential, None, local);
        let mut split = assemble_matrix(&space, Exec::Sequential, Some(&left), local);
        split.add_scaled(1.0, &assemble_matrix(&space, Exec::Sequential, Some(&right), local)).unwrap();
        for (a, b) in full.values().iter().zip(split.values()) {
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
        // and the weighted mass, element by element
        let w = |_: usize| 0.7;
        let m = assemble_matrix(&space, Exec::Sequential, None, |e| local_weighted_mass(&space, e, w));
        let mut acc = SparseMatrix::zeros(space.pattern().clone());
        for e in 0..ne {
            acc.add_scaled(1.0, &assemble_matrix(&space, Exec::Sequential, Some(&[e]), |e| local_weighted_mass(&space, e, w))).unwrap();
        }
        for (a, b) in m.values().iter().zip(acc.values()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn weighted_mass_is_spd_and_bounded_below(nx in 1usize..8, ny in 1usize..8, seed in any::<u64>(), w0 in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = square_space(nx, ny);
        let w: Vec<f64> = (0..space.n_dofs()).map(|_| w0 + rng.gen_range(0.0..3.0)).collect();
        let mw = weighted_mass(&space, CoefficientField::Nodal(&w));
        let m1 = mass(&space);
        prop_assert!(mw.is_symmetric(1e-12));
        for _ in 0..100 {
            let x: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = mw.quadratic_form(&x).unwrap();
            prop_assert!(q >= 0.0);
            prop_assert!(q >= w0 * m1.quadratic_form(&x).unwrap() - 1e-12);
        }
    }

    #[test]
    fn partition_of_unity_and_linear_reproduction(level in 1usize..3, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let space = Arc::new(FeSpace::new(Arc::new(focus_mesh(level).unwrap())));
        let one = nodal_interpolate(&space, |_| 1.0).unwrap();
        let lin = nodal_interpolate(&space, |p| a * p[0] + b * p[1]).unwrap();
        let quad = space.quadrature();
        for e in (0..space.mesh().n_elements()).step_by(7) {
            for q in 0..quad.n_qp() {
                let p = quad.point(e, q);
                prop_assert!((one.eval(p).unwrap() - 1.0).abs() <= 1e-14);
                prop_assert!((lin.eval(p).unwrap() - (a * p[0] + b * p[1])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fit_recovers_random_models(alpha in 0.5f64..2000.0, beta in 0.1f64..10.0, gamma in 1.0f64..2.5) {
        let h: Vec<f64> = (0..5).map(|k| 0.1 / 2f64.powi(k)).collect();
        let q: Vec<f64> = h.iter().map(|h| alpha + beta * h.powf(gamma)).collect();
        let fit = fit_power(&h, &q, fit_start(&h, &q)).unwrap();
        prop_assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((fit.gamma - gamma).abs() <= 1e-6, "gamma {} vs {}", fit.gamma, gamma);
        prop_assert!((fit.alpha - alpha).abs() <= 1e-6 * alpha);
        prop_assert!((fit.beta - beta).abs() <= 1e-6 * beta);
    }
}

#[test]
fn assembled_matrices_are_symmetric() {
    for level in 1..=3 {
        let space = FeSpace::new(Arc::new(focus_mesh(level).unwrap()));
        assert!(stiffness(&space).is_symmetric(1e-12));
        assert!(mass(&space).is_symmetric(1e-12));
        assert!(weighted_mass(&space, CoefficientField::Function(&|p| 1.0 + p[0] * p[1])).is_symmetric(1e-12));
    }
}

/// `max |chi| / (h^{-d/2} |chi|_{L2})` over random locally supported `chi`.
fn inverse_ratio(space: &Arc<FeSpace>, rng: &mut ChaCha8Rng) -> f64 {
    let norms = Norms::new(space.clone());
    let n = space.n_dofs();
    let d = space.dim() as f64;
    let h = space.h();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mut chi = vec![0.0; n];
        let start = rng.gen_range(0..n);
        let width = rng.gen_range(1..=3);
        for c in chi.iter_mut().skip(start).take(width) {
            *c = rng.gen_range(-1.0..1.0);
        }
        let l2 = norms.l2(&chi);
        if l2 == 0.0 {
            continue;
        }
        let linf = chi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(linf / (h.powf(-d / 2.0) * l2));
    }
    worst
}

#[test]
fn inverse_estimate_constant_is_level_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mesh_of in [channel_mesh as fn(usize) -> _, focus_mesh] {
        let ratios: Vec<f64> = (1..=5)
            .map(|level| inverse_ratio(&Arc::new(FeSpace::new(Arc::new(mesh_of(level).unwrap()))), &mut rng))
            .collect();
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 2.0, "ratios {ratios:?}");
    }
}
