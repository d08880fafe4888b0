use dichotomy::green::{GreenOperator, Inhomogeneity};
use dichotomy::linalg::DEFAULT_RANK_TOL;
use dichotomy::nonlinear::{B0Variant, GeneratingProblem, IterationOptions};
use dichotomy::problems::{circle_toy, quadratic_toy, QuadraticToy};
use dichotomy::{Execution, LinearMap, Sequence};
use dichotomy_oracles::{log_log_slope, toy_root_square, WindowSystem};
use nalgebra::{DMatrix, DVector};

fn green(toy: &QuadraticToy) -> GreenOperator<'_> {
    GreenOperator::new(&toy.spec.family, &toy.spec.dichotomy, toy.spec.window, DEFAULT_RANK_TOL, Execution::Parallel)
        .unwrap()
}

/// Stacked Newton over the whole extended range, boundary rows picking the
/// growing coordinate at both ends.
fn stacked_reference(toy: &QuadraticToy, eps: f64, x0: &Sequence) -> Vec<DVector<f64>> {
    let d = toy.spec.dim();
    let a = |n: i64| toy.spec.family.coefficient(n);
    let h = |_: i64| DVector::zeros(d);
    let mut end_rows = DMatrix::zeros(1, d);
    end_rows[(0, d - 1)] = 1.0;
    let system = WindowSystem {
        dim: d,
        n_min: x0.start(),
        n_max: x0.end(),
        a: &a,
        h: &h,
        left: end_rows.clone(),
        right: end_rows,
    };
    let decay = toy.decay;
    let amp = toy.a;
    let hom = toy.homoclinic;
    let z = move |x: &DVector<f64>, n: i64| {
        let mut out = DVector::zeros(d);
        out[d - 1] = (0..hom).map(|i| x[i] * x[i]).sum::<f64>() - amp * (-decay * n.abs() as f64).exp2();
        out
    };
    let jz = move |x: &DVector<f64>, _: i64| {
        let mut j = DMatrix::zeros(d, d);
        for i in 0..hom {
            j[(d - 1, i)] = 2.0 * x[i];
        }
        j
    };
    system.newton(eps, &z, &jz, x0.values().to_vec(), 1e-15, 50).unwrap()
}

#[test]
fn newton_finds_both_roots_of_the_generating_equation() {
    let toy = quadratic_toy(0.5, 1.0);
    let g = green(&toy);
    let h = Inhomogeneity::zero(2);
    let nl = toy.spec.nonlinearity.clone().unwrap();
    let gp = GeneratingProblem::new(&g, &h, None, &nl, DEFAULT_RANK_TOL).unwrap();
    let expected = toy_root_square(0.5, 1.0, 400).sqrt();
    for sign in [1.0, -1.0] {
        let root = gp.solve_generating(&DVector::from_element(1, sign), 60, 1e-14).unwrap();
        assert!((root.c_star[0] - sign * expected).abs() < 1e-10, "{} vs {}", root.c_star[0], sign * expected);
        assert!(root.simple);

        let b0 = gp.b0(&root.t_star, B0Variant::Derivative).unwrap();
        let fd = gp.fd_jacobian(&root.t_star).unwrap();
        let rel = (&b0 - &fd).norm() / b0.norm();
        assert!(rel < 1e-6, "B0 vs finite differences: {rel:e}");
    }
}

#[test]
fn deviation_is_linear_in_eps_and_matches_stacked_newton() {
    let toy = quadratic_toy(0.5, 1.0);
    let g = green(&toy);
    let h = Inhomogeneity::zero(2);
    let nl = toy.spec.nonlinearity.clone().unwrap();
    let gp = GeneratingProblem::new(&g, &h, None, &nl, DEFAULT_RANK_TOL).unwrap();
    let root = gp.solve_generating(&DVector::from_element(1, 1.0), 60, 1e-14).unwrap();
    let x0 = gp.generating_solution(&root.t_star);

    let eps = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let mut dev = Vec::new();
    for &e in &eps {
        let opts = IterationOptions {
            eps: e,
            tol: 1e-14,
            ..Default::default()
        };
        let cont = gp.iterate_solution(&root, &opts).unwrap();
        assert!(cont.trace.converged);
        assert_eq!(cont.halvings, 0);
        assert!(gp.recursion_defect(&cont.x, e).unwrap() < 1e-12);
        dev.push(cont.x.sup_distance(&x0));
        if e == 1e-3 {
            let reference = stacked_reference(&toy, e, &x0);
            let w = toy.spec.window;
            for n in w.n_min..=w.n_max {
                let gap = (cont.x.at(n).unwrap() - &reference[(n - x0.start()) as usize]).amax();
                assert!(gap < 1e-8, "n = {n}: {gap:e}");
            }
        }
    }
    let slope = log_log_slope(&eps, &dev);
    assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn degenerate_root_gives_distinct_solutions_for_distinct_c_rho() {
    let toy = circle_toy(0.5, 1.0);
    let g = green(&toy);
    let h = Inhomogeneity::zero(3);
    let nl = toy.spec.nonlinearity.clone().unwrap();
    let gp = GeneratingProblem::new(&g, &h, None, &nl, DEFAULT_RANK_TOL).unwrap();
    let root = gp.solve_generating(&DVector::from_vec(vec![0.6, 0.2]), 60, 1e-14).unwrap();
    assert!(!root.simple);
    assert_eq!(dichotomy::linalg::rank(&root.pn_b0, 1e-9), 1);

    let tangent: LinearMap = root.pn_b0.clone();
    let mut solutions = Vec::new();
    for shift in [0.0, 0.05] {
        let c_rho = &tangent * DVector::from_vec(vec![shift, shift]);
        let opts = IterationOptions {
            eps: 1e-3,
            c_rho: Some(c_rho),
            tol: 1e-13,
            ..Default::default()
        };
        let cont = gp.iterate_solution(&root, &opts).unwrap();
        assert!(cont.trace.converged);
        assert!(gp.recursion_defect(&cont.x, 1e-3).unwrap() < 1e-8);
        solutions.push(cont.x);
    }
    assert!(solutions[0].sup_distance(&solutions[1]) > 1e-3);
}
