use dichotomy::dynamics::DichotomyData;
use dichotomy::green::{norm_bound, recursion_defect, trichotomy_identities, Forcing, GreenOperator, Inhomogeneity, TailRule};
use dichotomy::linalg::{spectral_norm, DEFAULT_RANK_TOL};
use dichotomy::problems::{random_manufactured, random_orthogonal};
use dichotomy::{Execution, LinearMap, StateVector};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn noise(d: usize, seed: u64) -> Inhomogeneity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table: BTreeMap<i64, StateVector> =
        (-2..=2).map(|n| (n, DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))).collect();
    Inhomogeneity::from_table(d, table, TailRule::Zero).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn manufactured_solutions_satisfy_the_recursion(seed in any::<u64>(), d in 2usize..=8, overlap in 0usize..=2) {
        let overlap = overlap.min(d / 2);
        let problem = random_manufactured(d, seed, (0.5, 0.5), overlap);
        let s = &problem.spec;
        let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, DEFAULT_RANK_TOL, Execution::Parallel).unwrap();
        prop_assert_eq!(g.reduction().index_info.dim_kernel_basis, overlap);
        let x = g.apply_all(&s.h);
        let h_sup = s.h.sup_norm();
        let defect = recursion_defect(&s.family, &x, &s.h, s.window.n_min, s.window.n_max).unwrap();
        prop_assert!(defect < 1e-9 * (1.0 + h_sup), "defect {:e}", defect);
        let jump = g.jump_defect(&s.h, 1e-9);
        prop_assert!(jump.matches_residual);
    }

    #[test]
    fn jump_equals_minus_residual(seed in any::<u64>(), d in 2usize..=8, overlap in 0usize..=2) {
        let overlap = overlap.min(d / 2);
        let problem = random_manufactured(d, seed, (0.5, 0.5), overlap);
        let s = &problem.spec;
        let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let h = noise(d, seed);
        let jump = g.jump_defect(&h, 1e-9);
        prop_assert!((&jump.jump + &jump.residual).amax() < 1e-9);
        prop_assert!(jump.matches_residual);
        if overlap > 0 {
            prop_assert!(jump.residual.norm() > 1e-6);
        }
    }

    #[test]
    fn two_expressions_for_h_agree(seed in any::<u64>(), d in 2usize..=8, overlap in 0usize..=2) {
        let overlap = overlap.min(d / 2);
        let problem = random_manufactured(d, seed, (0.5, 0.5), overlap);
        let s = &problem.spec;
        let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        for k in s.window.n_min..s.window.n_max {
            let (h, defect) = g.h_operator(k).unwrap();
            prop_assert!(defect < 1e-10 * f64::max(1.0, spectral_norm(&h)), "k = {}: {:e}", k, defect);
        }
    }

    #[test]
    fn solutions_respect_the_norm_bound(seed in any::<u64>(), d in 2usize..=8, overlap in 0usize..=2) {
        let overlap = overlap.min(d / 2);
        let problem = random_manufactured(d, seed, (0.5, 0.5), overlap);
        let s = &problem.spec;
        let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let fam = g.family_for(&s.h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let c = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let bound = norm_bound(g.reduction(), &s.dichotomy, &c, s.h.sup_norm());
        let x = fam.solution(&c);
        for n in s.window.n_min..=s.window.n_max {
            let norm = x.at(n).unwrap().norm();
            prop_assert!(norm <= bound.at(n) * (1.0 + 1e-12), "n = {}: {} > {}", n, norm, bound.at(n));
            prop_assert!(norm <= bound.total * (1.0 + 1e-12));
        }
    }

    #[test]
    fn commuting_projectors_satisfy_trichotomy_identities(seed in any::<u64>(), d in 2usize..=10, orthogonal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = random_orthogonal(d, &mut rng);
        let mut pd = Vec::with_capacity(d);
        let mut qd = Vec::with_capacity(d);
        for _ in 0..d {
            let p: bool = rng.random_bool(0.5);
            let q: bool = !(orthogonal && p) && rng.random_bool(0.5);
            pd.push(if p { 1.0 } else { 0.0 });
            qd.push(if q { 1.0 } else { 0.0 });
        }
        let conj = |v: &[f64]| -> LinearMap { &o * LinearMap::from_diagonal(&DVector::from_column_slice(v)) * o.transpose() };
        let data = DichotomyData::new(conj(&pd), conj(&qd), (1.0, 0.5), (1.0, 0.5)).unwrap();
        let report = trichotomy_identities(&data, DEFAULT_RANK_TOL, 1e-12).unwrap();
        prop_assert!(report.self_inverse.holds);
        prop_assert!(report.kernel_defect < 1e-12 && report.cokernel_defect < 1e-12);
        if orthogonal {
            let case = report.orthogonal.clone().expect("PQ = 0");
            prop_assert!(case.kernel_defect < 1e-12 && case.cokernel_defect < 1e-12);
        }
        prop_assert!(report.all_pass, "{:?}", report);
    }
}
