//! Boundary operators `l`, the reduced operator `V = l U(.) P P_N(D)` and the
//! resulting finite-dimensional equation `V c = alpha - l(G[h])`.

use crate::dynamics::Window;
use crate::error::{Error, Result};
use crate::green::{BoundedSolutionFamily, GreenOperator};
use crate::linalg::{pseudo_inverse, range_basis, weighted_pseudo_inverse, LinearMap, StateVector, WeightedSpace};
use crate::sequence::Sequence;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryKind {
    /// `A1 x_m - A2 x_0`.
    TwoPoint { m: i64, a1: LinearMap, a2: LinearMap },
    /// `sum_i A_i x_{m_i}`.
    MultiPoint { terms: Vec<(i64, LinearMap)> },
    /// `minus * x(-inf) + plus * x(+inf)`, with the limits read at the window edges.
    AtInfinity { minus: LinearMap, plus: LinearMap },
    /// `matrix * [x_{n_1}; ...; x_{n_r}]`.
    Samples { nodes: Vec<i64>, matrix: LinearMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOperator {
    kind: BoundaryKind,
    dim: usize,
    codomain_dim: usize,
    /// Cauchy tolerance for [`BoundaryKind::AtInfinity`].
    pub limit_tolerance: f64,
}

fn check_block(m: &LinearMap, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("boundary coefficient"));
    }
    Ok(())
}

impl BoundaryOperator {
    pub fn two_point(m: i64, a1: LinearMap, a2: LinearMap) -> Result<Self> {
        let (rows, dim) = a1.shape();
        check_block(&a1, rows, dim, "A1")?;
        check_block(&a2, rows, dim, "A2")?;
        Ok(Self {
            kind: BoundaryKind::TwoPoint { m, a1, a2 },
            dim,
            codomain_dim: rows,
            limit_tolerance: 1e-10,
        })
    }

    /// `l x = x_m`.
    pub fn evaluation(m: i64, dim: usize) -> Self {
        Self::multi_point(vec![(m, LinearMap::identity(dim, dim))]).expect("identity block")
    }

    pub fn multi_point(terms: Vec<(i64, LinearMap)>) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return Err(Error::ShapeMismatch("multi-point operator without terms".into()));
        };
        let (rows, dim) = first.shape();
        for (_, a) in &terms {
            check_block(a, rows, dim, "A_i")?;
        }
        Ok(Self {
            kind: BoundaryKind::MultiPoint { terms },
            dim,
            codomain_dim: rows,
            limit_tolerance: 1e-10,
        })
    }

    pub fn at_infinity(minus: LinearMap, plus: LinearMap, limit_tolerance: f64) -> Result<Self> {
        let (rows, dim) = minus.shape();
        check_block(&plus, rows, dim, "plus")?;
        check_block(&minus, rows, dim, "minus")?;
        Ok(Self {
            kind: BoundaryKind::AtInfinity { minus, plus },
            dim,
            codomain_dim: rows,
            limit_tolerance,
        })
    }

    pub fn samples(nodes: Vec<i64>, matrix: LinearMap, dim: usize) -> Result<Self> {
        if nodes.is_empty() || matrix.ncols() != dim * nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "sample matrix has {} columns for {} nodes of dimension {dim}",
                matrix.ncols(),
                nodes.len()
            )));
        }
        check_block(&matrix, matrix.nrows(), matrix.ncols(), "sample matrix")?;
        Ok(Self {
            codomain_dim: matrix.nrows(),
            kind: BoundaryKind::Samples { nodes, matrix },
            dim,
            limit_tolerance: 1e-10,
        })
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    /// Nodes that must lie inside the window.
    pub fn nodes(&self) -> Vec<i64> {
        match &self.kind {
            BoundaryKind::TwoPoint { m, .. } => vec![0, *m],
            BoundaryKind::MultiPoint { terms } => terms.iter().map(|(n, _)| *n).collect(),
            BoundaryKind::AtInfinity { .. } => Vec::new(),
            BoundaryKind::Samples { nodes, .. } => nodes.clone(),
        }
    }

    /// `l x` for a sequence given on (at least) the extended window.
    pub fn apply(&self, x: &dyn Fn(i64) -> Result<StateVector>, window: &Window) -> Result<StateVector> {
        for n in self.nodes() {
            if !window.contains(n) {
                return Err(Error::IndexOutOfWindow {
                    n,
                    lo: window.n_min,
                    hi: window.n_max,
                });
            }
        }
        match &self.kind {
            BoundaryKind::TwoPoint { m, a1, a2 } => Ok(a1 * x(*m)? - a2 * x(0)?),
            BoundaryKind::MultiPoint { terms } => {
                let mut out = StateVector::zeros(self.codomain_dim);
                for (n, a) in terms {
                    out += a * x(*n)?;
                }
                Ok(out)
            }
            BoundaryKind::AtInfinity { minus, plus } => {
                let tol = self.limit_tolerance;
                for n in window.lo()..window.n_min {
                    let step = (x(n + 1)? - x(n)?).norm();
                    if step >= tol {
                        return Err(Error::LimitNotSettled { side: "-inf", step, tol });
                    }
                }
                for n in window.n_max..window.hi() {
                    let step = (x(n + 1)? - x(n)?).norm();
                    if step >= tol {
                        return Err(Error::LimitNotSettled { side: "+inf", step, tol });
                    }
                }
                Ok(minus * x(window.n_min)? + plus * x(window.n_max)?)
            }
            BoundaryKind::Samples { nodes, matrix } => {
                let mut stacked = StateVector::zeros(self.dim * nodes.len());
                for (i, &n) in nodes.iter().enumerate() {
                    stacked.rows_mut(i * self.dim, self.dim).copy_from(&x(n)?);
                }
                Ok(matrix * stacked)
            }
        }
    }

    pub fn apply_sequence(&self, x: &Sequence, window: &Window) -> Result<StateVector> {
        self.apply(&|n| x.at(n).cloned(), window)
    }
}

/// The reduced equation `V c = rhs` on the coordinates of the bounded family.
#[derive(Debug, Clone)]
pub struct BvpReduction {
    pub v: LinearMap,
    pub v_pinv: LinearMap,
    /// `P_N(V) = I - V^+ V`.
    pub pn_v: LinearMap,
    /// `P_{V_B1} = I - V V^+`.
    pub pcoker_v: LinearMap,
    /// `alpha - l(G[h])`.
    pub rhs: StateVector,
    pub rank: usize,
    pub rank_tolerance: f64,
}

/// Builds `V` column by column from `U(.) E`, where `E` spans the range of `P P_N(D)`.
pub fn reduce_bvp(
    green: &GreenOperator<'_>,
    family: &BoundedSolutionFamily,
    l: &BoundaryOperator,
    alpha: &StateVector,
    rank_tolerance: f64,
) -> Result<BvpReduction> {
    if l.dim() != green.dim() {
        return Err(Error::ShapeMismatch(format!(
            "boundary operator acts on dimension {}, problem has {}",
            l.dim(),
            green.dim()
        )));
    }
    if alpha.len() != l.codomain_dim() {
        return Err(Error::ShapeMismatch(format!(
            "alpha has length {}, boundary codomain is {}",
            alpha.len(),
            l.codomain_dim()
        )));
    }
    let window = green.window();
    let r = family.free_dim;
    let mut v = LinearMap::zeros(l.codomain_dim(), r);
    for j in 0..r {
        let col = l.apply(&|n| Ok(family.reduced_basis_at(n)?.column(j).into_owned()), window)?;
        v.set_column(j, &col);
    }
    let l_particular = l.apply_sequence(&family.particular, window)?;
    let rhs = alpha - l_particular;
    finish_reduction(v, rhs, rank_tolerance)
}

fn finish_reduction(v: LinearMap, rhs: StateVector, rank_tolerance: f64) -> Result<BvpReduction> {
    let pinv = pseudo_inverse(&v, rank_tolerance)?;
    let pn_v = LinearMap::identity(v.ncols(), v.ncols()) - &pinv.pinv * &v;
    let pcoker_v = LinearMap::identity(v.nrows(), v.nrows()) - &v * &pinv.pinv;
    Ok(BvpReduction {
        v,
        v_pinv: pinv.pinv,
        pn_v,
        pcoker_v,
        rhs,
        rank: pinv.rank,
        rank_tolerance,
    })
}

#[derive(Debug, Clone)]
pub struct BvpSolutionSet {
    /// `V^- rhs` in reduced coordinates.
    pub c_particular: StateVector,
    pub free_projector: LinearMap,
    /// Orthonormal basis of the range of `free_projector`.
    pub free_basis: LinearMap,
    pub solvable: bool,
    /// `||V c_particular - rhs||`.
    pub defect: f64,
}

impl BvpSolutionSet {
    /// Reduced coordinates `c_particular + P_N(V) cbar`.
    pub fn member(&self, cbar: &StateVector) -> StateVector {
        &self.c_particular + &self.free_projector * cbar
    }
}

impl BvpReduction {
    pub fn solve(&self, tol: f64) -> BvpSolutionSet {
        self.solve_with(self.v_pinv.clone(), self.pn_v.clone(), tol)
    }

    fn solve_with(&self, g: LinearMap, free_projector: LinearMap, tol: f64) -> BvpSolutionSet {
        let c_particular = &g * &self.rhs;
        let defect = (&self.v * &c_particular - &self.rhs).norm();
        let free_basis = range_basis(&free_projector, 1e-9);
        BvpSolutionSet {
            c_particular,
            free_projector,
            free_basis,
            solvable: defect <= tol,
            defect,
        }
    }

    /// Solve with the weighted pseudo-inverse `W^-1 (V W^-1)^+`; `V` must
    /// have at most one nonzero per row and per column.
    pub fn strong_solve(&self, weights: &WeightedSpace, tol: f64) -> Result<BvpSolutionSet> {
        if weights.dim() != self.v.ncols() {
            return Err(Error::NonDiagonalStrongCase(format!(
                "{} weights for {} reduced coordinates",
                weights.dim(),
                self.v.ncols()
            )));
        }
        let scale = self.v.amax().max(f64::MIN_POSITIVE);
        let small = 1e-14 * scale;
        for (j, col) in self.v.column_iter().enumerate() {
            if col.iter().filter(|x| x.abs() > small).count() > 1 {
                return Err(Error::NonDiagonalStrongCase(format!("column {j} has several nonzero entries")));
            }
        }
        for (i, row) in self.v.row_iter().enumerate() {
            if row.iter().filter(|x| x.abs() > small).count() > 1 {
                return Err(Error::NonDiagonalStrongCase(format!("row {i} has several nonzero entries")));
            }
        }
        let strong = weighted_pseudo_inverse(&self.v, weights, self.rank_tolerance)?;
        let free = LinearMap::identity(self.v.ncols(), self.v.ncols()) - &strong.pinv * &self.v;
        Ok(self.solve_with(strong.pinv, free, tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DichotomyData, OperatorFamily};
    use crate::green::Inhomogeneity;
    use crate::linalg::DEFAULT_RANK_TOL;
    use crate::par::Execution;
    use crate::problems;
    use nalgebra::DVector;

    fn constant_seq(v: StateVector, lo: i64, hi: i64) -> Sequence {
        Sequence::from_fn(lo, hi, |_| v.clone())
    }

    #[test]
    fn two_point_on_constant_sequence_vanishes() {
        let w = Window::new(-5, 5, 2).unwrap();
        let eye = LinearMap::identity(3, 3);
        let l = BoundaryOperator::two_point(3, eye.clone(), eye).unwrap();
        let x = constant_seq(DVector::from_vec(vec![1.0, -2.0, 5.0]), -7, 7);
        assert_eq!(l.apply_sequence(&x, &w).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn evaluation_and_multi_point() {
        let w = Window::new(-5, 5, 2).unwrap();
        let x = Sequence::from_fn(-7, 7, |n| DVector::from_vec(vec![n as f64, (n * n) as f64]));
        let l = BoundaryOperator::evaluation(2, 2);
        assert_eq!(l.apply_sequence(&x, &w).unwrap(), DVector::from_vec(vec![2.0, 4.0]));
        let l = BoundaryOperator::multi_point(vec![
            (-1, LinearMap::identity(2, 2)),
            (3, LinearMap::identity(2, 2) * 2.0),
        ])
        .unwrap();
        assert_eq!(l.apply_sequence(&x, &w).unwrap(), DVector::from_vec(vec![5.0, 19.0]));
        let outside = BoundaryOperator::evaluation(9, 2);
        assert!(matches!(outside.apply_sequence(&x, &w), Err(Error::IndexOutOfWindow { .. })));
    }

    #[test]
    fn samples_operator() {
        let w = Window::new(-3, 3, 1).unwrap();
        let x = Sequence::from_fn(-4, 4, |n| DVector::from_vec(vec![n as f64, 1.0]));
        let m = LinearMap::from_row_slice(1, 4, &[1.0, 0.0, -1.0, 0.5]);
        let l = BoundaryOperator::samples(vec![-2, 3], m, 2).unwrap();
        assert_eq!(l.apply_sequence(&x, &w).unwrap()[0], -2.0 - 3.0 + 0.5);
        assert!(BoundaryOperator::samples(vec![1], LinearMap::zeros(1, 3), 2).is_err());
    }

    #[test]
    fn at_infinity_limits() {
        let w = Window::new(-10, 10, 30).unwrap();
        let settled = Sequence::from_fn(-40, 40, |n| DVector::from_vec(vec![0.5f64.powi(n.abs() as i32) + 1.0]));
        let l = BoundaryOperator::at_infinity(LinearMap::identity(1, 1), LinearMap::identity(1, 1) * 2.0, 1e-3).unwrap();
        let v = l.apply_sequence(&settled, &w).unwrap();
        assert!((v[0] - 3.0 * (1.0 + 0.5f64.powi(10))).abs() < 1e-12);
        let drifting = Sequence::from_fn(-40, 40, |n| DVector::from_vec(vec![n as f64]));
        assert!(matches!(l.apply_sequence(&drifting, &w), Err(Error::LimitNotSettled { .. })));
    }

    #[test]
    fn example1_reduction_and_solution() {
        let pr = problems::example1(10, 2, 1.0, 0.0);
        let s = &pr.spec;
        let w = Window::new(-10, 10, 2).unwrap();
        let g = GreenOperator::new(&s.family, &s.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let fam = g.family_for(&s.h);
        let l = s.boundary.as_ref().unwrap();
        let red = reduce_bvp(&g, &fam, l, s.alpha.as_ref().unwrap(), DEFAULT_RANK_TOL).unwrap();
        // V = 2^{-(m-1)} on coordinates 1 and 3
        assert_eq!(red.v.shape(), (10, 2));
        assert_eq!(red.v[(0, 0)], 0.5);
        assert_eq!(red.v[(2, 1)], 0.5);
        assert_eq!(red.v.iter().filter(|&&x| x != 0.0).count(), 2);
        let sol = red.solve(1e-12);
        assert!(sol.solvable);
        assert_eq!(sol.c_particular, DVector::from_vec(vec![2.0, 0.0]));
        assert!(sol.free_projector.norm() < 1e-15);
        let x = fam.solution_reduced(&sol.c_particular);
        assert_eq!(x.at(0).unwrap()[0], 2.0);
    }

    #[test]
    fn homogeneous_trivial_reduction() {
        let pr = problems::example1(8, 3, 0.0, 0.0);
        let s = &pr.spec;
        let w = Window::new(-6, 6, 2).unwrap();
        let g = GreenOperator::new(&s.family, &s.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let fam = g.family_for(&Inhomogeneity::zero(8));
        let red = reduce_bvp(&g, &fam, s.boundary.as_ref().unwrap(), &DVector::zeros(8), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(red.rhs, DVector::zeros(8));
        assert_eq!(red.solve(1e-12).c_particular, DVector::zeros(2));
    }

    #[test]
    fn non_solvable_alpha_reports_defect() {
        let pr = problems::example1(8, 2, 1.0, 0.0);
        let s = &pr.spec;
        let w = Window::new(-6, 6, 2).unwrap();
        let g = GreenOperator::new(&s.family, &s.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let fam = g.family_for(&s.h);
        let mut alpha = DVector::zeros(8);
        alpha[0] = 1.0;
        alpha[1] = 0.25;
        let red = reduce_bvp(&g, &fam, s.boundary.as_ref().unwrap(), &alpha, DEFAULT_RANK_TOL).unwrap();
        let sol = red.solve(1e-12);
        assert!(!sol.solvable);
        assert!((sol.defect - 0.25).abs() < 1e-15);
    }

    #[test]
    fn strong_solve_rejects_non_diagonal() {
        let eye = LinearMap::identity(2, 2);
        let data = DichotomyData::new(eye.clone(), LinearMap::zeros(2, 2), (1.0, 0.5), (1.0, 0.5)).unwrap();
        let fam = OperatorFamily::constant(eye.clone() * 0.5).unwrap();
        let w = Window::new(-3, 3, 1).unwrap();
        let g = GreenOperator::new(&fam, &data, w, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        let bf = g.family_for(&Inhomogeneity::zero(2));
        let mix = LinearMap::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let l = BoundaryOperator::multi_point(vec![(0, mix)]).unwrap();
        let red = reduce_bvp(&g, &bf, &l, &DVector::zeros(2), DEFAULT_RANK_TOL).unwrap();
        let weights = WeightedSpace::unit(2);
        assert!(matches!(red.strong_solve(&weights, 1e-12), Err(Error::NonDiagonalStrongCase(_))));
        assert!(matches!(red.strong_solve(&WeightedSpace::unit(3), 1e-12), Err(Error::NonDiagonalStrongCase(_))));
    }
}
