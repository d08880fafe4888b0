//! Finite-dimensional operator algebra: Moore-Penrose pseudo-inverses with an
//! explicit rank tolerance, generalized-inverse checks, kernel and cokernel
//! projectors, and the weighted pseudo-inverse used for strong solutions of
//! diagonal problems.
//!
//! Closed range (normal solvability) becomes a numerical rank decision: a
//! singular value counts as zero when it is at most `rank_tolerance * sigma_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real operator `R^cols -> R^rows`.
pub type LinearMap = DMatrix<f64>;
/// Dense real state vector.
pub type StateVector = DVector<f64>;

/// Relative rank tolerance used when none is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub(crate) fn ensure_finite(m: &LinearMap, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &LinearMap) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Thin SVD `(U, sigma, V)` with `M = U diag(sigma) V^T` and `sigma` descending.
pub fn thin_svd(m: &LinearMap) -> (LinearMap, Vec<f64>, LinearMap) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return (LinearMap::zeros(rows, 0), Vec::new(), LinearMap::zeros(cols, 0));
    }
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f.thin_svd().expect("SVD of a finite matrix");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let sigma: Vec<f64> = (0..k).map(|i| s[i]).collect();
    (
        LinearMap::from_fn(rows, k, |i, j| u[(i, j)]),
        sigma,
        LinearMap::from_fn(cols, k, |i, j| v[(i, j)]),
    )
}

/// Singular values in descending order.
pub fn singular_values(m: &LinearMap) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s = f.singular_values().expect("SVD of a finite matrix");
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Ratio of largest to smallest singular value (`inf` for singular input).
pub fn condition_number(m: &LinearMap) -> f64 {
    let s = singular_values(m);
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of [`pseudo_inverse`].
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub pinv: LinearMap,
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest singular value kept (0 when rank is 0).
    pub sigma_min_kept: f64,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

/// Moore-Penrose pseudo-inverse via SVD; singular values at or below
/// `rank_tolerance * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &LinearMap, rank_tolerance: f64) -> Result<PseudoInverse> {
    pseudo_inverse_with_scale(m, rank_tolerance, 0.0)
}

/// As [`pseudo_inverse`], with the cut taken relative to
/// `max(sigma_max, scale)`. Matrices assembled from projectors have a natural
/// unit scale, and with `scale = 1` a numerically zero input has rank 0.
pub fn pseudo_inverse_with_scale(m: &LinearMap, rank_tolerance: f64, scale: f64) -> Result<PseudoInverse> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(PseudoInverse {
            pinv: LinearMap::zeros(cols, rows),
            rank: 0,
            sigma_max: 0.0,
            sigma_min_kept: 0.0,
            singular_values: Vec::new(),
        });
    }
    let (u, sigma, v) = thin_svd(m);
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cut = rank_tolerance * sigma_max.max(scale);

    let mut pinv = LinearMap::zeros(cols, rows);
    let mut rank = 0;
    let mut sigma_min_kept = 0.0;
    for (i, &s) in sigma.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            sigma_min_kept = if rank == 1 { s } else { f64::min(sigma_min_kept, s) };
            pinv.ger(1.0 / s, &v.column(i), &u.column(i), 1.0);
        }
    }
    let singular_values = sigma;
    Ok(PseudoInverse {
        pinv,
        rank,
        sigma_max,
        sigma_min_kept,
        singular_values,
    })
}

/// Relative defects of the four Penrose identities
/// `[MGM - M, GMG - G, (MG)^T - MG, (GM)^T - GM]`.
pub fn penrose_defects(m: &LinearMap, g: &LinearMap) -> [f64; 4] {
    let mg = m * g;
    let gm = g * m;
    let rel = |num: f64, scale: f64| num / f64::max(1.0, scale);
    [
        rel(spectral_norm(&(&mg * m - m)), spectral_norm(m)),
        rel(spectral_norm(&(&gm * g - g)), spectral_norm(g)),
        rel(spectral_norm(&(mg.transpose() - &mg)), spectral_norm(&mg)),
        rel(spectral_norm(&(gm.transpose() - &gm)), spectral_norm(&gm)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedInverseCheck {
    pub holds: bool,
    /// Larger of the two relative defects.
    pub defect: f64,
}

/// Checks `D G D = D` and `G D G = G` relative to `max(1, ||D||)` and `max(1, ||G||)`.
pub fn check_generalized_inverse(d: &LinearMap, g: &LinearMap, tol: f64) -> Result<GeneralizedInverseCheck> {
    if d.ncols() != g.nrows() || d.nrows() != g.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "D is {}x{} but G is {}x{}",
            d.nrows(),
            d.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    let dgd = spectral_norm(&(d * g * d - d)) / f64::max(1.0, spectral_norm(d));
    let gdg = spectral_norm(&(g * d * g - g)) / f64::max(1.0, spectral_norm(g));
    let defect = f64::max(dgd, gdg);
    Ok(GeneralizedInverseCheck {
        holds: defect <= tol,
        defect,
    })
}

/// Orthoprojector onto the kernel, `I - M^+ M`.
pub fn kernel_projector(m: &LinearMap, rank_tolerance: f64) -> Result<LinearMap> {
    let p = pseudo_inverse(m, rank_tolerance)?;
    Ok(LinearMap::identity(m.ncols(), m.ncols()) - p.pinv * m)
}

/// Orthoprojector onto the orthogonal complement of the range, `I - M M^+`.
pub fn cokernel_projector(m: &LinearMap, rank_tolerance: f64) -> Result<LinearMap> {
    let p = pseudo_inverse(m, rank_tolerance)?;
    Ok(LinearMap::identity(m.nrows(), m.nrows()) - m * p.pinv)
}

/// `(||P^2 - P||, ||P - P^T||)`.
pub fn projector_defects(p: &LinearMap) -> (f64, f64) {
    (spectral_norm(&(p * p - p)), spectral_norm(&(p - p.transpose())))
}

/// Orthonormal basis of the column space, built by modified Gram-Schmidt in
/// column order (with one reorthogonalization pass). Columns whose residual
/// norm is at most `rank_tolerance` times `max(1, largest column norm)` are
/// skipped, so a range spanned by coordinate vectors yields exactly those
/// vectors and rounding noise in a numerically zero projector yields nothing.
pub fn range_basis(m: &LinearMap, rank_tolerance: f64) -> LinearMap {
    let scale = m.column_iter().map(|c| c.norm()).fold(1.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for col in m.column_iter() {
        let mut v: DVector<f64> = col.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > rank_tolerance.max(1e-12) * scale {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        LinearMap::zeros(m.nrows(), 0)
    } else {
        LinearMap::from_columns(&basis)
    }
}

/// Numerical rank of a projector-like matrix: singular values are compared
/// with `rank_tolerance * max(1, sigma_max)`.
pub fn rank(m: &LinearMap, rank_tolerance: f64) -> usize {
    let s = singular_values(m);
    let max = s.first().copied().unwrap_or(0.0).max(1.0);
    s.iter().filter(|&&x| x > rank_tolerance * max && x > 0.0).count()
}

/// Largest off-diagonal magnitude relative to the largest diagonal magnitude.
pub fn off_diagonal_ratio(m: &LinearMap) -> f64 {
    let mut diag: f64 = 0.0;
    let mut off: f64 = 0.0;
    for ((i, j), &x) in m.iter().enumerate().map(|(idx, x)| ((idx % m.nrows(), idx / m.nrows()), x)) {
        if i == j {
            diag = diag.max(x.abs());
        } else {
            off = off.max(x.abs());
        }
    }
    if off == 0.0 {
        0.0
    } else if diag == 0.0 {
        f64::INFINITY
    } else {
        off / diag
    }
}

/// Coordinate weights defining the norm `||c||_w = ||diag(w) c||` of a
/// completed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSpace {
    weights: Vec<f64>,
}

impl WeightedSpace {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteInput("weights"));
            }
            if value <= 0.0 {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        Ok(Self { weights })
    }

    pub fn unit(dim: usize) -> Self {
        Self { weights: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norm(&self, c: &StateVector) -> f64 {
        c.iter().zip(&self.weights).map(|(x, w)| (x * w).powi(2)).sum::<f64>().sqrt()
    }
}

/// Pseudo-inverse with respect to a weighted domain norm.
///
/// Columns of `M` are divided by the weights, the scaled operator is
/// pseudo-inverted with the usual rank cut, and the result is unscaled:
/// `M_w^+ = W^{-1} (M W^{-1})^+`. For `M = beta * diag(1, 1/2, ..., 1/m)` and
/// weights `1/j` the scaled operator is `beta * I`, so every direction survives
/// the rank cut and the result is `diag(j / beta)` however fast the plain
/// singular values decay.
pub fn weighted_pseudo_inverse(m: &LinearMap, target: &WeightedSpace, rank_tolerance: f64) -> Result<PseudoInverse> {
    ensure_finite(m, "matrix")?;
    if target.dim() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for an operator with {} columns",
            target.dim(),
            m.ncols()
        )));
    }
    let mut scaled = m.clone();
    for (j, &w) in target.weights.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / w);
    }
    let mut result = pseudo_inverse(&scaled, rank_tolerance)?;
    for (i, &w) in target.weights.iter().enumerate() {
        result.pinv.row_mut(i).scale_mut(1.0 / w);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> LinearMap {
        LinearMap::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn identity_and_zero() {
        let p = pseudo_inverse(&LinearMap::identity(3, 3), 1e-12).unwrap();
        assert_eq!(p.rank, 3);
        assert!((p.pinv - LinearMap::identity(3, 3)).norm() < 1e-14);

        let z = pseudo_inverse(&LinearMap::zeros(2, 2), 1e-12).unwrap();
        assert_eq!(z.rank, 0);
        assert_eq!(z.pinv, LinearMap::zeros(2, 2));
    }

    #[test]
    fn idempotent_diagonal_is_its_own_pseudo_inverse() {
        let m = diag(&[1.0, 0.0, 1.0, 0.0, 1.0]);
        let p = pseudo_inverse(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.rank, 3);
        assert!((&p.pinv - &m).norm() < 1e-14);
        for d in penrose_defects(&m, &m) {
            assert!(d < 1e-15);
        }
    }

    #[test]
    fn rejects_nan() {
        let mut m = LinearMap::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert_eq!(pseudo_inverse(&m, 1e-10).unwrap_err(), Error::NonFiniteInput("matrix"));
    }

    #[test]
    fn generalized_inverse_checks() {
        let i = LinearMap::identity(3, 3);
        let c = check_generalized_inverse(&i, &i, 1e-12).unwrap();
        assert!(c.holds);
        assert_eq!(c.defect, 0.0);

        let e = diag(&[1.0, 0.0]);
        assert!(check_generalized_inverse(&e, &e, 1e-12).unwrap().holds);

        // commuting projectors: D = P - (I - Q) satisfies DDD = D
        let p = diag(&[1.0, 0.0, 1.0, 0.0]);
        let q = diag(&[0.0, 1.0, 1.0, 0.0]);
        let d = &p - (LinearMap::identity(4, 4) - &q);
        assert!(check_generalized_inverse(&d, &d, 1e-12).unwrap().holds);

        assert!(!check_generalized_inverse(&i, &(&i * 2.0), 1e-6).unwrap().holds);
        assert!(matches!(
            check_generalized_inverse(&i, &LinearMap::identity(2, 2), 1e-6),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn projectors_of_simple_operators() {
        assert!(kernel_projector(&LinearMap::identity(4, 4), 1e-10).unwrap().norm() < 1e-14);
        assert!(cokernel_projector(&LinearMap::identity(4, 4), 1e-10).unwrap().norm() < 1e-14);

        // five leading zeros -> five leading ones in I - D^2
        let mut v = vec![0.0; 10];
        v[5..].iter_mut().for_each(|x| *x = 1.0);
        let d = diag(&v);
        let pn = kernel_projector(&d, 1e-10).unwrap();
        let expected = LinearMap::identity(10, 10) - &d * &d;
        assert!((pn - expected).norm() < 1e-14);
    }

    #[test]
    fn random_rank_two_projectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = LinearMap::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = LinearMap::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let m = a * b;
        for pr in [kernel_projector(&m, 1e-10).unwrap(), cokernel_projector(&m, 1e-10).unwrap()] {
            let (idem, sym) = projector_defects(&pr);
            assert!(idem < 1e-10 && sym < 1e-10);
            assert_eq!(rank(&pr, 1e-8), 2);
        }
    }

    #[test]
    fn weighted_pseudo_inverse_matches_strong_inverse() {
        let beta = 0.5;
        let v = diag(&[beta, beta / 2.0, beta / 3.0]);
        let w = WeightedSpace::new(vec![1.0, 0.5, 1.0 / 3.0]).unwrap();
        let p = weighted_pseudo_inverse(&v, &w, 1e-10).unwrap();
        assert!((p.pinv - diag(&[2.0, 4.0, 6.0])).norm() < 1e-13);

        let i = LinearMap::identity(3, 3);
        let p = weighted_pseudo_inverse(&i, &WeightedSpace::unit(3), 1e-10).unwrap();
        assert!((p.pinv - &i).norm() < 1e-15);
    }

    #[test]
    fn weighted_inverse_keeps_directions_a_plain_cut_drops() {
        // entries 1/m decay below the plain cut at tol = 1e-2 for m > 100
        let n = 150;
        let entries: Vec<f64> = (1..=n).map(|m| 1.0 / m as f64).collect();
        let v = diag(&entries);
        let plain = pseudo_inverse(&v, 1e-2).unwrap();
        assert!(plain.rank < n);
        let w = WeightedSpace::new(entries.clone()).unwrap();
        let strong = weighted_pseudo_inverse(&v, &w, 1e-2).unwrap();
        assert_eq!(strong.rank, n);
        for m in 1..=n {
            assert!((strong.pinv[(m - 1, m - 1)] - m as f64).abs() < 1e-9 * m as f64);
        }
        assert!((&v * &strong.pinv - LinearMap::identity(n, n)).norm() < 1e-10);
    }

    #[test]
    fn weight_validation() {
        assert_eq!(
            WeightedSpace::new(vec![1.0, 0.0]).unwrap_err(),
            Error::NonPositiveWeight { index: 1, value: 0.0 }
        );
        assert!(WeightedSpace::new(vec![f64::INFINITY]).is_err());
        assert!(weighted_pseudo_inverse(&LinearMap::identity(2, 2), &WeightedSpace::unit(3), 1e-10).is_err());
    }

    #[test]
    fn range_basis_prefers_coordinate_vectors() {
        let m = diag(&[1.0, 0.0, 1.0, 0.0, 0.0]);
        let b = range_basis(&m, 1e-10);
        assert_eq!(b.ncols(), 2);
        assert_eq!(b.column(0).into_owned(), DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(b.column(1).into_owned(), DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(range_basis(&LinearMap::zeros(3, 3), 1e-10).ncols(), 0);
    }

    #[test]
    fn off_diagonal_detection() {
        assert_eq!(off_diagonal_ratio(&diag(&[1.0, 2.0])), 0.0);
        let mut m = diag(&[1.0, 2.0]);
        m[(0, 1)] = 0.5;
        assert!((off_diagonal_ratio(&m) - 0.25).abs() < 1e-15);
    }
}
