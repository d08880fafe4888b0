//! Coefficient families `{A_n}`, evolution operators and exponential
//! dichotomy checks on the two semi-axes.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, condition_number, spectral_norm, LinearMap, DEFAULT_RANK_TOL};
use crate::par::{self, Execution};

/// Finite stand-in for the integer axis: the window `[n_min, n_max]` plus
/// `tail_len` extra indices on both sides for truncated infinite sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub n_min: i64,
    pub n_max: i64,
    pub tail_len: i64,
}

impl Window {
    pub fn new(n_min: i64, n_max: i64, tail_len: i64) -> Result<Self> {
        if n_min > 0 || n_max < 0 {
            return Err(Error::InvalidWindow(format!("need n_min <= 0 <= n_max, got [{n_min}, {n_max}]")));
        }
        if tail_len < 1 {
            return Err(Error::InvalidWindow(format!("tail_len must be >= 1, got {tail_len}")));
        }
        Ok(Self { n_min, n_max, tail_len })
    }

    /// First index of the extended range.
    pub fn lo(&self) -> i64 {
        self.n_min - self.tail_len
    }

    /// Last index of the extended range.
    pub fn hi(&self) -> i64 {
        self.n_max + self.tail_len
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.n_min && n <= self.n_max
    }

    /// Smallest tail making the geometric majorant of the truncated sums
    /// smaller than `0.1 * tol` (capped at `max_tail`).
    pub fn tail_for(data: &DichotomyData, h_sup: f64, tol: f64, max_tail: i64) -> i64 {
        (1..=max_tail)
            .find(|&t| data.tail_bound(t, h_sup) < 0.1 * tol)
            .unwrap_or(max_tail)
    }
}

type CoefficientFn = Arc<dyn Fn(i64) -> LinearMap + Send + Sync>;

/// How `A_n` is produced.
#[derive(Clone)]
pub enum CoefficientRule {
    /// Closed-form generator.
    Function(CoefficientFn),
    /// Lookup table starting at `start`; indices outside the table repeat
    /// the nearest end (constant tails).
    Table { start: i64, maps: Vec<LinearMap> },
}

impl fmt::Debug for CoefficientRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientRule::Function(_) => f.write_str("Function(..)"),
            CoefficientRule::Table { start, maps } => f
                .debug_struct("Table")
                .field("start", start)
                .field("len", &maps.len())
                .finish(),
        }
    }
}

/// The coefficient sequence `{A_n}` with its uniform bound `|||A|||`.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    dim: usize,
    rule: CoefficientRule,
    sup_norm: f64,
}

impl OperatorFamily {
    /// Family given by a closed-form rule; `sup_norm` is the caller's bound on `||A_n||`.
    pub fn from_fn(dim: usize, sup_norm: f64, f: impl Fn(i64) -> LinearMap + Send + Sync + 'static) -> Self {
        Self {
            dim,
            rule: CoefficientRule::Function(Arc::new(f)),
            sup_norm,
        }
    }

    /// Diagonal family; `f(n)` returns the diagonal of `A_n`.
    pub fn diagonal(dim: usize, sup_norm: f64, f: impl Fn(i64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::from_fn(dim, sup_norm, move |n| LinearMap::from_diagonal(&DVector::from_vec(f(n))))
    }

    /// Table-backed family with constant tails.
    pub fn table(start: i64, maps: Vec<LinearMap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty coefficient table".into()))?;
        let dim = first.nrows();
        let mut sup_norm: f64 = 0.0;
        for m in &maps {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "coefficient is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            linalg::ensure_finite(m, "coefficient")?;
            sup_norm = sup_norm.max(spectral_norm(m));
        }
        Ok(Self {
            dim,
            rule: CoefficientRule::Table { start, maps },
            sup_norm,
        })
    }

    pub fn constant(a: LinearMap) -> Result<Self> {
        Self::table(0, vec![a])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn rule(&self) -> &CoefficientRule {
        &self.rule
    }

    /// `A_n`.
    pub fn coefficient(&self, n: i64) -> LinearMap {
        match &self.rule {
            CoefficientRule::Function(f) => f(n),
            CoefficientRule::Table { start, maps } => {
                let i = (n - start).clamp(0, maps.len() as i64 - 1);
                maps[i as usize].clone()
            }
        }
    }

    fn checked_inverse(&self, n: i64, rank_tolerance: f64) -> Result<LinearMap> {
        let a = self.coefficient(n);
        let condition = condition_number(&a);
        if condition.is_nan() || condition > 1.0 / rank_tolerance {
            return Err(Error::SingularCoefficient { n, condition });
        }
        a.try_inverse().ok_or(Error::SingularCoefficient {
            n,
            condition: f64::INFINITY,
        })
    }
}

/// `Phi(m, n) = A_{m-1} ... A_n` for `m > n`, identity for `m = n`.
pub fn evolution(family: &OperatorFamily, m: i64, n: i64) -> Result<LinearMap> {
    if m < n {
        return Err(Error::IndexOutOfWindow { n: m, lo: n, hi: i64::MAX });
    }
    let mut phi = LinearMap::identity(family.dim(), family.dim());
    for k in n..m {
        phi = family.coefficient(k) * phi;
    }
    Ok(phi)
}

/// `U(n) = Phi(n, 0)` for `n >= 0` and `(A_{-1} ... A_n)^{-1}` for `n < 0`.
pub fn u_of_n(family: &OperatorFamily, n: i64, rank_tolerance: f64) -> Result<LinearMap> {
    if n >= 0 {
        return evolution(family, n, 0);
    }
    let mut u = LinearMap::identity(family.dim(), family.dim());
    for k in (n..0).rev() {
        u = family.checked_inverse(k, rank_tolerance)? * u;
    }
    Ok(u)
}

/// Precomputed `U(n)` and `U(n)^{-1}` for `n` in `[lo, hi]`.
///
/// Both are built by the one-step recursions `U(n+1) = A_n U(n)` and
/// `U(n+1)^{-1} = U(n)^{-1} A_n^{-1}` outward from `U(0) = I`, so only the
/// individual coefficients are ever inverted.
#[derive(Debug, Clone)]
pub struct EvolutionTable {
    lo: i64,
    u: Vec<LinearMap>,
    u_inv: Vec<LinearMap>,
}

impl EvolutionTable {
    pub fn new(family: &OperatorFamily, lo: i64, hi: i64, rank_tolerance: f64) -> Result<Self> {
        if lo > 0 || hi < 0 {
            return Err(Error::InvalidWindow(format!("evolution range [{lo}, {hi}] must contain 0")));
        }
        let len = (hi - lo + 1) as usize;
        let d = family.dim();
        let mut u = vec![LinearMap::zeros(d, d); len];
        let mut u_inv = vec![LinearMap::zeros(d, d); len];
        let zero = (-lo) as usize;
        u[zero] = LinearMap::identity(d, d);
        u_inv[zero] = LinearMap::identity(d, d);
        for n in 0..hi {
            let i = (n - lo) as usize;
            let a = family.coefficient(n);
            let a_inv = family.checked_inverse(n, rank_tolerance)?;
            u[i + 1] = &a * &u[i];
            u_inv[i + 1] = &u_inv[i] * a_inv;
        }
        for n in (lo..0).rev() {
            let i = (n - lo) as usize;
            let a = family.coefficient(n);
            let a_inv = family.checked_inverse(n, rank_tolerance)?;
            u[i] = &a_inv * &u[i + 1];
            u_inv[i] = &u_inv[i + 1] * a;
        }
        Ok(Self { lo, u, u_inv })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.u.len() as i64 - 1
    }

    pub fn dim(&self) -> usize {
        self.u[0].nrows()
    }

    fn index(&self, n: i64) -> usize {
        assert!(
            n >= self.lo && n <= self.hi(),
            "index {n} outside evolution table [{}, {}]",
            self.lo,
            self.hi()
        );
        (n - self.lo) as usize
    }

    pub fn try_u(&self, n: i64) -> Result<&LinearMap> {
        if n < self.lo || n > self.hi() {
            return Err(Error::IndexOutOfWindow { n, lo: self.lo, hi: self.hi() });
        }
        Ok(&self.u[self.index(n)])
    }

    /// `U(n)`; panics outside the table.
    pub fn u(&self, n: i64) -> &LinearMap {
        &self.u[self.index(n)]
    }

    /// `U(n)^{-1}`; panics outside the table.
    pub fn u_inv(&self, n: i64) -> &LinearMap {
        &self.u_inv[self.index(n)]
    }
}

/// Projectors and constants of the dichotomies on the positive (`P`, `k1`,
/// `lambda1`) and negative (`Q`, `k2`, `lambda2`) semi-axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyData {
    pub p: LinearMap,
    pub q: LinearMap,
    pub k1: f64,
    pub lambda1: f64,
    pub k2: f64,
    pub lambda2: f64,
}

impl DichotomyData {
    pub fn new(p: LinearMap, q: LinearMap, (k1, lambda1): (f64, f64), (k2, lambda2): (f64, f64)) -> Result<Self> {
        let d = p.nrows();
        if p.ncols() != d || q.nrows() != d || q.ncols() != d {
            return Err(Error::ShapeMismatch("P and Q must be square and of equal size".into()));
        }
        linalg::ensure_finite(&p, "P")?;
        linalg::ensure_finite(&q, "Q")?;
        for (k, l) in [(k1, lambda1), (k2, lambda2)] {
            if !(k >= 1.0 && k.is_finite()) || !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidWindow(format!(
                    "dichotomy constants need k >= 1 and 0 < lambda < 1, got k = {k}, lambda = {l}"
                )));
            }
        }
        Ok(Self { p, q, k1, lambda1, k2, lambda2 })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Errors with `NotAProjector` if `P` or `Q` is not idempotent to `tol`.
    pub fn check_projectors(&self, tol: f64) -> Result<()> {
        for (which, m) in [("P", &self.p), ("Q", &self.q)] {
            let defect = spectral_norm(&(m * m - m));
            if defect > tol {
                return Err(Error::NotAProjector { which, defect });
            }
        }
        Ok(())
    }

    /// Geometric majorant of the two neglected tails of length `tail`.
    pub fn tail_bound(&self, tail: i64, h_sup: f64) -> f64 {
        let t = tail as i32;
        (self.k1 * self.lambda1.powi(t) / (1.0 - self.lambda1) + self.k2 * self.lambda2.powi(t) / (1.0 - self.lambda2))
            * h_sup
    }
}

/// `(k, lambda)` fitted to the observed transition norms of one semi-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedConstants {
    pub k: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyReport {
    pub holds: bool,
    /// Smallest relative margin `1 - norm / bound` over all checked pairs.
    pub worst_margin: f64,
    pub positive: FittedConstants,
    pub negative: FittedConstants,
    pub pairs_checked: usize,
}

struct AxisSample {
    margin: f64,
    distance: i64,
    norm: f64,
}

/// Checks the four families of dichotomy inequalities over all index pairs of
/// the window and fits diagnostic constants per semi-axis.
pub fn verify_dichotomy(
    family: &OperatorFamily,
    data: &DichotomyData,
    window: &Window,
    tol: f64,
    exec: Execution,
) -> Result<DichotomyReport> {
    data.check_projectors(tol.max(DEFAULT_RANK_TOL))?;
    if family.dim() != data.dim() {
        return Err(Error::ShapeMismatch("family and projectors differ in dimension".into()));
    }
    let table = EvolutionTable::new(family, window.n_min, window.n_max, DEFAULT_RANK_TOL)?;
    let eye = LinearMap::identity(data.dim(), data.dim());
    let not_p = &eye - &data.p;
    let not_q = &eye - &data.q;

    let axis = |lo: i64, hi: i64, stable: &LinearMap, unstable: &LinearMap, k: f64, lambda: f64| {
        par::map_range(exec, lo, hi, |n| {
            let mut out = Vec::with_capacity((hi - lo + 1) as usize);
            for m in lo..=hi {
                let (proj, dist) = if n >= m { (stable, n - m) } else { (unstable, m - n) };
                let norm = spectral_norm(&(table.u(n) * proj * table.u_inv(m)));
                let bound = k * lambda.powi(dist as i32);
                out.push(AxisSample {
                    margin: 1.0 - norm / bound,
                    distance: dist,
                    norm,
                });
                // the unstable inequality also covers n == m
                if n == m {
                    let norm = spectral_norm(&(table.u(n) * unstable * table.u_inv(m)));
                    out.push(AxisSample {
                        margin: 1.0 - norm / k,
                        distance: 0,
                        norm,
                    });
                }
            }
            out
        })
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
    };

    let plus = axis(0, window.n_max, &data.p, &not_p, data.k1, data.lambda1);
    let minus = axis(window.n_min, 0, &data.q, &not_q, data.k2, data.lambda2);
    let worst_margin = plus
        .iter()
        .chain(&minus)
        .map(|s| s.margin)
        .fold(f64::INFINITY, f64::min);
    Ok(DichotomyReport {
        holds: worst_margin >= -tol,
        worst_margin,
        positive: fit_constants(&plus),
        negative: fit_constants(&minus),
        pairs_checked: plus.len() + minus.len(),
    })
}

/// Log-linear least squares of `log norm` against distance, then `k` is raised
/// until every sample satisfies `norm <= k lambda^dist`.
fn fit_constants(samples: &[AxisSample]) -> FittedConstants {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.norm > 0.0 && s.distance > 0)
        .map(|s| (s.distance as f64, s.norm.ln()))
        .collect();
    let lambda = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            (sxy / sxx).exp()
        } else {
            0.5
        }
    } else {
        0.5
    };
    let lambda = lambda.clamp(f64::MIN_POSITIVE, 1.0 - 1e-12);
    let k = samples
        .iter()
        .filter(|s| s.norm > 0.0)
        .map(|s| s.norm / lambda.powi(s.distance as i32))
        .fold(1.0, f64::max);
    FittedConstants { k, lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_family(seed: u64, d: usize) -> OperatorFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps: Vec<LinearMap> = (0..24)
            .map(|_| LinearMap::identity(d, d) + LinearMap::from_fn(d, d, |_, _| rng.random_range(-0.3..0.3)))
            .collect();
        OperatorFamily::table(-12, maps).unwrap()
    }

    #[test]
    fn evolution_basics() {
        let fam = random_family(1, 3);
        assert_eq!(evolution(&fam, 4, 4).unwrap(), LinearMap::identity(3, 3));
        let lhs = evolution(&fam, 5, 3).unwrap() * evolution(&fam, 3, 1).unwrap();
        let rhs = evolution(&fam, 5, 1).unwrap();
        assert!((lhs - &rhs).norm() < 1e-12 * rhs.norm());
        assert!(evolution(&fam, 1, 2).is_err());
    }

    #[test]
    fn example1_evolution_values() {
        let p = problems::example1(10, 2, 1.0, 0.0);
        let fam = &p.spec.family;
        let u3 = evolution(fam, 3, 0).unwrap();
        let expected = [0.25, 4.0, 0.25, 4.0, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(u3[(i, i)], *e);
        }
        let um2 = u_of_n(fam, -2, DEFAULT_RANK_TOL).unwrap();
        let expected = [0.25, 4.0, 0.25, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(um2[(i, i)], *e);
        }
        assert_eq!(u_of_n(fam, 0, DEFAULT_RANK_TOL).unwrap(), LinearMap::identity(10, 10));
    }

    #[test]
    fn u_recursion_and_table_agree() {
        let fam = random_family(2, 4);
        let table = EvolutionTable::new(&fam, -5, 6, DEFAULT_RANK_TOL).unwrap();
        for n in -5..=5 {
            let un = u_of_n(&fam, n, DEFAULT_RANK_TOL).unwrap();
            let un1 = u_of_n(&fam, n + 1, DEFAULT_RANK_TOL).unwrap();
            assert!((&un1 - fam.coefficient(n) * &un).norm() < 1e-12 * un1.norm());
            assert!((table.u(n) - &un).norm() < 1e-12 * un.norm());
            assert!((table.u(n) * table.u_inv(n) - LinearMap::identity(4, 4)).norm() < 1e-10);
        }
    }

    #[test]
    fn cocycle_over_window() {
        let fam = random_family(3, 3);
        for n in -6..=2 {
            for k in n..=4 {
                for m in k..=6 {
                    let full = evolution(&fam, m, n).unwrap();
                    let split = evolution(&fam, m, k).unwrap() * evolution(&fam, k, n).unwrap();
                    assert!((split - &full).norm() <= 1e-12 * full.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn diagonal_family_is_entrywise_product() {
        let fam = OperatorFamily::diagonal(2, 3.0, |n| vec![1.0 + 0.1 * n as f64, 2.0 - 0.05 * n as f64]);
        let phi = evolution(&fam, 6, -2).unwrap();
        let (mut a, mut b) = (1.0, 1.0);
        for k in -2..6 {
            a *= 1.0 + 0.1 * k as f64;
            b *= 2.0 - 0.05 * k as f64;
        }
        assert!((phi[(0, 0)] - a).abs() < 1e-14 * a.abs());
        assert!((phi[(1, 1)] - b).abs() < 1e-14 * b.abs());
        assert_eq!(phi[(0, 1)], 0.0);
    }

    #[test]
    fn singular_coefficient_is_rejected() {
        let fam = OperatorFamily::diagonal(2, 1.0, |n| if n == -3 { vec![1.0, 0.0] } else { vec![1.0, 1.0] });
        assert!(matches!(u_of_n(&fam, -4, DEFAULT_RANK_TOL), Err(Error::SingularCoefficient { n: -3, .. })));
        assert!(u_of_n(&fam, -2, DEFAULT_RANK_TOL).is_ok());
    }

    #[test]
    fn example_dichotomies_hold() {
        let w = Window::new(-12, 12, 1).unwrap();
        let p1 = problems::example1(10, 2, 1.0, 0.0);
        let r = verify_dichotomy(&p1.spec.family, &p1.spec.dichotomy, &w, 1e-12, Execution::Parallel).unwrap();
        assert!(r.holds, "worst margin {}", r.worst_margin);
        assert!(r.worst_margin >= 0.0);
        assert!((r.positive.lambda - 0.5).abs() < 0.05, "{:?}", r.positive);
        assert!(r.positive.k >= 1.5 && r.positive.k <= 3.0, "{:?}", r.positive);

        let p2 = problems::example2(8, 3, crate::green::Inhomogeneity::zero(8));
        let r = verify_dichotomy(&p2.spec.family, &p2.spec.dichotomy, &w, 1e-12, Execution::Sequential).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn example1_with_unit_constant_fails_at_the_origin() {
        // A_0 = I makes ||U(n) P U^{-1}(0)|| = 2^{-(n-1)}, so k = 1 is too small.
        let p1 = problems::example1(10, 2, 1.0, 0.0);
        let mut data = p1.spec.dichotomy.clone();
        data.k1 = 1.0;
        data.k2 = 1.0;
        let w = Window::new(-6, 6, 1).unwrap();
        let r = verify_dichotomy(&p1.spec.family, &data, &w, 1e-12, Execution::Sequential).unwrap();
        assert!(!r.holds);
    }

    #[test]
    fn growth_in_stable_range_fails() {
        let fam = OperatorFamily::constant(LinearMap::identity(2, 2) * 2.0).unwrap();
        let eye = LinearMap::identity(2, 2);
        let data = DichotomyData::new(eye.clone(), eye, (1.0, 0.5), (1.0, 0.5)).unwrap();
        let w = Window::new(-5, 5, 1).unwrap();
        let r = verify_dichotomy(&fam, &data, &w, 1e-12, Execution::Sequential).unwrap();
        assert!(!r.holds);
        assert!(r.worst_margin < 0.0);
    }

    #[test]
    fn verify_is_monotone_in_constants() {
        let p1 = problems::example1(8, 2, 1.0, 0.0);
        let w = Window::new(-8, 8, 1).unwrap();
        for (k, l) in [(2.0, 0.5), (3.0, 0.5), (2.0, 0.7), (5.0, 0.99)] {
            let mut data = p1.spec.dichotomy.clone();
            data.k1 = k;
            data.k2 = k;
            data.lambda1 = l;
            data.lambda2 = l;
            let r = verify_dichotomy(&p1.spec.family, &data, &w, 1e-12, Execution::Sequential).unwrap();
            assert!(r.holds, "k = {k}, lambda = {l}");
        }
    }

    #[test]
    fn non_projector_is_rejected() {
        let fam = OperatorFamily::constant(LinearMap::identity(2, 2)).unwrap();
        let data = DichotomyData::new(LinearMap::identity(2, 2) * 2.0, LinearMap::identity(2, 2), (1.0, 0.5), (1.0, 0.5))
            .unwrap();
        let w = Window::new(-1, 1, 1).unwrap();
        assert!(matches!(
            verify_dichotomy(&fam, &data, &w, 1e-10, Execution::Sequential),
            Err(Error::NotAProjector { which: "P", .. })
        ));
    }

    #[test]
    fn window_validation() {
        assert!(Window::new(1, 3, 1).is_err());
        assert!(Window::new(-1, 3, 0).is_err());
        let w = Window::new(-2, 3, 4).unwrap();
        assert_eq!((w.lo(), w.hi()), (-6, 7));
    }
}
