//! Built-in problems with closed-form answers.
//!
//! Examples 1 to 3 are diagonal `l2` problems truncated to `d` coordinates.
//! The quadratic toys carry a nonlinearity whose generating equation can be
//! summed by hand, and [`random_manufactured`] builds dense problems around
//! a prescribed bounded solution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bvp::BoundaryOperator;
use crate::dynamics::{DichotomyData, OperatorFamily, Window};
use crate::error::{Error, Result};
use crate::green::{Forcing, Inhomogeneity, TailRule};
use crate::linalg::{LinearMap, StateVector, WeightedSpace};
use crate::nonlinear::Nonlinearity;
use crate::sequence::Sequence;

/// Everything needed to pose one problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub family: OperatorFamily,
    pub dichotomy: DichotomyData,
    pub h: Inhomogeneity,
    pub boundary: Option<BoundaryOperator>,
    pub alpha: Option<StateVector>,
    pub nonlinearity: Option<Nonlinearity>,
    pub window: Window,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.family.dim()
    }
}

fn sgn(n: i64) -> f64 {
    n.signum() as f64
}

fn diag(v: &[f64]) -> LinearMap {
    LinearMap::from_diagonal(&DVector::from_column_slice(v))
}

/// `2^{-(n-1)}`, `1`, `2^n`: the scalar evolution of a coordinate with
/// multipliers `1/2` for `n > 0`, `1` at `0`, `2` for `n < 0`.
fn homoclinic_factor(n: i64) -> f64 {
    match n.signum() {
        1 => (1.0 - n as f64).exp2(),
        0 => 1.0,
        _ => (n as f64).exp2(),
    }
}

#[derive(Debug, Clone)]
pub struct Example1 {
    pub spec: ProblemSpec,
    pub m: i64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Example1 {
    /// Unique bounded solution of `x_m = alpha`.
    pub fn oracle(&self, n: i64) -> StateVector {
        let d = self.spec.dim();
        let s = homoclinic_factor(n) * homoclinic_factor(self.m).recip();
        let mut x = DVector::zeros(d);
        x[0] = s * self.alpha1;
        x[2] = s * self.alpha2;
        x
    }
}

/// `A_n = diag(2^{-sgn n}, 2^{sgn n}, 2^{-sgn n}, 2^{sgn n}, 2^{-|sgn n|}, ...)`
/// with the boundary condition `x_m = (alpha1, 0, alpha2, 0, 0, ...)`.
pub fn example1(d: usize, m: i64, alpha1: f64, alpha2: f64) -> Example1 {
    assert!(d >= 6 && d.is_multiple_of(2), "example 1 needs an even dimension >= 6");
    assert!(m > 0, "example 1 needs m > 0");
    let family = OperatorFamily::diagonal(d, 2.0, move |n| {
        let s = sgn(n);
        (0..d)
            .map(|i| match i {
                0 | 2 => (-s).exp2(),
                1 | 3 => s.exp2(),
                _ => (-s.abs()).exp2(),
            })
            .collect()
    });
    let p: Vec<f64> = (0..d).map(|i| if i == 1 || i == 3 { 0.0 } else { 1.0 }).collect();
    let q: Vec<f64> = (0..d).map(|i| if i == 0 || i == 2 { 0.0 } else { 1.0 }).collect();
    let dichotomy = DichotomyData::new(diag(&p), diag(&q), (2.0, 0.5), (1.0, 0.5)).expect("valid constants");
    let mut alpha = DVector::zeros(d);
    alpha[0] = alpha1;
    alpha[2] = alpha2;
    Example1 {
        spec: ProblemSpec {
            family,
            dichotomy,
            h: Inhomogeneity::zero(d),
            boundary: Some(BoundaryOperator::evaluation(m, d)),
            alpha: Some(alpha),
            nonlinearity: None,
            window: Window::new(-20, 20.max(m), 2).expect("valid window"),
        },
        m,
        alpha1,
        alpha2,
    }
}

#[derive(Debug, Clone)]
pub struct Example2 {
    pub spec: ProblemSpec,
    pub k: usize,
}

fn example2_family(d: usize, k: usize) -> OperatorFamily {
    OperatorFamily::diagonal(d, 2.0, move |n| {
        let s = sgn(n);
        (0..d).map(|i| if i < k { s.exp2() } else { (-s).exp2() }).collect()
    })
}

/// Projectors of Example 2 with `leading_zeros` zeros in `P`; the exponents
/// give `leading_zeros = k`.
pub fn example2_projectors(d: usize, k: usize, leading_zeros: usize) -> DichotomyData {
    let p: Vec<f64> = (0..d).map(|i| if i < leading_zeros { 0.0 } else { 1.0 }).collect();
    let q: Vec<f64> = (0..d).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
    DichotomyData::new(diag(&p), diag(&q), (2.0, 0.5), (1.0, 0.5)).expect("valid constants")
}

/// `A_n = diag(2^{sgn n} (k times), 2^{-sgn n}, ...)` with forcing `h`.
pub fn example2(d: usize, k: usize, h: Inhomogeneity) -> Example2 {
    assert!(k >= 1 && k < d, "example 2 needs 1 <= k < d");
    assert_eq!(h.dim(), d, "forcing dimension");
    Example2 {
        spec: ProblemSpec {
            family: example2_family(d, k),
            dichotomy: example2_projectors(d, k, k),
            h,
            boundary: None,
            alpha: None,
            nonlinearity: None,
            window: Window::new(-10, 10, 60).expect("valid window"),
        },
        k,
    }
}

impl Example2 {
    fn entries(&self) -> &BTreeMap<i64, StateVector> {
        assert_eq!(self.spec.h.tail(), TailRule::Zero, "closed forms need a finitely supported h");
        self.spec.h.table()
    }

    /// Left-hand sides of the `k` solvability conditions
    /// `sum_{l<0} 2^{l+1} h_l^p + h_0^p + sum_{l>0} 2^{-l} h_l^p`.
    pub fn solvability_oracle(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (&l, v) in self.entries() {
            let w = if l < 0 { (l as f64 + 1.0).exp2() } else { (-(l as f64)).exp2() };
            for (p, o) in out.iter_mut().enumerate() {
                *o += w * v[p];
            }
        }
        out
    }

    /// `G[h](n)` from the explicit scalar recursions; at `n = 0` this is the
    /// right-sided value `G(0+)`.
    pub fn green_oracle(&self, n: i64) -> StateVector {
        let d = self.spec.dim();
        let mut x = DVector::zeros(d);
        for (&l, v) in self.entries() {
            for i in 0..d {
                let unstable = i < self.k;
                let term = if n >= 1 {
                    if unstable && l >= n {
                        -((n - l - 1) as f64).exp2()
                    } else if !unstable && (0..n).contains(&l) {
                        ((l + 1 - n) as f64).exp2()
                    } else {
                        0.0
                    }
                } else if n == 0 {
                    if unstable && l >= 0 {
                        -(-(l as f64)).exp2()
                    } else {
                        0.0
                    }
                } else if unstable && l < n {
                    ((l + 1 - n) as f64).exp2()
                } else if !unstable && (n..0).contains(&l) {
                    -((n - l - 1) as f64).exp2()
                } else {
                    0.0
                };
                x[i] += term * v[i];
            }
        }
        x
    }

    /// The left-sided value `G(0-)`.
    pub fn green_oracle_left_zero(&self) -> StateVector {
        let d = self.spec.dim();
        let mut x = DVector::zeros(d);
        for (&l, v) in self.entries() {
            if l < 0 {
                for i in 0..self.k {
                    x[i] += ((l + 1) as f64).exp2() * v[i];
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct Example3 {
    pub spec: ProblemSpec,
    pub k: usize,
    pub q: i64,
    pub p: i64,
    /// `2^{1-q} - 2^{1-p}`.
    pub beta: f64,
    /// Weights `(1, 1, 1/2, 1/3, ...)` on the reduced coordinates `k+1..d`.
    pub weights: WeightedSpace,
}

/// Homogeneous Example 2 family with `l x = A (x_q - x_p) = alpha`,
/// `A = diag(0 (k+1 times), 1, 1/2, 1/3, ...)`.
pub fn example3(d: usize, k: usize, q: i64, p: i64, alpha: StateVector) -> Result<Example3> {
    if !(k >= 1 && k + 2 < d) {
        return Err(Error::ShapeMismatch(format!("example 3 needs 1 <= k < d - 2 (k = {k}, d = {d})")));
    }
    if !(0 < q && q < p) {
        return Err(Error::InvalidWindow(format!("example 3 needs 0 < q < p (q = {q}, p = {p})")));
    }
    if alpha.len() != d {
        return Err(Error::ShapeMismatch(format!("alpha has length {}, expected {d}", alpha.len())));
    }
    let a: Vec<f64> = (0..d).map(|i| if i <= k { 0.0 } else { 1.0 / (i - k) as f64 }).collect();
    let a = diag(&a);
    let boundary = BoundaryOperator::multi_point(vec![(q, a.clone()), (p, -a)])?;
    let weights: Vec<f64> = (0..d - k).map(|j| if j == 0 { 1.0 } else { 1.0 / j as f64 }).collect();
    Ok(Example3 {
        spec: ProblemSpec {
            family: example2_family(d, k),
            dichotomy: example2_projectors(d, k, k),
            h: Inhomogeneity::zero(d),
            boundary: Some(boundary),
            alpha: Some(alpha),
            nonlinearity: None,
            window: Window::new(-8, 8.max(p), 2)?,
        },
        k,
        q,
        p,
        beta: (1.0 - q as f64).exp2() - (1.0 - p as f64).exp2(),
        weights: WeightedSpace::new(weights)?,
    })
}

impl Example3 {
    /// Diagonal of the strong pseudo-inverse on the reduced coordinates:
    /// `0` on the kernel coordinate, then `m / beta`.
    pub fn strong_pinv_diagonal(&self) -> Vec<f64> {
        let r = self.spec.dim() - self.k;
        (0..r).map(|j| j as f64 / self.beta).collect()
    }

    /// Strong generalized solution with free scalar `c`.
    pub fn oracle(&self, c: f64, n: i64) -> StateVector {
        let d = self.spec.dim();
        let alpha = self.spec.alpha.as_ref().expect("example 3 has alpha");
        let u = homoclinic_factor(n);
        let mut x = DVector::zeros(d);
        x[self.k] = u * c;
        for i in self.k + 1..d {
            let m = (i - self.k) as f64;
            x[i] = u * m * alpha[i] / self.beta;
        }
        x
    }
}

/// Quadratic toy problems: homoclinic coordinates `0..s` (multipliers `1/2`
/// for `n >= 0`, `2` for `n < 0`) and one coordinate growing in both
/// directions, which carries `Z = |x_{0..s}|^2 - a 2^{-decay |n|}`.
#[derive(Debug, Clone)]
pub struct QuadraticToy {
    pub spec: ProblemSpec,
    pub a: f64,
    pub decay: f64,
    /// Generating roots satisfy `|c|^2 = a_prime`.
    pub a_prime: f64,
    pub homoclinic: usize,
}

/// `sum_k 2^{-|k+1| - p |k|}` in closed form.
pub fn toy_series(p: f64) -> f64 {
    let r = (-(1.0 + p)).exp2();
    (0.5 + 2.0 * r) / (1.0 - r)
}

fn toy(homoclinic: usize, a: f64, decay: f64) -> QuadraticToy {
    let d = homoclinic + 1;
    let family = OperatorFamily::diagonal(d, 2.0, move |n| {
        let (stable, unstable) = if n >= 0 { (0.5, 2.0) } else { (2.0, 0.5) };
        (0..d).map(|i| if i < homoclinic { stable } else { unstable }).collect()
    });
    let p: Vec<f64> = (0..d).map(|i| if i < homoclinic { 1.0 } else { 0.0 }).collect();
    let q: Vec<f64> = (0..d).map(|i| if i < homoclinic { 0.0 } else { 1.0 }).collect();
    let dichotomy = DichotomyData::new(diag(&p), diag(&q), (1.0, 0.5), (1.0, 0.5)).expect("valid constants");
    QuadraticToy {
        spec: ProblemSpec {
            family,
            dichotomy,
            h: Inhomogeneity::zero(d),
            boundary: None,
            alpha: None,
            nonlinearity: Some(Nonlinearity::quadratic(d, homoclinic, (0..homoclinic).collect(), a, decay)),
            window: Window::new(-20, 20, 40).expect("valid window"),
        },
        a,
        decay,
        a_prime: a * toy_series(decay) / toy_series(2.0),
        homoclinic,
    }
}

/// `d = 2`: roots `c = +-sqrt(a_prime)`.
pub fn quadratic_toy(a: f64, decay: f64) -> QuadraticToy {
    toy(1, a, decay)
}

/// `d = 3`: the roots form the circle `c1^2 + c2^2 = a_prime`.
pub fn circle_toy(a: f64, decay: f64) -> QuadraticToy {
    toy(2, a, decay)
}

/// A dense problem built around a known bounded solution.
#[derive(Debug, Clone)]
pub struct Manufactured {
    pub spec: ProblemSpec,
    pub x_star: Sequence,
    pub free_dim: usize,
    pub support: i64,
}

/// Random orthogonal matrix from the QR factors of a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> LinearMap {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthogonally conjugated diagonal families with `kernel_overlap`
/// homoclinic directions and as many cokernel directions, and `h`
/// manufactured from a compactly supported `x*`.
pub fn random_manufactured(d: usize, seed: u64, rates: (f64, f64), kernel_overlap: usize) -> Manufactured {
    let (l1, l2) = rates;
    assert!(l1 > 0.0 && l1 < 1.0 && l2 > 0.0 && l2 < 1.0, "rates in (0, 1)");
    assert!(2 * kernel_overlap <= d, "overlap too large for the dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = random_orthogonal(d, &mut rng);
    let both_stable = (d - 2 * kernel_overlap) / 2;
    // coordinate classes: homoclinic, cokernel, stable throughout, unstable throughout
    let in_plus = |i: usize| i < kernel_overlap || (2 * kernel_overlap..2 * kernel_overlap + both_stable).contains(&i);
    let in_minus = |i: usize| (kernel_overlap..2 * kernel_overlap + both_stable).contains(&i);

    let support = 3;
    let window = Window::new(-8, 8, 2).expect("valid window");
    let lo = window.lo() - 2;
    let hi = window.hi() + 2;
    let maps: Vec<LinearMap> = (lo..=hi)
        .map(|n| {
            let mult: Vec<f64> = (0..d)
                .map(|i| {
                    let r: f64 = rng.random_range(0.6..=0.95);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let (rate, decays) = if n >= 0 { (l1, in_plus(i)) } else { (l2, in_minus(i)) };
                    if decays {
                        sign * rate * r
                    } else {
                        sign / (rate * r)
                    }
                })
                .collect();
            &o * diag(&mult) * o.transpose()
        })
        .collect();
    let family = OperatorFamily::table(lo, maps).expect("finite table");
    let pd: Vec<f64> = (0..d).map(|i| if in_plus(i) { 1.0 } else { 0.0 }).collect();
    let qd: Vec<f64> = (0..d).map(|i| if in_minus(i) { 1.0 } else { 0.0 }).collect();
    let p = &o * diag(&pd) * o.transpose();
    let q = &o * diag(&qd) * o.transpose();
    let dichotomy = DichotomyData::new(p, q, (1.05, l1), (1.05, l2)).expect("valid constants");

    let x_star = Sequence::from_fn(window.lo(), window.hi(), |n| {
        if n.abs() <= support {
            DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
        } else {
            DVector::zeros(d)
        }
    });
    let mut table = BTreeMap::new();
    for n in -support - 1..=support {
        let hn = x_star.at(n + 1).expect("in range") - family.coefficient(n) * x_star.at(n).expect("in range");
        table.insert(n, hn);
    }
    let h = Inhomogeneity::from_table(d, table, TailRule::Zero).expect("finite forcing");
    Manufactured {
        spec: ProblemSpec {
            family,
            dichotomy,
            h,
            boundary: None,
            alpha: None,
            nonlinearity: None,
            window,
        },
        x_star,
        free_dim: kernel_overlap,
        support,
    }
}
