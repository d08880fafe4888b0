//! The reduction `D = P - (I - Q)`, the solvability residual
//! `sum_k H(k+1) h_k`, the generalized Green operator `G[h]` and the bounded
//! solution family `x_n(c) = U(n) P P_N(D) c + G[h](n)`.
//!
//! The generalized inverse `D^-` is always the Moore-Penrose `D^+`. Infinite
//! sums run over the extended range of the [`Window`]; the neglected tails
//! are bounded by the geometric majorant of the dichotomy estimates.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::dynamics::{DichotomyData, EvolutionTable, OperatorFamily, Window};
use crate::error::{Error, Result};
use crate::linalg::{
    self, check_generalized_inverse, pseudo_inverse_with_scale, range_basis, spectral_norm, GeneralizedInverseCheck, LinearMap,
    StateVector,
};
use crate::par::{self, Execution};
use crate::sequence::Sequence;

/// A right-hand side `n -> h_n`.
pub trait Forcing: Sync {
    fn dim(&self) -> usize;
    fn value(&self, n: i64) -> StateVector;
    /// `|||h|||`, the sup of `||h_n||` over all `n`.
    fn sup_norm(&self) -> f64;
    /// Sup of `||h_n||` over `n` outside `[lo, hi]`.
    fn tail_sup(&self, _lo: i64, _hi: i64) -> f64 {
        self.sup_norm()
    }
}

impl Forcing for Sequence {
    fn dim(&self) -> usize {
        Sequence::dim(self)
    }

    /// Zero outside the stored range.
    fn value(&self, n: i64) -> StateVector {
        self.get(n).cloned().unwrap_or_else(|| DVector::zeros(Sequence::dim(self)))
    }

    fn sup_norm(&self) -> f64 {
        Sequence::sup_norm(self)
    }

    fn tail_sup(&self, lo: i64, hi: i64) -> f64 {
        self.iter()
            .filter(|(n, _)| *n < lo || *n > hi)
            .fold(0.0, |acc, (_, v)| acc.max(v.norm()))
    }
}

/// How an [`Inhomogeneity`] table continues outside its keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailRule {
    #[default]
    Zero,
    /// Repeat the first/last table entry.
    Constant,
}

/// Tabulated inhomogeneity `h`; indices absent from the table are zero,
/// except beyond its ends when the tail is [`TailRule::Constant`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inhomogeneity {
    dim: usize,
    values: BTreeMap<i64, StateVector>,
    tail: TailRule,
    sup_norm: f64,
}

impl Inhomogeneity {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            values: BTreeMap::new(),
            tail: TailRule::Zero,
            sup_norm: 0.0,
        }
    }

    pub fn from_table(dim: usize, values: BTreeMap<i64, StateVector>, tail: TailRule) -> Result<Self> {
        let mut sup_norm: f64 = 0.0;
        for v in values.values() {
            if v.len() != dim {
                return Err(Error::ShapeMismatch(format!("h entry has length {}, expected {dim}", v.len())));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteInput("h"));
            }
            sup_norm = sup_norm.max(v.norm());
        }
        Ok(Self {
            dim,
            values,
            tail,
            sup_norm,
        })
    }

    /// `h_n = value * e_coord` at the listed indices.
    pub fn impulses(dim: usize, coord: usize, entries: &[(i64, f64)]) -> Self {
        let mut table = BTreeMap::new();
        for &(n, value) in entries {
            let v: &mut StateVector = table.entry(n).or_insert_with(|| DVector::zeros(dim));
            v[coord] += value;
        }
        Self::from_table(dim, table, TailRule::Zero).expect("finite impulses")
    }

    pub fn from_sequence(seq: &Sequence) -> Self {
        let table = seq.iter().map(|(n, v)| (n, v.clone())).collect();
        Self::from_table(seq.dim(), table, TailRule::Zero).expect("finite sequence")
    }

    pub fn table(&self) -> &BTreeMap<i64, StateVector> {
        &self.values
    }

    pub fn tail(&self) -> TailRule {
        self.tail
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|(&n, v)| (n, v * s)).collect(),
            tail: self.tail,
            sup_norm: self.sup_norm * s.abs(),
        }
    }
}

impl Forcing for Inhomogeneity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, n: i64) -> StateVector {
        if let Some(v) = self.values.get(&n) {
            return v.clone();
        }
        if self.tail == TailRule::Constant {
            if let (Some((&first, fv)), Some((&last, lv))) = (self.values.first_key_value(), self.values.last_key_value())
            {
                if n < first {
                    return fv.clone();
                }
                if n > last {
                    return lv.clone();
                }
            }
        }
        DVector::zeros(self.dim)
    }

    fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    fn tail_sup(&self, lo: i64, hi: i64) -> f64 {
        if self.tail == TailRule::Constant {
            return self.sup_norm;
        }
        self.values
            .iter()
            .filter(|(n, _)| **n < lo || **n > hi)
            .fold(0.0, |acc, (_, v)| acc.max(v.norm()))
    }
}

/// Dimensions entering the index `dim P P_N(D) - dim P_{B_D} Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexInfo {
    pub dim_kernel_basis: usize,
    pub dim_cokernel_basis: usize,
}

impl IndexInfo {
    pub fn index(&self) -> i64 {
        self.dim_kernel_basis as i64 - self.dim_cokernel_basis as i64
    }
}

/// `D = P - (I - Q)` with its pseudo-inverse and projectors.
#[derive(Debug, Clone)]
pub struct DReduction {
    pub d: LinearMap,
    pub d_plus: LinearMap,
    /// `P_N(D) = I - D^+ D`.
    pub pn: LinearMap,
    /// `P_{B_D} = I - D D^+`.
    pub pb: LinearMap,
    pub rank: usize,
    pub index_info: IndexInfo,
    /// Orthonormal basis of the range of `P P_N(D)`; the free parameters of
    /// the bounded family are coordinates in this basis.
    pub kernel_basis: LinearMap,
    /// `Some` when `[P, Q] = 0`: the check that `D` is its own generalized inverse.
    pub commuting_self_inverse: Option<GeneralizedInverseCheck>,
}

/// Tolerance used for structural checks on projectors.
const STRUCTURE_TOL: f64 = 1e-9;

pub fn build_d_reduction(data: &DichotomyData, rank_tolerance: f64) -> Result<DReduction> {
    data.check_projectors(STRUCTURE_TOL)?;
    let dim = data.dim();
    let eye = LinearMap::identity(dim, dim);
    let d = &data.p - (&eye - &data.q);
    let pinv = pseudo_inverse_with_scale(&d, rank_tolerance, 1.0)?;
    let pn = &eye - &pinv.pinv * &d;
    let pb = &eye - &d * &pinv.pinv;
    let p_pn = &data.p * &pn;
    let pb_q = &pb * &data.q;
    let kernel_basis = range_basis(&p_pn, rank_tolerance.max(1e-12));
    let index_info = IndexInfo {
        dim_kernel_basis: kernel_basis.ncols(),
        dim_cokernel_basis: linalg::rank(&pb_q, rank_tolerance.max(1e-12)),
    };
    let commutator = spectral_norm(&(&data.p * &data.q - &data.q * &data.p));
    let commuting_self_inverse = if commutator <= STRUCTURE_TOL {
        Some(check_generalized_inverse(&d, &d, STRUCTURE_TOL)?)
    } else {
        None
    };
    Ok(DReduction {
        d,
        d_plus: pinv.pinv,
        pn,
        pb,
        rank: pinv.rank,
        index_info,
        kernel_basis,
        commuting_self_inverse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityReport {
    pub residual: StateVector,
    pub tail_bound: f64,
    pub solvable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpReport {
    /// `G(0+) - G(0-)`.
    pub jump: StateVector,
    pub residual: StateVector,
    pub matches_residual: bool,
}

/// Green-operator evaluator bound to one problem and window.
#[derive(Debug, Clone)]
pub struct GreenOperator<'a> {
    family: &'a OperatorFamily,
    data: &'a DichotomyData,
    reduction: DReduction,
    window: Window,
    table: EvolutionTable,
    not_p: LinearMap,
    not_q: LinearMap,
    exec: Execution,
}

/// Bracketed sums shared by every evaluation of `G[h]`.
struct Prepared {
    /// `w_k = U^{-1}(k+1) h_k` for `k` in `[lo, hi]`.
    w: Vec<StateVector>,
    /// `g = sum_{k>=0} (I-P) w_k + sum_{k<0} Q w_k`.
    g: StateVector,
}

impl<'a> GreenOperator<'a> {
    pub fn new(
        family: &'a OperatorFamily,
        data: &'a DichotomyData,
        window: Window,
        rank_tolerance: f64,
        exec: Execution,
    ) -> Result<Self> {
        if family.dim() != data.dim() {
            return Err(Error::ShapeMismatch("family and projectors differ in dimension".into()));
        }
        let reduction = build_d_reduction(data, rank_tolerance)?;
        let table = EvolutionTable::new(family, window.lo(), window.hi() + 1, rank_tolerance)?;
        let eye = LinearMap::identity(data.dim(), data.dim());
        Ok(Self {
            family,
            data,
            reduction,
            window,
            table,
            not_p: &eye - &data.p,
            not_q: &eye - &data.q,
            exec,
        })
    }

    pub fn family(&self) -> &'a OperatorFamily {
        self.family
    }

    pub fn data(&self) -> &'a DichotomyData {
        self.data
    }

    pub fn reduction(&self) -> &DReduction {
        &self.reduction
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn table(&self) -> &EvolutionTable {
        &self.table
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// First and last index at which `G[h]` is evaluated.
    pub fn range(&self) -> (i64, i64) {
        (self.window.lo(), self.window.hi())
    }

    fn check_range(&self, n: i64) -> Result<()> {
        let (lo, hi) = self.range();
        if n < lo || n > hi {
            return Err(Error::IndexOutOfWindow { n, lo, hi });
        }
        Ok(())
    }

    /// `H(k+1) = P_{B_D} Q U^{-1}(k+1)` together with the defect against the
    /// second expression `P_{B_D} (I - P) U^{-1}(k+1)`.
    pub fn h_operator(&self, k: i64) -> Result<(LinearMap, f64)> {
        self.check_range(k)?;
        let u_inv = self.table.u_inv(k + 1);
        let via_q = &self.reduction.pb * &self.data.q * u_inv;
        let via_p = &self.reduction.pb * &self.not_p * u_inv;
        let defect = spectral_norm(&(&via_q - via_p));
        Ok((via_q, defect))
    }

    fn prepare(&self, h: &dyn Forcing) -> Prepared {
        let (lo, hi) = self.range();
        let w: Vec<StateVector> = par::map_range(self.exec, lo, hi, |k| {
            let hk = h.value(k);
            if hk.iter().all(|&x| x == 0.0) {
                hk
            } else {
                self.table.u_inv(k + 1) * hk
            }
        });
        let mut pos = DVector::zeros(self.dim());
        let mut neg = DVector::zeros(self.dim());
        for (i, wk) in w.iter().enumerate() {
            if lo + i as i64 >= 0 {
                pos += wk;
            } else {
                neg += wk;
            }
        }
        let g = &self.not_p * pos + &self.data.q * neg;
        Prepared { w, g }
    }

    /// The bracketed vector `g` of the Green formula (independent of `n`).
    pub fn bracket(&self, h: &dyn Forcing) -> StateVector {
        self.prepare(h).g
    }

    /// `sum_k H(k+1) h_k` over the extended range, with the tail majorant and
    /// the verdict `||residual|| <= tol + tail_bound`.
    pub fn solvability_residual(&self, h: &dyn Forcing, tol: f64) -> Result<SolvabilityReport> {
        let (lo, hi) = self.range();
        let tail_bound = self.data.tail_bound(self.window.tail_len, h.tail_sup(lo, hi));
        if tail_bound > tol {
            return Err(Error::WindowTooSmall { tail_bound, tol });
        }
        let residual = self.raw_residual(h);
        let solvable = residual.norm() <= tol + tail_bound;
        Ok(SolvabilityReport {
            residual,
            tail_bound,
            solvable,
        })
    }

    /// `sum_k H(k+1) h_k` without the tail-bound gate.
    pub fn raw_residual(&self, h: &dyn Forcing) -> StateVector {
        let (lo, hi) = self.range();
        let terms = par::map_range(self.exec, lo, hi, |k| {
            let hk = h.value(k);
            if hk.iter().all(|&x| x == 0.0) {
                None
            } else {
                Some(self.table.u_inv(k + 1) * hk)
            }
        });
        let mut sum = DVector::zeros(self.dim());
        for t in terms.into_iter().flatten() {
            sum += t;
        }
        &self.reduction.pb * &self.data.q * sum
    }

    fn plus_branch(&self, prep: &Prepared, n: i64) -> StateVector {
        let (lo, hi) = self.range();
        let mut before = DVector::zeros(self.dim());
        for k in 0..n {
            before += &prep.w[(k - lo) as usize];
        }
        let mut after = DVector::zeros(self.dim());
        for k in n..=hi {
            after += &prep.w[(k - lo) as usize];
        }
        let bracket = &self.data.p * before - &self.not_p * after + &self.data.p * (&self.reduction.d_plus * &prep.g);
        self.table.u(n) * bracket
    }

    fn minus_branch(&self, prep: &Prepared, n: i64) -> StateVector {
        let lo = self.range().0;
        let mut before = DVector::zeros(self.dim());
        for k in lo..n {
            before += &prep.w[(k - lo) as usize];
        }
        let mut after = DVector::zeros(self.dim());
        for k in n..0 {
            after += &prep.w[(k - lo) as usize];
        }
        let bracket = &self.data.q * before - &self.not_q * after + &self.not_q * (&self.reduction.d_plus * &prep.g);
        self.table.u(n) * bracket
    }

    /// `G[h](n)`; the `n >= 0` branch is used at `n = 0`.
    pub fn apply(&self, h: &dyn Forcing, n: i64) -> Result<StateVector> {
        self.check_range(n)?;
        let prep = self.prepare(h);
        Ok(if n >= 0 {
            self.plus_branch(&prep, n)
        } else {
            self.minus_branch(&prep, n)
        })
    }

    /// Both branches evaluated at `n = 0`: `(G(0+), G(0-))`.
    pub fn branches_at_zero(&self, h: &dyn Forcing) -> (StateVector, StateVector) {
        let prep = self.prepare(h);
        (self.plus_branch(&prep, 0), self.minus_branch(&prep, 0))
    }

    /// `G[h]` over the whole extended range, via prefix sums of `w_k`.
    pub fn apply_all(&self, h: &dyn Forcing) -> Sequence {
        let prep = self.prepare(h);
        self.apply_prepared(&prep)
    }

    fn apply_prepared(&self, prep: &Prepared) -> Sequence {
        let (lo, hi) = self.range();
        let dim = self.dim();
        let len = (hi - lo + 1) as usize;
        // prefix[i] = sum_{k < lo + i} w_k over the extended range
        let mut prefix = Vec::with_capacity(len + 1);
        let mut acc = DVector::zeros(dim);
        prefix.push(acc.clone());
        for wk in &prep.w {
            acc += wk;
            prefix.push(acc.clone());
        }
        let at = |n: i64| &prefix[(n - lo) as usize];
        let total = &prefix[len];
        let zero = at(0).clone();
        let corr_plus = &self.data.p * (&self.reduction.d_plus * &prep.g);
        let corr_minus = &self.not_q * (&self.reduction.d_plus * &prep.g);

        let values = par::map_range(self.exec, lo, hi, |n| {
            let bracket = if n >= 0 {
                let before = at(n) - &zero;
                let after = total - at(n);
                &self.data.p * before - &self.not_p * after + &corr_plus
            } else {
                let before = at(n).clone();
                let after = &zero - at(n);
                &self.data.q * before - &self.not_q * after + &corr_minus
            };
            self.table.u(n) * bracket
        });
        Sequence::new(lo, values)
    }

    /// `G(0+) - G(0-)` compared against `-sum_k H(k+1) h_k`.
    pub fn jump_defect(&self, h: &dyn Forcing, tol: f64) -> JumpReport {
        let (plus, minus) = self.branches_at_zero(h);
        let jump = plus - minus;
        let residual = self.raw_residual(h);
        let matches_residual = (&jump + &residual).norm() < tol;
        JumpReport {
            jump,
            residual,
            matches_residual,
        }
    }

    /// The bounded family `x_n(c) = U(n) P P_N(D) c + G[h](n)` on the extended range.
    pub fn family_for(&self, h: &dyn Forcing) -> BoundedSolutionFamily {
        let particular = self.apply_all(h);
        self.family_with_particular(particular)
    }

    pub(crate) fn family_with_particular(&self, particular: Sequence) -> BoundedSolutionFamily {
        let (lo, hi) = self.range();
        let p_pn = &self.data.p * &self.reduction.pn;
        let e = &self.reduction.kernel_basis;
        let basis = par::map_range(self.exec, lo, hi, |n| self.table.u(n) * &p_pn);
        let reduced_basis = par::map_range(self.exec, lo, hi, |n| self.table.u(n) * e);
        BoundedSolutionFamily {
            start: lo,
            particular,
            basis,
            reduced_basis,
            embedding: e.clone(),
            free_dim: e.ncols(),
        }
    }

    /// Least-squares branch for non-solvable `h`: the same family, plus the
    /// defect `||D xi - g||` of the reduced equation at `xi = D^+ g`.
    pub fn pseudo_solution_family(&self, h: &dyn Forcing) -> PseudoSolution {
        let prep = self.prepare(h);
        let xi = &self.reduction.d_plus * &prep.g;
        let reduced_defect = (&self.reduction.d * &xi - &prep.g).norm();
        let particular = self.apply_prepared(&prep);
        PseudoSolution {
            family: self.family_with_particular(particular),
            g: prep.g,
            xi,
            reduced_defect,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PseudoSolution {
    pub family: BoundedSolutionFamily,
    /// Right-hand side of the reduced equation `D xi = g`.
    pub g: StateVector,
    /// Minimum-norm least-squares solution `D^+ g`.
    pub xi: StateVector,
    pub reduced_defect: f64,
}

/// `x_n(c) = basis(n) c + particular(n)` on a contiguous range.
#[derive(Debug, Clone)]
pub struct BoundedSolutionFamily {
    start: i64,
    pub particular: Sequence,
    /// `U(n) P P_N(D)` (d x d).
    pub basis: Vec<LinearMap>,
    /// `U(n) E` with `E` the orthonormal basis of the range of `P P_N(D)` (d x free_dim).
    pub reduced_basis: Vec<LinearMap>,
    pub embedding: LinearMap,
    pub free_dim: usize,
}

impl BoundedSolutionFamily {
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.basis.len() as i64 - 1
    }

    fn idx(&self, n: i64) -> Result<usize> {
        if n < self.start || n > self.end() {
            return Err(Error::IndexOutOfWindow {
                n,
                lo: self.start,
                hi: self.end(),
            });
        }
        Ok((n - self.start) as usize)
    }

    pub fn basis_at(&self, n: i64) -> Result<&LinearMap> {
        Ok(&self.basis[self.idx(n)?])
    }

    pub fn reduced_basis_at(&self, n: i64) -> Result<&LinearMap> {
        Ok(&self.reduced_basis[self.idx(n)?])
    }

    /// `x_n(c)` for a full-dimensional parameter `c`.
    pub fn bounded_solution(&self, c: &StateVector, n: i64) -> Result<StateVector> {
        let i = self.idx(n)?;
        Ok(&self.basis[i] * c + &self.particular.values()[i])
    }

    /// Whole sequence for a full-dimensional `c`.
    pub fn solution(&self, c: &StateVector) -> Sequence {
        Sequence::new(
            self.start,
            self.basis
                .iter()
                .zip(self.particular.values())
                .map(|(b, p)| b * c + p)
                .collect(),
        )
    }

    /// Whole sequence for reduced coordinates `c` (length `free_dim`).
    pub fn solution_reduced(&self, c: &StateVector) -> Sequence {
        Sequence::new(
            self.start,
            self.reduced_basis
                .iter()
                .zip(self.particular.values())
                .map(|(b, p)| b * c + p)
                .collect(),
        )
    }
}

/// `max_n ||x_{n+1} - A_n x_n - h_n||` over `n` in `[lo, hi - 1]`.
pub fn recursion_defect(family: &OperatorFamily, x: &Sequence, h: &dyn Forcing, lo: i64, hi: i64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in lo..hi {
        let r = x.at(n + 1)? - family.coefficient(n) * x.at(n)? - h.value(n);
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

/// A priori norm estimates for `x_n(c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBound {
    pub total: f64,
    kernel_part: f64,
    dminus_norm: f64,
    h_sup: f64,
    k1: f64,
    lambda1: f64,
    k2: f64,
    lambda2: f64,
}

impl NormBound {
    fn series(&self) -> f64 {
        self.k1 * self.lambda1 / (1.0 - self.lambda1) + self.k2 * self.lambda2 / (1.0 - self.lambda2)
    }

    /// Per-index bound.
    pub fn at(&self, n: i64) -> f64 {
        let h = self.h_sup;
        if n >= 0 {
            let decay = self.lambda1.powi(n as i32);
            self.k1 * decay * self.kernel_part
                + self.k1 * decay * self.dminus_norm * self.series() * h
                + self.k1 * (1.0 + self.lambda1 - decay) / (1.0 - self.lambda1) * h
        } else {
            let m = (-n) as i32;
            let decay = self.lambda2.powi(m);
            self.k2 * decay * self.kernel_part
                + self.k2 * decay * self.dminus_norm * self.series() * h
                + self.k2 * (1.0 + self.lambda2 - self.lambda2.powi(m + 1)) / (1.0 - self.lambda2) * h
        }
    }
}

/// Bounds on `||x_n(c)||` from the dichotomy constants, `||P_N(D) c||`,
/// `||D^-||` and `|||h|||`.
pub fn norm_bound(red: &DReduction, data: &DichotomyData, c: &StateVector, h_sup: f64) -> NormBound {
    let kernel_part = (&red.pn * c).norm();
    let dminus_norm = spectral_norm(&red.d_plus);
    let k = data.k1.max(data.k2);
    let big = data.lambda1.max(data.lambda2);
    let small = data.lambda1.min(data.lambda2);
    let mut nb = NormBound {
        total: 0.0,
        kernel_part,
        dminus_norm,
        h_sup,
        k1: data.k1,
        lambda1: data.lambda1,
        k2: data.k2,
        lambda2: data.lambda2,
    };
    nb.total = k * kernel_part + k * dminus_norm * nb.series() * h_sup + k * (1.0 + big) / (1.0 - small) * h_sup;
    nb
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalCase {
    /// `||P P_N(D) - P||`.
    pub kernel_defect: f64,
    /// `||P_{B_D} Q - Q||`.
    pub cokernel_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrichotomyReport {
    pub commutator: f64,
    /// `D` checked as its own generalized inverse.
    pub self_inverse: GeneralizedInverseCheck,
    /// `||P (I - D^2) - (P - PQ)||`.
    pub kernel_defect: f64,
    /// `||(I - D^2) Q - (Q - PQ)||`.
    pub cokernel_defect: f64,
    /// Present when `PQ = 0`.
    pub orthogonal: Option<OrthogonalCase>,
    /// `||D^+ - D||`, present when `P` and `Q` are symmetric.
    pub mp_equals_d: Option<f64>,
    pub all_pass: bool,
}

/// Identities of the commuting-projector case, using `D^- = D` so that
/// `P_N(D) = P_{B_D} = I - D^2`.
pub fn trichotomy_identities(data: &DichotomyData, rank_tolerance: f64, tol: f64) -> Result<TrichotomyReport> {
    let (p, q) = (&data.p, &data.q);
    let commutator = spectral_norm(&(p * q - q * p));
    if commutator > tol {
        return Err(Error::NotCommuting { defect: commutator });
    }
    let dim = data.dim();
    let eye = LinearMap::identity(dim, dim);
    let d = p - (&eye - q);
    let self_inverse = check_generalized_inverse(&d, &d, tol)?;
    let proj = &eye - &d * &d;
    let pq = p * q;
    let kernel_defect = spectral_norm(&(p * &proj - (p - &pq)));
    let cokernel_defect = spectral_norm(&(&proj * q - (q - &pq)));
    let mut all_pass = self_inverse.holds && kernel_defect <= tol && cokernel_defect <= tol;

    let orthogonal = if spectral_norm(&pq) <= tol {
        let case = OrthogonalCase {
            kernel_defect: spectral_norm(&(p * &proj - p)),
            cokernel_defect: spectral_norm(&(&proj * q - q)),
        };
        all_pass &= case.kernel_defect <= tol && case.cokernel_defect <= tol;
        Some(case)
    } else {
        None
    };
    let symmetric = spectral_norm(&(p - p.transpose())) <= tol && spectral_norm(&(q - q.transpose())) <= tol;
    let mp_equals_d = if symmetric {
        let dp = pseudo_inverse_with_scale(&d, rank_tolerance, 1.0)?.pinv;
        let defect = spectral_norm(&(dp - &d));
        all_pass &= defect <= tol;
        Some(defect)
    } else {
        None
    };
    Ok(TrichotomyReport {
        commutator,
        self_inverse,
        kernel_defect,
        cokernel_defect,
        orthogonal,
        mp_equals_d,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_RANK_TOL;
    use crate::problems;

    fn diag(v: &[f64]) -> LinearMap {
        LinearMap::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn example1_reduction() {
        let pr = problems::example1(10, 2, 1.0, 0.0);
        let red = build_d_reduction(&pr.spec.dichotomy, DEFAULT_RANK_TOL).unwrap();
        // P + Q - I from the stated projectors has four leading zeros
        let expected = diag(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(red.d, expected);
        assert!((&red.d_plus - &red.d).norm() < 1e-14);
        assert!((&red.pn - diag(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
        assert_eq!(red.index_info.dim_kernel_basis, 2);
        assert_eq!(red.index_info.dim_cokernel_basis, 2);
        assert_eq!(red.index_info.index(), 0);
        assert!(red.commuting_self_inverse.unwrap().holds);
    }

    #[test]
    fn example2_and_regular_reductions() {
        let pr = problems::example2(6, 2, Inhomogeneity::zero(6));
        let red = build_d_reduction(&pr.spec.dichotomy, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(red.d.norm(), 0.0);
        assert!((&red.pn - LinearMap::identity(6, 6)).norm() < 1e-15);
        assert!((&red.pb - LinearMap::identity(6, 6)).norm() < 1e-15);

        let eye = LinearMap::identity(3, 3);
        let data = DichotomyData::new(eye.clone(), eye.clone(), (1.0, 0.5), (1.0, 0.5)).unwrap();
        let red = build_d_reduction(&data, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(red.d, eye);
        assert!(red.pn.norm() < 1e-15 && red.pb.norm() < 1e-15);
        assert_eq!(red.kernel_basis.ncols(), 0);
    }

    #[test]
    fn rejects_non_projector() {
        let data = DichotomyData::new(diag(&[2.0, 0.0]), diag(&[0.0, 1.0]), (1.0, 0.5), (1.0, 0.5)).unwrap();
        assert!(matches!(build_d_reduction(&data, 1e-10), Err(Error::NotAProjector { which: "P", .. })));
    }

    #[test]
    fn example1_h_operator_support() {
        let pr = problems::example1(10, 2, 1.0, 0.0);
        let w = Window::new(-6, 6, 4).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential)
            .unwrap();
        for k in -6..=6 {
            let (h, defect) = g.h_operator(k).unwrap();
            assert!(defect < 1e-10);
            // P_{B_D} Q = diag(0, 1, 0, 1, 0, ...): only coordinates 2 and 4 survive
            for i in 0..10 {
                for j in 0..10 {
                    if !(i == j && (i == 1 || i == 3)) {
                        assert_eq!(h[(i, j)], 0.0);
                    }
                }
            }
            let expected = g.table().u_inv(k + 1)[(1, 1)];
            assert_eq!(h[(1, 1)], expected);
            assert_eq!(h[(3, 3)], expected);
        }
    }

    #[test]
    fn regular_case_has_no_residual() {
        let eye = LinearMap::identity(2, 2);
        let data = DichotomyData::new(eye.clone(), eye.clone(), (1.0, 0.5), (1.0, 0.5)).unwrap();
        let fam = OperatorFamily::constant(eye * 0.5).unwrap();
        let w = Window::new(-3, 3, 40).unwrap();
        let g = GreenOperator::new(&fam, &data, w, DEFAULT_RANK_TOL, Execution::Sequential).unwrap();
        assert!(g.h_operator(0).unwrap().0.norm() == 0.0);
        let h = Inhomogeneity::impulses(2, 0, &[(0, 1.0), (2, -3.0)]);
        let r = g.solvability_residual(&h, 1e-9).unwrap();
        assert!(r.solvable);
        assert_eq!(r.residual.norm(), 0.0);
    }

    #[test]
    fn example2_h1_is_q_scaled() {
        let pr = problems::example2(6, 2, Inhomogeneity::zero(6));
        let w = Window::new(-2, 2, 4).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential)
            .unwrap();
        // U(1) = I (A_0 = I), so H(1) = Q
        let (h1, _) = g.h_operator(0).unwrap();
        assert_eq!(h1, diag(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
        // H(2) = Q U^{-1}(2) = diag(2^{-1}, 2^{-1}, 0, ...)
        let (h2, _) = g.h_operator(1).unwrap();
        assert_eq!(h2, diag(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_forcing_gives_zero_everything() {
        let pr = problems::example2(6, 2, Inhomogeneity::zero(6));
        let w = Window::new(-5, 5, 30).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Parallel)
            .unwrap();
        let h = Inhomogeneity::zero(6);
        let r = g.solvability_residual(&h, 1e-9).unwrap();
        assert!(r.solvable && r.residual.norm() == 0.0);
        assert!(g.apply_all(&h).sup_norm() == 0.0);
        let j = g.jump_defect(&h, 1e-12);
        assert!(j.jump.norm() == 0.0 && j.matches_residual);
        let fam = g.family_for(&h);
        assert_eq!(fam.solution(&DVector::zeros(6)).sup_norm(), 0.0);
    }

    #[test]
    fn single_point_apply_matches_prefix_evaluation() {
        let pr = problems::example2(5, 2, Inhomogeneity::zero(5));
        let w = Window::new(-4, 4, 20).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential)
            .unwrap();
        let mut table = BTreeMap::new();
        for n in -3..=3 {
            table.insert(n, DVector::from_fn(5, |i, _| ((i as i64 + 1) * (n + 5)) as f64 * 0.1));
        }
        let h = Inhomogeneity::from_table(5, table, TailRule::Zero).unwrap();
        let all = g.apply_all(&h);
        for n in -4..=4 {
            let single = g.apply(&h, n).unwrap();
            assert!((single - all.at(n).unwrap()).norm() < 1e-12);
        }
        assert!(g.apply(&h, 100).is_err());
    }

    #[test]
    fn window_too_small_is_reported() {
        let pr = problems::example2(4, 1, Inhomogeneity::zero(4));
        let w = Window::new(-2, 2, 3).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential)
            .unwrap();
        let h = Inhomogeneity::impulses(4, 0, &[(0, 1.0)]);
        assert_eq!(g.solvability_residual(&h, 1e-9).unwrap().tail_bound, 0.0);
        let mut table = BTreeMap::new();
        table.insert(0, DVector::from_element(4, 1.0));
        let h = Inhomogeneity::from_table(4, table, TailRule::Constant).unwrap();
        assert!(matches!(g.solvability_residual(&h, 1e-9), Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn norm_bound_example1_homogeneous() {
        let pr = problems::example1(10, 2, 1.0, 0.0);
        let red = build_d_reduction(&pr.spec.dichotomy, DEFAULT_RANK_TOL).unwrap();
        let mut data = pr.spec.dichotomy.clone();
        data.k1 = 1.0;
        data.k2 = 1.0;
        let mut c = DVector::zeros(10);
        c[0] = 1.0;
        let nb = norm_bound(&red, &data, &c, 0.0);
        assert_eq!(nb.total, 1.0);
        assert_eq!(norm_bound(&red, &data, &DVector::zeros(10), 0.0).total, 0.0);
        // sup of ||x_n|| for the homogeneous family is 1, attained at n = 0 and 1
        let w = Window::new(-10, 10, 2).unwrap();
        let g = GreenOperator::new(&pr.spec.family, &pr.spec.dichotomy, w, DEFAULT_RANK_TOL, Execution::Sequential)
            .unwrap();
        let x = g.family_for(&Inhomogeneity::zero(10)).solution(&c);
        assert!((x.sup_norm() - 1.0).abs() < 1e-15);
        assert!(x.sup_norm() <= nb.total);
    }

    #[test]
    fn trichotomy_cases() {
        let pr = problems::example1(10, 2, 1.0, 0.0);
        let r = trichotomy_identities(&pr.spec.dichotomy, DEFAULT_RANK_TOL, 1e-12).unwrap();
        assert!(r.all_pass, "{r:?}");
        assert!(r.mp_equals_d.is_some());

        let eye = LinearMap::identity(3, 3);
        let data = DichotomyData::new(eye.clone(), eye.clone(), (1.0, 0.5), (1.0, 0.5)).unwrap();
        let r = trichotomy_identities(&data, DEFAULT_RANK_TOL, 1e-12).unwrap();
        assert!(r.all_pass);
        assert!(r.orthogonal.is_none());

        let pr = problems::example2(6, 2, Inhomogeneity::zero(6));
        let r = trichotomy_identities(&pr.spec.dichotomy, DEFAULT_RANK_TOL, 1e-12).unwrap();
        let o = r.orthogonal.clone().expect("PQ = 0");
        assert!(o.kernel_defect < 1e-12 && o.cokernel_defect < 1e-12);
        assert!(r.all_pass);

        let p = LinearMap::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let q = diag(&[0.0, 1.0]);
        let data = DichotomyData::new(p, q, (1.0, 0.5), (1.0, 0.5)).unwrap();
        assert!(matches!(trichotomy_identities(&data, 1e-10, 1e-12), Err(Error::NotCommuting { .. })));
    }

    #[test]
    fn oblique_commuting_projectors() {
        // commuting but non-symmetric: D^- = D still holds, D^+ = D is not claimed
        let s = LinearMap::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.0, 1.0, 0.3, 0.0, 0.0, 1.0]);
        let s_inv = s.clone().try_inverse().unwrap();
        let p = &s * diag(&[1.0, 1.0, 0.0]) * &s_inv;
        let q = &s * diag(&[0.0, 1.0, 1.0]) * &s_inv;
        let data = DichotomyData::new(p, q, (1.0, 0.5), (1.0, 0.5)).unwrap();
        let r = trichotomy_identities(&data, DEFAULT_RANK_TOL, 1e-12).unwrap();
        assert!(r.self_inverse.holds);
        assert!(r.kernel_defect < 1e-12 && r.cokernel_defect < 1e-12);
        assert!(r.mp_equals_d.is_none());
    }

    #[test]
    fn inhomogeneity_tails() {
        let mut table = BTreeMap::new();
        table.insert(-1, DVector::from_element(2, 1.0));
        table.insert(2, DVector::from_element(2, 3.0));
        let h = Inhomogeneity::from_table(2, table.clone(), TailRule::Constant).unwrap();
        assert_eq!(h.value(-7), DVector::from_element(2, 1.0));
        assert_eq!(h.value(9), DVector::from_element(2, 3.0));
        assert_eq!(h.value(0), DVector::zeros(2));
        let h = Inhomogeneity::from_table(2, table, TailRule::Zero).unwrap();
        assert_eq!(h.value(9), DVector::zeros(2));
        assert!((Forcing::sup_norm(&h) - 18f64.sqrt()).abs() < 1e-15);
    }
}
