//! Weakly nonlinear problem
//! `x_{n+1} = A_n x_n + eps Z(x_n, n, eps) + h_n`, `l x = alpha`.
//!
//! The linear problem at `eps = 0` has the bounded family `x^0(c)`. Roots of
//! the generating equation `F(c) = 0` select the members that continue for
//! small `eps`, and the continuation is computed by the fixed-point scheme
//! built on `B0 = F'(c*)`.
//!
//! Parameters are written `t`: coordinates in an orthonormal basis of the
//! admissible directions (the range of `P P_N(D) P_N(V)`, or of `P P_N(D)`
//! without a boundary operator).

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::bvp::{reduce_bvp, BoundaryOperator};
use crate::error::{Error, Result};
use crate::green::{BoundedSolutionFamily, Forcing, GreenOperator};
use crate::linalg::{pseudo_inverse, spectral_norm, LinearMap, StateVector};
use crate::par;
use crate::sequence::Sequence;

pub type ZFn = Arc<dyn Fn(&StateVector, i64, f64) -> StateVector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&StateVector, i64) -> LinearMap + Send + Sync>;

/// `Z(x, n, eps)` with an optional exact Jacobian `dZ/dx` at `eps = 0`.
#[derive(Clone)]
pub struct Nonlinearity {
    dim: usize,
    z: ZFn,
    jacobian: Option<JacobianFn>,
    pub lipschitz_hint: Option<f64>,
    /// Admissible distance from the generating solution.
    pub domain_radius: f64,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("dim", &self.dim)
            .field("jacobian", &self.jacobian.is_some())
            .field("lipschitz_hint", &self.lipschitz_hint)
            .field("domain_radius", &self.domain_radius)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(
        dim: usize,
        domain_radius: f64,
        z: impl Fn(&StateVector, i64, f64) -> StateVector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            z: Arc::new(z),
            jacobian: None,
            lipschitz_hint: None,
            domain_radius,
        }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&StateVector, i64) -> LinearMap + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, f64::INFINITY, move |_, _, _| DVector::zeros(dim))
            .with_jacobian(move |_, _| LinearMap::zeros(dim, dim))
    }

    /// `Z_target = sum_{s in sources} x_s^2 - a 2^{-decay |n|}`, other components zero.
    pub fn quadratic(dim: usize, target: usize, sources: Vec<usize>, a: f64, decay: f64) -> Self {
        let src = sources.clone();
        Self::new(dim, f64::INFINITY, move |x, n, _| {
            let mut out = DVector::zeros(dim);
            out[target] = src.iter().map(|&s| x[s] * x[s]).sum::<f64>() - a * (-decay * n.abs() as f64).exp2();
            out
        })
        .with_jacobian(move |x, _| {
            let mut j = LinearMap::zeros(dim, dim);
            for &s in &sources {
                j[(target, s)] = 2.0 * x[s];
            }
            j
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, x: &StateVector, n: i64, eps: f64) -> StateVector {
        (self.z)(x, n, eps)
    }

    /// `A1(n) = dZ(x, n, 0)/dx`, by central differences when no Jacobian is supplied.
    pub fn a1(&self, x: &StateVector, n: i64) -> LinearMap {
        if let Some(j) = &self.jacobian {
            return j(x, n);
        }
        let step = f64::EPSILON.sqrt() * (1.0 + x.norm());
        let mut out = LinearMap::zeros(self.dim, self.dim);
        let mut xp = x.clone();
        for i in 0..self.dim {
            xp[i] = x[i] + step;
            let plus = self.eval(&xp, n, 0.0);
            xp[i] = x[i] - step;
            let minus = self.eval(&xp, n, 0.0);
            xp[i] = x[i];
            out.set_column(i, &((plus - minus) / (2.0 * step)));
        }
        out
    }
}

/// Which first block to use in `B0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum B0Variant {
    /// `F'(c*)`: `sum_k H(k+1) A1(k) U(k) ...`.
    #[default]
    Derivative,
    /// The block as displayed without `A1(k)`.
    Displayed,
}

#[derive(Debug, Clone)]
pub struct GeneratingRoot {
    pub t_star: StateVector,
    /// Reduced coordinates (basis of the range of `P P_N(D)`).
    pub c_reduced: StateVector,
    /// The same element in `R^d`.
    pub c_star: StateVector,
    pub f_residual: f64,
    pub b0: LinearMap,
    pub b0_pinv: LinearMap,
    pub pn_b0: LinearMap,
    pub simple: bool,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub y: Sequence,
    pub t: StateVector,
    pub correction_norm: f64,
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iterates: Vec<IterateRecord>,
    pub contraction_ratio: f64,
    pub converged: bool,
    pub eps_star: f64,
}

#[derive(Debug, Clone)]
pub struct Continuation {
    pub trace: IterationTrace,
    /// `x(eps_star) = x^0(c*) + y`.
    pub x: Sequence,
    pub halvings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientCondition {
    pub holds: bool,
    pub defect: f64,
}

/// Options for [`GeneratingProblem::iterate_solution`].
#[derive(Debug, Clone)]
pub struct IterationOptions {
    pub eps: f64,
    /// Element whose `P_N(B0)` component selects the branch.
    pub c_rho: Option<StateVector>,
    /// Use `c_rho(eps) = eps * c_rho`.
    pub scale_c_rho: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            c_rho: None,
            scale_c_rho: false,
            max_iter: 200,
            tol: 1e-12,
            max_halvings: 20,
        }
    }
}

/// The linear generating problem together with `Z`.
pub struct GeneratingProblem<'g, 'a> {
    green: &'g GreenOperator<'a>,
    nl: &'g Nonlinearity,
    h: &'g dyn Forcing,
    boundary: Option<&'g BoundaryOperator>,
    family: BoundedSolutionFamily,
    c_base: StateVector,
    params: LinearMap,
    v_pinv: Option<LinearMap>,
    pcoker_v: Option<LinearMap>,
    rank_tolerance: f64,
}

impl<'g, 'a> GeneratingProblem<'g, 'a> {
    pub fn new(
        green: &'g GreenOperator<'a>,
        h: &'g dyn Forcing,
        boundary: Option<(&'g BoundaryOperator, &StateVector)>,
        nl: &'g Nonlinearity,
        rank_tolerance: f64,
    ) -> Result<Self> {
        if nl.dim() != green.dim() {
            return Err(Error::ShapeMismatch(format!(
                "nonlinearity has dimension {}, problem has {}",
                nl.dim(),
                green.dim()
            )));
        }
        let family = green.family_for(h);
        let r = family.free_dim;
        let (c_base, params, v_pinv, pcoker_v, l) = match boundary {
            Some((l, alpha)) => {
                let red = reduce_bvp(green, &family, l, alpha, rank_tolerance)?;
                let sol = red.solve(rank_tolerance);
                (sol.c_particular, sol.free_basis, Some(red.v_pinv), Some(red.pcoker_v), Some(l))
            }
            None => (DVector::zeros(r), LinearMap::identity(r, r), None, None, None),
        };
        Ok(Self {
            green,
            nl,
            h,
            boundary: l,
            family,
            c_base,
            params,
            v_pinv,
            pcoker_v,
            rank_tolerance,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.params.ncols()
    }

    pub fn family(&self) -> &BoundedSolutionFamily {
        &self.family
    }

    pub fn reduced_c(&self, t: &StateVector) -> StateVector {
        &self.c_base + &self.params * t
    }

    pub fn full_c(&self, t: &StateVector) -> StateVector {
        &self.family.embedding * self.reduced_c(t)
    }

    /// `x^0(c(t))` on the extended range.
    pub fn generating_solution(&self, t: &StateVector) -> Sequence {
        self.family.solution_reduced(&self.reduced_c(t))
    }

    fn z_of(&self, x: &Sequence, eps: f64) -> Sequence {
        let values = par::map_slice(self.green.execution(), x.values(), |v| v.clone());
        let start = x.start();
        let z = par::map_range(self.green.execution(), start, x.end(), |n| {
            self.nl.eval(&values[(n - start) as usize], n, eps)
        });
        Sequence::new(start, z)
    }

    fn boundary_of_green(&self, z: &Sequence) -> Result<Option<(StateVector, Sequence)>> {
        match self.boundary {
            Some(l) => {
                let gz = self.green.apply_all(z);
                let lg = l.apply_sequence(&gz, self.green.window())?;
                Ok(Some((lg, gz)))
            }
            None => Ok(None),
        }
    }

    /// `M(z) = [sum_k H(k+1) z_k ; P_{V_B1} l(G[z])]`.
    fn functional(&self, z: &Sequence) -> Result<StateVector> {
        let first = self.green.raw_residual(z);
        match (self.boundary_of_green(z)?, &self.pcoker_v) {
            (Some((lg, _)), Some(pc)) => {
                let second = pc * lg;
                let mut out = DVector::zeros(first.len() + second.len());
                out.rows_mut(0, first.len()).copy_from(&first);
                out.rows_mut(first.len(), second.len()).copy_from(&second);
                Ok(out)
            }
            _ => Ok(first),
        }
    }

    fn check_domain(&self, x: &Sequence, reference: &Sequence) -> Result<()> {
        for ((n, a), b) in x.iter().zip(reference.values()) {
            let distance = (a - b).norm();
            if distance > self.nl.domain_radius {
                return Err(Error::OutsideDomain {
                    n,
                    distance,
                    radius: self.nl.domain_radius,
                });
            }
        }
        Ok(())
    }

    /// `F(c(t))`, optionally checking the domain around `reference`.
    pub fn generating_f(&self, t: &StateVector, reference: Option<&Sequence>) -> Result<StateVector> {
        let x = self.generating_solution(t);
        if let Some(r) = reference {
            self.check_domain(&x, r)?;
        }
        self.functional(&self.z_of(&x, 0.0))
    }

    fn a1_along(&self, x: &Sequence) -> Vec<LinearMap> {
        let start = x.start();
        par::map_range(self.green.execution(), start, x.end(), |n| {
            self.nl.a1(&x.values()[(n - start) as usize], n)
        })
    }

    /// `B0` at `c(t)`, one column per parameter direction.
    pub fn b0(&self, t: &StateVector, variant: B0Variant) -> Result<LinearMap> {
        let x = self.generating_solution(t);
        let a1 = self.a1_along(&x);
        let s = self.param_dim();
        let start = x.start();
        let mut columns = Vec::with_capacity(s);
        for j in 0..s {
            let dir = self.params.column(j).into_owned();
            let w = Sequence::new(
                start,
                self.family.reduced_basis.iter().map(|b| b * &dir).collect(),
            );
            let a1w = w.map(|n, v| &a1[(n - start) as usize] * v);
            let col = match variant {
                B0Variant::Derivative => self.functional(&a1w)?,
                B0Variant::Displayed => {
                    let first = self.green.raw_residual(&w);
                    match (self.boundary, &self.pcoker_v) {
                        (Some(l), Some(pc)) => {
                            let second = pc * l.apply_sequence(&a1w, self.green.window())?;
                            let mut out = DVector::zeros(first.len() + second.len());
                            out.rows_mut(0, first.len()).copy_from(&first);
                            out.rows_mut(first.len(), second.len()).copy_from(&second);
                            out
                        }
                        _ => first,
                    }
                }
            };
            columns.push(col);
        }
        let rows = self.green.dim() + self.pcoker_v.as_ref().map_or(0, |p| p.nrows());
        Ok(LinearMap::from_fn(rows, s, |i, j| columns[j][i]))
    }

    /// Central-difference Jacobian of `F` with step `sqrt(eps_mach) (1 + ||t||)`.
    pub fn fd_jacobian(&self, t: &StateVector) -> Result<LinearMap> {
        let step = f64::EPSILON.sqrt() * (1.0 + t.norm());
        let s = self.param_dim();
        let mut cols = Vec::with_capacity(s);
        let mut tp = t.clone();
        for j in 0..s {
            tp[j] = t[j] + step;
            let plus = self.generating_f(&tp, None)?;
            tp[j] = t[j] - step;
            let minus = self.generating_f(&tp, None)?;
            tp[j] = t[j];
            cols.push((plus - minus) / (2.0 * step));
        }
        let rows = cols.first().map_or(self.green.dim(), |c| c.len());
        Ok(LinearMap::from_fn(rows, s, |i, j| cols[j][i]))
    }

    fn finish_root(&self, t: StateVector, history: Vec<f64>, iterations: usize) -> Result<GeneratingRoot> {
        let b0 = self.b0(&t, B0Variant::Derivative)?;
        let pinv = pseudo_inverse(&b0, self.rank_tolerance)?;
        let s = self.param_dim();
        let pn_b0 = LinearMap::identity(s, s) - &pinv.pinv * &b0;
        let c_reduced = self.reduced_c(&t);
        Ok(GeneratingRoot {
            c_star: &self.family.embedding * &c_reduced,
            c_reduced,
            f_residual: *history.last().unwrap_or(&0.0),
            simple: s > 0 && pinv.rank == s,
            b0,
            b0_pinv: pinv.pinv,
            pn_b0,
            t_star: t,
            residual_history: history,
            iterations,
        })
    }

    /// Gauss-Newton `t <- t - B0(t)^+ F(t)` from `t0`.
    pub fn solve_generating(&self, t0: &StateVector, max_iter: usize, tol: f64) -> Result<GeneratingRoot> {
        if t0.len() != self.param_dim() {
            return Err(Error::ShapeMismatch(format!(
                "seed has length {}, expected {}",
                t0.len(),
                self.param_dim()
            )));
        }
        let reference = self.generating_solution(t0);
        let mut t = t0.clone();
        let mut history = Vec::new();
        for it in 0..=max_iter {
            let f = self.generating_f(&t, Some(&reference))?;
            let res = f.norm();
            history.push(res);
            log::debug!("generating Newton step {it}: |F| = {res:e}");
            if res <= tol {
                return self.finish_root(t, history, it);
            }
            if it == max_iter {
                break;
            }
            let j = self.b0(&t, B0Variant::Derivative)?;
            let step = pseudo_inverse(&j, self.rank_tolerance)?.pinv * f;
            if step.norm() == 0.0 {
                break;
            }
            t -= step;
        }
        let last = *history.last().unwrap_or(&f64::NAN);
        let ratio = if history.len() >= 2 {
            last / history[history.len() - 2]
        } else {
            f64::NAN
        };
        Err(Error::NoConvergence {
            iterations: history.len().saturating_sub(1),
            residual: last,
            ratio,
        })
    }

    /// Whether `P_{coker B0} [P_{B_D} Q ; P_{V_B1}]` vanishes.
    pub fn check_sufficient_condition(&self, root: &GeneratingRoot, tol: f64) -> SufficientCondition {
        let red = self.green.reduction();
        let pbq = &red.pb * &self.green.data().q;
        let d = pbq.nrows();
        let extra = self.pcoker_v.as_ref().map_or(0, |p| p.nrows());
        let mut block = LinearMap::zeros(d + extra, d + extra);
        block.view_mut((0, 0), (d, d)).copy_from(&pbq);
        if let Some(pc) = &self.pcoker_v {
            block.view_mut((d, d), (extra, extra)).copy_from(pc);
        }
        let rows = root.b0.nrows();
        let coker = LinearMap::identity(rows, rows) - &root.b0 * &root.b0_pinv;
        let defect = spectral_norm(&(coker * block));
        SufficientCondition {
            holds: defect <= tol,
            defect,
        }
    }

    /// `max(||(I - S)(I - S)^-1 - I||, ||(I - S)^-1 (I - S) - I||)` at index `n`,
    /// with `L1` restricted to the contribution of `ybar_n`.
    pub fn block_inverse_defect(&self, root: &GeneratingRoot, n: i64) -> Result<f64> {
        let d = self.green.dim();
        let s = self.param_dim();
        let x = self.generating_solution(&root.t_star);
        let a1 = self.nl.a1(x.at(n)?, n);
        let (h_op, _) = self.green.h_operator(n)?;
        let mut stacked = LinearMap::zeros(root.b0.nrows(), d);
        stacked.view_mut((0, 0), (d, d)).copy_from(&(h_op * a1));
        let l1 = -&root.b0_pinv * stacked;
        let w = self.family.reduced_basis_at(n)? * &self.params;

        let size = 2 * d + s;
        let mut i_minus_s = LinearMap::identity(size, size);
        i_minus_s.view_mut((0, d), (d, s)).copy_from(&(-&w));
        i_minus_s.view_mut((0, d + s), (d, d)).copy_from(&(-LinearMap::identity(d, d)));
        i_minus_s.view_mut((d, d + s), (s, d)).copy_from(&(-&l1));

        let mut inv = LinearMap::identity(size, size);
        inv.view_mut((0, d), (d, s)).copy_from(&w);
        inv.view_mut((0, d + s), (d, d)).copy_from(&(&w * &l1 + LinearMap::identity(d, d)));
        inv.view_mut((d, d + s), (s, d)).copy_from(&l1);

        let eye = LinearMap::identity(size, size);
        let right = spectral_norm(&(&i_minus_s * &inv - &eye));
        let left = spectral_norm(&(&inv * &i_minus_s - &eye));
        Ok(right.max(left))
    }

    fn run_iteration(&self, root: &GeneratingRoot, eps: f64, opts: &IterationOptions) -> Result<(IterationTrace, Sequence)> {
        let x0 = self.generating_solution(&root.t_star);
        let start = x0.start();
        let z0 = self.z_of(&x0, 0.0);
        let a1 = self.a1_along(&x0);
        let w: Vec<LinearMap> = self.family.reduced_basis.iter().map(|b| b * &self.params).collect();
        let s = self.param_dim();
        let rho = match &opts.c_rho {
            Some(c) if c.len() != s => {
                return Err(Error::ShapeMismatch(format!("c_rho has length {}, expected {s}", c.len())));
            }
            Some(c) => {
                let scaled = if opts.scale_c_rho { c * eps } else { c.clone() };
                &root.pn_b0 * scaled
            }
            None => DVector::zeros(s),
        };

        let mut y = Sequence::zeros(start, x0.end(), self.green.dim());
        let mut iterates: Vec<IterateRecord> = Vec::new();
        let mut ratio: f64 = 0.0;
        for it in 0..opts.max_iter {
            let x = x0.axpy(1.0, &y);
            self.check_domain(&x, &x0)?;
            let z = self.z_of(&x, eps);
            let gz = self.green.apply_all(&z);
            let mut ybar = gz.clone();
            if let (Some(l), Some(vp)) = (self.boundary, &self.v_pinv) {
                let cv = vp * -l.apply_sequence(&gz, self.green.window())?;
                ybar = ybar.axpy(1.0, &self.family.solution_reduced(&cv).axpy(-1.0, &self.family.particular));
            }
            let ybar = ybar.scale(eps);
            let inner = Sequence::new(
                start,
                (0..x0.len())
                    .map(|i| {
                        &a1[i] * &ybar.values()[i] + &z.values()[i] - &z0.values()[i] - &a1[i] * &y.values()[i]
                    })
                    .collect(),
            );
            let t = -&root.b0_pinv * self.functional(&inner)? + &rho;
            let y_new = Sequence::new(
                start,
                w.iter().zip(ybar.values()).map(|(wn, yb)| wn * &t + yb).collect(),
            );
            let correction = y_new.sup_distance(&y);
            if let Some(prev) = iterates.last() {
                if prev.correction_norm > 0.0 {
                    let r = correction / prev.correction_norm;
                    if it >= 2 {
                        ratio = ratio.max(r);
                    }
                }
            }
            log::debug!("continuation eps = {eps:e} step {it}: correction {correction:e}");
            y = y_new;
            iterates.push(IterateRecord {
                y: y.clone(),
                t,
                correction_norm: correction,
            });
            if correction < opts.tol {
                let x = x0.axpy(1.0, &y);
                return Ok((
                    IterationTrace {
                        iterates,
                        contraction_ratio: ratio,
                        converged: true,
                        eps_star: eps,
                    },
                    x,
                ));
            }
            if it >= 3 && ratio >= 1.0 {
                break;
            }
        }
        let residual = iterates.last().map_or(f64::NAN, |r| r.correction_norm);
        Err(Error::NoConvergence {
            iterations: iterates.len(),
            residual,
            ratio,
        })
    }

    /// Continuation from `x^0(c*)`; halves `eps` when the iteration fails to contract.
    pub fn iterate_solution(&self, root: &GeneratingRoot, opts: &IterationOptions) -> Result<Continuation> {
        let mut eps = opts.eps;
        let mut last_err = None;
        for halvings in 0..=opts.max_halvings {
            match self.run_iteration(root, eps, opts) {
                Ok((trace, x)) => return Ok(Continuation { trace, x, halvings }),
                Err(e @ Error::NoConvergence { .. }) => {
                    log::info!("no contraction at eps = {eps:e}, halving");
                    last_err = Some(e);
                    eps *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// `max_n ||x_{n+1} - A_n x_n - eps Z(x_n, n, eps) - h_n||` over the window.
    pub fn recursion_defect(&self, x: &Sequence, eps: f64) -> Result<f64> {
        let w = self.green.window();
        let fam = self.green.family();
        let mut worst: f64 = 0.0;
        for n in w.n_min..w.n_max {
            let xn = x.at(n)?;
            let r = x.at(n + 1)? - fam.coefficient(n) * xn - self.nl.eval(xn, n, eps) * eps - self.h.value(n);
            worst = worst.max(r.norm());
        }
        Ok(worst)
    }
}
