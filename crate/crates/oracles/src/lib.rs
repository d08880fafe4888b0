//! Reference computations that share no code with the solver.
//!
//! Everything here is deliberately naive: dense stacked systems over a whole
//! window solved with a one-sided Jacobi SVD, scalar products built by
//! explicit loops and series summed term by term.

use nalgebra::{DMatrix, DVector};

/// One-sided Jacobi SVD: returns `(U, sigma, V)` with `a = U diag(sigma) V^T`,
/// columns of `U` with zero `sigma` left as zero vectors.
pub fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).iter().copied().collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let rotate = |cols: &mut Vec<Vec<f64>>, p: usize, q: usize, c: f64, s: f64| {
        let (left, right) = cols.split_at_mut(q);
        for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
            let (a, b) = (*x, *y);
            *x = c * a - s * b;
            *y = s * a + c * b;
        }
    };
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&g[p], &g[p]);
                let beta = dot(&g[q], &g[q]);
                let gamma = dot(&g[p], &g[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = g.iter().map(|c| dot(c, c).sqrt()).collect();
    let u = DMatrix::from_fn(m, n, |i, j| if sigma[j] > 0.0 { g[j][i] / sigma[j] } else { 0.0 });
    let v = DMatrix::from_fn(n, n, |i, j| v[j][i]);
    (u, sigma, v)
}

/// Minimum-norm least-squares solution of `a x = b`, cutting singular values
/// at `rel_tol` times the largest. Also returns the residual `|a x - b|`,
/// which is large when the system is inconsistent.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64) {
    assert_eq!(a.nrows(), b.len(), "row count");
    let (u, sigma, v) = jacobi_svd(a);
    let cut = rel_tol * sigma.iter().copied().fold(0.0, f64::max);
    let mut x = DVector::zeros(a.ncols());
    for (j, &s) in sigma.iter().enumerate() {
        if s > cut && s > 0.0 {
            x.axpy(u.column(j).dot(b) / s, &v.column(j), 1.0);
        }
    }
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Orthonormal basis (as rows) of the row space of `m`, by Gram-Schmidt on
/// normalized rows; remainders below `rel_tol` count as dependent.
pub fn row_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..m.nrows() {
        let row: DVector<f64> = m.row(i).transpose();
        let scale = row.norm();
        if scale == 0.0 {
            continue;
        }
        let mut v = row / scale;
        for _ in 0..2 {
            for q in &rows {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > rel_tol {
            rows.push(v / norm);
        }
    }
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (i, r) in rows.iter().enumerate() {
        out.set_row(i, &r.transpose());
    }
    out
}

/// Linear window problem: `x_{n+1} = A_n x_n + h_n` for `n_min <= n < n_max`
/// together with `left x_{n_min} = 0` and `right x_{n_max} = 0`.
pub struct WindowSystem<'a> {
    pub dim: usize,
    pub n_min: i64,
    pub n_max: i64,
    pub a: &'a dyn Fn(i64) -> DMatrix<f64>,
    pub h: &'a dyn Fn(i64) -> DVector<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl WindowSystem<'_> {
    fn points(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    /// Replaces both boundary blocks by orthonormal row bases.
    pub fn orthonormal_boundaries(mut self, rel_tol: f64) -> Self {
        self.left = row_basis(&self.left, rel_tol);
        self.right = row_basis(&self.right, rel_tol);
        self
    }

    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.dim;
        let np = self.points();
        let rows = (np - 1) * d + self.left.nrows() + self.right.nrows();
        let mut m = DMatrix::zeros(rows, np * d);
        let mut rhs = DVector::zeros(rows);
        for (j, n) in (self.n_min..self.n_max).enumerate() {
            let an = (self.a)(n);
            let hn = (self.h)(n);
            for r in 0..d {
                m[(j * d + r, (j + 1) * d + r)] = 1.0;
                for c in 0..d {
                    m[(j * d + r, j * d + c)] = -an[(r, c)];
                }
                rhs[j * d + r] = hn[r];
            }
        }
        let base = (np - 1) * d;
        for r in 0..self.left.nrows() {
            for c in 0..d {
                m[(base + r, c)] = self.left[(r, c)];
            }
        }
        let base = base + self.left.nrows();
        for r in 0..self.right.nrows() {
            for c in 0..d {
                m[(base + r, (np - 1) * d + c)] = self.right[(r, c)];
            }
        }
        (m, rhs)
    }

    fn unstack(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let d = self.dim;
        (0..self.points()).map(|j| x.rows(j * d, d).into_owned()).collect()
    }

    /// Minimum-norm solution over the window and the stacked residual.
    pub fn min_norm(&self, rel_tol: f64) -> (Vec<DVector<f64>>, f64) {
        let (m, rhs) = self.stacked();
        let (x, res) = min_norm_solve(&m, &rhs, rel_tol);
        (self.unstack(&x), res)
    }

    /// Newton's method for `x_{n+1} = A_n x_n + h_n + eps z(x_n, n)` with the
    /// same boundary rows, started from `x0`; each step is a minimum-norm
    /// solve of the stacked linearization.
    pub fn newton(
        &self,
        eps: f64,
        z: &dyn Fn(&DVector<f64>, i64) -> DVector<f64>,
        jz: &dyn Fn(&DVector<f64>, i64) -> DMatrix<f64>,
        x0: Vec<DVector<f64>>,
        tol: f64,
        max_iter: usize,
    ) -> Result<Vec<DVector<f64>>, String> {
        let d = self.dim;
        let np = self.points();
        assert_eq!(x0.len(), np, "initial guess length");
        let (base, _) = self.stacked();
        let mut x = DVector::zeros(np * d);
        for (j, v) in x0.iter().enumerate() {
            x.rows_mut(j * d, d).copy_from(v);
        }
        for _ in 0..max_iter {
            let mut jac = base.clone();
            let mut f = &base * &x;
            for (j, n) in (self.n_min..self.n_max).enumerate() {
                let xn = x.rows(j * d, d).into_owned();
                let zn = z(&xn, n);
                let jn = jz(&xn, n);
                let hn = (self.h)(n);
                for r in 0..d {
                    f[j * d + r] -= hn[r] + eps * zn[r];
                    for c in 0..d {
                        jac[(j * d + r, j * d + c)] -= eps * jn[(r, c)];
                    }
                }
            }
            let (step, _) = min_norm_solve(&jac, &(-&f), 1e-13);
            x += &step;
            if step.amax() <= tol * (1.0 + x.amax()) {
                return Ok(self.unstack(&x));
            }
        }
        Err(format!("no convergence in {max_iter} Newton steps"))
    }
}

/// Product `a_{n-1} ... a_0` for `n >= 0` and `(a_{-1} ... a_n)^{-1}` for `n < 0`.
pub fn scalar_evolution(a: &dyn Fn(i64) -> f64, n: i64) -> f64 {
    let mut u = 1.0;
    if n >= 0 {
        for j in 0..n {
            u *= a(j);
        }
    } else {
        for j in n..0 {
            u /= a(j);
        }
    }
    u
}

/// Bounded solution on `[n, inf)` of a scalar recursion growing forward:
/// `x_n = -sum_{l >= n} h_l / (a_n ... a_l)`.
pub fn forward_unstable(a: &dyn Fn(i64) -> f64, h: &dyn Fn(i64) -> f64, n: i64, last: i64) -> f64 {
    let mut sum = 0.0;
    let mut prod = 1.0;
    for l in n..=last {
        prod *= a(l);
        sum -= h(l) / prod;
    }
    sum
}

/// Bounded solution on `(-inf, n]` of a scalar recursion decaying forward:
/// `x_n = sum_{l < n} (a_{n-1} ... a_{l+1}) h_l`.
pub fn backward_stable(a: &dyn Fn(i64) -> f64, h: &dyn Fn(i64) -> f64, n: i64, first: i64) -> f64 {
    let mut sum = 0.0;
    let mut prod = 1.0;
    let mut l = n - 1;
    while l >= first {
        sum += prod * h(l);
        prod *= a(l);
        l -= 1;
    }
    sum
}

/// Solution of a scalar recursion with `x_0 = 0`, run forward for `n > 0`
/// and backward for `n < 0`.
pub fn anchored_at_zero(a: &dyn Fn(i64) -> f64, h: &dyn Fn(i64) -> f64, n: i64) -> f64 {
    let mut x = 0.0;
    if n >= 0 {
        for j in 0..n {
            x = a(j) * x + h(j);
        }
    } else {
        for j in (n..0).rev() {
            x = (x - h(j)) / a(j);
        }
    }
    x
}

fn sign_exp2(sign: f64, n: i64) -> f64 {
    (sign * n.signum() as f64).exp2()
}

/// Example 1 answer: coordinates 1 and 3 follow `2^{m-n}` scaled through
/// `A_0 = I`, everything else vanishes.
pub fn example1_solution(d: usize, m: i64, alpha1: f64, alpha2: f64, n: i64) -> DVector<f64> {
    let a = |j: i64| sign_exp2(-1.0, j);
    let s = scalar_evolution(&a, n) / scalar_evolution(&a, m);
    let mut x = DVector::zeros(d);
    x[0] = s * alpha1;
    x[2] = s * alpha2;
    x
}

/// Green values of Example 2 for a finitely supported forcing given as
/// `(l, h_l)` pairs: the unstable coordinates `0..k` take the forward bounded
/// solution for `n >= 0` and the backward one for `n < 0`, the remaining
/// coordinates the solution anchored at zero.
pub fn example2_green(d: usize, k: usize, h: &[(i64, DVector<f64>)], n: i64) -> DVector<f64> {
    let last = h.iter().map(|(l, _)| *l).max().unwrap_or(0).max(n);
    let first = h.iter().map(|(l, _)| *l).min().unwrap_or(0).min(n);
    DVector::from_fn(d, |i, _| {
        let hi = |l: i64| h.iter().filter(|(m, _)| *m == l).map(|(_, v)| v[i]).sum::<f64>();
        if i < k {
            let a = |j: i64| sign_exp2(1.0, j);
            if n >= 0 {
                forward_unstable(&a, &hi, n, last)
            } else {
                backward_stable(&a, &hi, n, first)
            }
        } else {
            let a = |j: i64| sign_exp2(-1.0, j);
            anchored_at_zero(&a, &hi, n)
        }
    })
}

/// Example 2 solvability functionals `sum_l h_l^p / U(l+1)` for `p < k`.
pub fn example2_solvability(k: usize, h: &[(i64, DVector<f64>)]) -> Vec<f64> {
    let a = |j: i64| sign_exp2(1.0, j);
    (0..k)
        .map(|p| h.iter().map(|(l, v)| v[p] / scalar_evolution(&a, l + 1)).sum())
        .collect()
}

/// Example 3: the reduced coordinate `m = i - k` solves
/// `(1/m)(U(q) - U(p)) xi_i = alpha_i`; coordinate `k` carries the free `c`.
pub fn example3_solution(d: usize, k: usize, q: i64, p: i64, alpha: &DVector<f64>, c: f64, n: i64) -> DVector<f64> {
    let a = |j: i64| sign_exp2(-1.0, j);
    let gap = scalar_evolution(&a, q) - scalar_evolution(&a, p);
    let u = scalar_evolution(&a, n);
    DVector::from_fn(d, |i, _| {
        if i == k {
            u * c
        } else if i > k {
            u * (i - k) as f64 * alpha[i] / gap
        } else {
            0.0
        }
    })
}

/// Entries `m / (U(q) - U(p))` of the weighted inverse in Example 3.
pub fn example3_inverse_entries(count: usize, q: i64, p: i64) -> Vec<f64> {
    let a = |j: i64| sign_exp2(-1.0, j);
    let gap = scalar_evolution(&a, q) - scalar_evolution(&a, p);
    (1..=count).map(|m| m as f64 / gap).collect()
}

/// Quadratic toy: `|c|^2` at the generating roots, from the two series
/// `sum_l w_l 2^{-decay |l|}` and `sum_l w_l 4^{-|l|}` with
/// `w_l = 1 / U_unstable(l + 1)`, summed over `|l| <= terms`.
pub fn toy_root_square(a: f64, decay: f64, terms: i64) -> f64 {
    let unstable = |j: i64| if j >= 0 { 2.0 } else { 0.5 };
    let homoclinic = |j: i64| if j >= 0 { 0.5 } else { 2.0 };
    let mut forcing = 0.0;
    let mut quadratic = 0.0;
    for l in -terms..=terms {
        let w = 1.0 / scalar_evolution(&unstable, l + 1);
        let f = scalar_evolution(&homoclinic, l);
        forcing += w * (-decay * l.abs() as f64).exp2();
        quadratic += w * f * f;
    }
    a * forcing / quadratic
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
