use dichotomy::bvp::reduce_bvp;
use dichotomy::dynamics::{verify_dichotomy, DichotomyData, Window};
use dichotomy::green::{Forcing, GreenOperator, Inhomogeneity, TailRule};
use dichotomy::linalg::{rank, weighted_pseudo_inverse};
use dichotomy::nonlinear::{GeneratingProblem, IterationOptions};
use dichotomy::problems::{example1, example2, example3};
use dichotomy::{Execution, Sequence, StateVector};
use log::{info, warn};
use nalgebra::DVector;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::config::{CommandParams, Problem, Tolerances};
use crate::error::{CliError, CliResult};
use crate::output::{rows, Rendered, Row};

#[derive(Serialize)]
pub struct WindowInfo {
    n_min: i64,
    n_max: i64,
    tail_len: i64,
}

impl From<&Window> for WindowInfo {
    fn from(w: &Window) -> Self {
        Self {
            n_min: w.n_min,
            n_max: w.n_max,
            tail_len: w.tail_len,
        }
    }
}

#[derive(Serialize)]
pub struct IndexInfo {
    dim_kernel_basis: usize,
    dim_cokernel_basis: usize,
    index: i64,
}

#[derive(Serialize)]
pub struct ProjectorRanks {
    p: usize,
    q: usize,
    d: usize,
}

fn index_info(g: &GreenOperator) -> IndexInfo {
    let info = g.reduction().index_info;
    IndexInfo {
        dim_kernel_basis: info.dim_kernel_basis,
        dim_cokernel_basis: info.dim_cokernel_basis,
        index: info.index(),
    }
}

fn projector_ranks(data: &DichotomyData, g: &GreenOperator, tol: f64) -> ProjectorRanks {
    ProjectorRanks {
        p: rank(&data.p, tol),
        q: rank(&data.q, tol),
        d: g.reduction().rank,
    }
}

fn vec_of(v: &StateVector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Everything a command needs besides the problem itself.
pub struct Context {
    pub problem: Problem,
    pub tol: Tolerances,
    pub params: CommandParams,
}

impl Context {
    fn exec(&self) -> Execution {
        if self.params.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    fn green(&self) -> CliResult<GreenOperator<'_>> {
        let s = &self.problem.spec;
        Ok(GreenOperator::new(&s.family, &s.dichotomy, s.window, self.tol.rank, self.exec())?)
    }

    fn linear_rows(&self, x: &Sequence) -> Vec<Row> {
        let s = &self.problem.spec;
        rows(x, &s.window, |n, xn, next| next - s.family.coefficient(n) * xn - s.h.value(n))
    }
}

#[derive(Serialize)]
struct Fitted {
    k: f64,
    lambda: f64,
}

#[derive(Serialize)]
struct FittedPair {
    positive: Fitted,
    negative: Fitted,
}

#[derive(Serialize)]
struct Declared {
    k1: f64,
    lambda1: f64,
    k2: f64,
    lambda2: f64,
}

#[derive(Serialize)]
struct DichotomyOut {
    command: &'static str,
    source: &'static str,
    dim: usize,
    window: WindowInfo,
    holds: bool,
    worst_margin: f64,
    pairs_checked: usize,
    declared: Declared,
    fitted: FittedPair,
    projector_ranks: ProjectorRanks,
    index_info: IndexInfo,
}

pub fn check_dichotomy(ctx: &Context) -> CliResult<Rendered> {
    let s = &ctx.problem.spec;
    let data = &s.dichotomy;
    let report = verify_dichotomy(&s.family, data, &s.window, ctx.tol.dichotomy, ctx.exec())?;
    if !report.holds {
        warn!("dichotomy estimates fail with margin {:e}", report.worst_margin);
    }
    let g = ctx.green()?;
    let out = DichotomyOut {
        command: "check-dichotomy",
        source: ctx.problem.source,
        dim: s.dim(),
        window: (&s.window).into(),
        holds: report.holds,
        worst_margin: report.worst_margin,
        pairs_checked: report.pairs_checked,
        declared: Declared {
            k1: data.k1,
            lambda1: data.lambda1,
            k2: data.k2,
            lambda2: data.lambda2,
        },
        fitted: FittedPair {
            positive: Fitted {
                k: report.positive.k,
                lambda: report.positive.lambda,
            },
            negative: Fitted {
                k: report.negative.k,
                lambda: report.negative.lambda,
            },
        },
        projector_ranks: projector_ranks(data, &g, ctx.tol.rank),
        index_info: index_info(&g),
    };
    Ok(Rendered::summary(&out))
}

#[derive(Serialize)]
struct ResidualOut {
    command: &'static str,
    source: &'static str,
    dim: usize,
    window: WindowInfo,
    residual: Vec<f64>,
    residual_norm: f64,
    tail_bound: f64,
    solvable: bool,
    verdict: &'static str,
    projector_ranks: ProjectorRanks,
    index_info: IndexInfo,
}

fn verdict(solvable: bool) -> &'static str {
    if solvable {
        "solvable"
    } else {
        "not solvable"
    }
}

pub fn residual(ctx: &Context) -> CliResult<Rendered> {
    let s = &ctx.problem.spec;
    let g = ctx.green()?;
    let rep = g.solvability_residual(&s.h, ctx.tol.solve)?;
    let out = ResidualOut {
        command: "residual",
        source: ctx.problem.source,
        dim: s.dim(),
        window: (&s.window).into(),
        residual: vec_of(&rep.residual),
        residual_norm: rep.residual.norm(),
        tail_bound: rep.tail_bound,
        solvable: rep.solvable,
        verdict: verdict(rep.solvable),
        projector_ranks: projector_ranks(&s.dichotomy, &g, ctx.tol.rank),
        index_info: index_info(&g),
    };
    Ok(Rendered::summary(&out))
}

#[derive(Serialize)]
struct Solvability {
    residual_norm: f64,
    tail_bound: f64,
    solvable: bool,
}

#[derive(Serialize)]
struct LinearOut {
    command: &'static str,
    source: &'static str,
    dim: usize,
    window: WindowInfo,
    free_dim: usize,
    c: Vec<f64>,
    solvability: Solvability,
    max_residual: f64,
    projector_ranks: ProjectorRanks,
    index_info: IndexInfo,
    rows: Vec<Row>,
}

fn param(v: &Option<Vec<f64>>, len: usize, ptr: &str) -> CliResult<StateVector> {
    match v {
        None => Ok(DVector::zeros(len)),
        Some(v) if v.len() == len && v.iter().all(|x| x.is_finite()) => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(CliError::config(ptr, format!("expected {len} finite entries, found {}", v.len()))),
    }
}

fn max_residual(rows: &[Row]) -> f64 {
    rows.iter().map(|r| r.residual).filter(|r| r.is_finite()).fold(0.0, f64::max)
}

pub fn solve_linear(ctx: &Context) -> CliResult<Rendered> {
    let s = &ctx.problem.spec;
    let d = s.dim();
    let g = ctx.green()?;
    let rep = g.solvability_residual(&s.h, ctx.tol.solve)?;
    if !rep.solvable {
        warn!("h violates the solvability condition; the table jumps at n = 0");
    }
    let c = param(&ctx.params.c, d, "/command/c")?;
    let fam = g.family_for(&s.h);
    let x = fam.solution(&c);
    let table = ctx.linear_rows(&x);
    let out = LinearOut {
        command: "solve-linear",
        source: ctx.problem.source,
        dim: d,
        window: (&s.window).into(),
        free_dim: fam.free_dim,
        c: vec_of(&c),
        solvability: Solvability {
            residual_norm: rep.residual.norm(),
            tail_bound: rep.tail_bound,
            solvable: rep.solvable,
        },
        max_residual: max_residual(&table),
        projector_ranks: projector_ranks(&s.dichotomy, &g, ctx.tol.rank),
        index_info: index_info(&g),
        rows: table,
    };
    Ok(Rendered::table(&out, &out.rows))
}

#[derive(Serialize)]
struct BvpOut {
    command: &'static str,
    source: &'static str,
    dim: usize,
    window: WindowInfo,
    strong: bool,
    rank: usize,
    free_dim: usize,
    solvable: bool,
    defect: f64,
    c: Vec<f64>,
    boundary_residual: f64,
    max_residual: f64,
    projector_ranks: ProjectorRanks,
    index_info: IndexInfo,
    rows: Vec<Row>,
}

pub fn solve_bvp(ctx: &Context) -> CliResult<Rendered> {
    let s = &ctx.problem.spec;
    let l = s
        .boundary
        .as_ref()
        .ok_or_else(|| CliError::config("/problem/boundary", "solve-bvp needs a boundary operator"))?;
    let alpha = s
        .alpha
        .as_ref()
        .ok_or_else(|| CliError::config("/problem/alpha", "solve-bvp needs alpha"))?;
    let g = ctx.green()?;
    let fam = g.family_for(&s.h);
    let red = reduce_bvp(&g, &fam, l, alpha, ctx.tol.rank)?;
    let set = match &ctx.problem.weights {
        Some(w) => red.strong_solve(w, ctx.tol.solve)?,
        None => red.solve(ctx.tol.solve),
    };
    if !set.solvable {
        warn!("boundary condition is not solvable (defect {:e}); reporting the pseudo-solution", set.defect);
    }
    let cbar = param(&ctx.params.cbar, set.free_basis.ncols(), "/command/cbar")?;
    let c = set.member(&(&set.free_basis * cbar));
    let x = fam.solution_reduced(&c);
    let boundary_residual = (l.apply_sequence(&x, &s.window)? - alpha).norm();
    let table = ctx.linear_rows(&x);
    let out = BvpOut {
        command: "solve-bvp",
        source: ctx.problem.source,
        dim: s.dim(),
        window: (&s.window).into(),
        strong: ctx.problem.weights.is_some(),
        rank: red.rank,
        free_dim: set.free_basis.ncols(),
        solvable: set.solvable,
        defect: set.defect,
        c: vec_of(&c),
        boundary_residual,
        max_residual: max_residual(&table),
        projector_ranks: projector_ranks(&s.dichotomy, &g, ctx.tol.rank),
        index_info: index_info(&g),
        rows: table,
    };
    Ok(Rendered::table(&out, &out.rows))
}

#[derive(Serialize)]
struct RootOut {
    t0: Vec<f64>,
    t_star: Vec<f64>,
    c_star: Vec<f64>,
    f_residual: f64,
    simple: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct TraceOut {
    iterations: usize,
    correction_norms: Vec<f64>,
    contraction_ratio: f64,
    converged: bool,
    eps_star: f64,
    halvings: usize,
}

#[derive(Serialize)]
struct NonlinearOut {
    command: &'static str,
    source: &'static str,
    dim: usize,
    window: WindowInfo,
    eps_requested: f64,
    eps: f64,
    roots: Vec<RootOut>,
    selected_root: usize,
    trace: TraceOut,
    recursion_defect: f64,
    projector_ranks: ProjectorRanks,
    index_info: IndexInfo,
    rows: Vec<Row>,
}

pub fn solve_nonlinear(ctx: &Context) -> CliResult<Rendered> {
    let s = &ctx.problem.spec;
    let p = &ctx.params;
    let nl = s
        .nonlinearity
        .as_ref()
        .ok_or_else(|| CliError::config("/problem/nonlinearity", "solve-nonlinear needs a nonlinearity"))?;
    if !(p.eps.is_finite() && p.eps > 0.0) {
        return Err(CliError::config("/command/eps", "must be positive and finite"));
    }
    let g = ctx.green()?;
    let bvp = match (&s.boundary, &s.alpha) {
        (Some(l), Some(a)) => Some((l, a)),
        _ => None,
    };
    let gp = GeneratingProblem::new(&g, &s.h, bvp, nl, ctx.tol.rank)?;
    let r = gp.param_dim();
    let guesses = match &p.t0 {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, t)| param(&Some(t.clone()), r, &format!("/command/t0/{i}")))
            .collect::<CliResult<Vec<_>>>()?,
        None => vec![DVector::from_element(r, 1.0)],
    };
    if guesses.is_empty() {
        return Err(CliError::config("/command/t0", "at least one initial guess is required"));
    }
    if p.root >= guesses.len() {
        return Err(CliError::config("/command/root", format!("must be below {}", guesses.len())));
    }
    let mut roots = Vec::with_capacity(guesses.len());
    for t0 in &guesses {
        let root = gp.solve_generating(t0, p.max_iter, ctx.tol.newton)?;
        info!("generating root t* = {:?}, simple = {}", root.t_star.as_slice(), root.simple);
        roots.push(root);
    }
    let root = &roots[p.root];
    let c_rho = match &p.c_rho {
        Some(v) => Some(param(&Some(v.clone()), r, "/command/c_rho")?),
        None => None,
    };
    let opts = IterationOptions {
        eps: p.eps,
        c_rho,
        scale_c_rho: p.scale_c_rho,
        max_iter: p.max_iter,
        tol: ctx.tol.newton,
        max_halvings: p.max_halvings,
    };
    let cont = gp.iterate_solution(root, &opts)?;
    let eps = cont.trace.eps_star;
    if cont.halvings > 0 {
        warn!("eps reduced from {:e} to {:e}", p.eps, eps);
    }
    let table = rows(&cont.x, &s.window, |n, xn, next| {
        next - s.family.coefficient(n) * xn - nl.eval(xn, n, eps) * eps - s.h.value(n)
    });
    let out = NonlinearOut {
        command: "solve-nonlinear",
        source: ctx.problem.source,
        dim: s.dim(),
        window: (&s.window).into(),
        eps_requested: p.eps,
        eps,
        roots: guesses
            .iter()
            .zip(&roots)
            .map(|(t0, r)| RootOut {
                t0: vec_of(t0),
                t_star: vec_of(&r.t_star),
                c_star: vec_of(&r.c_star),
                f_residual: r.f_residual,
                simple: r.simple,
                iterations: r.iterations,
            })
            .collect(),
        selected_root: p.root,
        trace: TraceOut {
            iterations: cont.trace.iterates.len(),
            correction_norms: cont.trace.iterates.iter().map(|it| it.correction_norm).collect(),
            contraction_ratio: cont.trace.contraction_ratio,
            converged: cont.trace.converged,
            eps_star: cont.trace.eps_star,
            halvings: cont.halvings,
        },
        recursion_defect: gp.recursion_defect(&cont.x, eps)?,
        projector_ranks: projector_ranks(&s.dichotomy, &g, ctx.tol.rank),
        index_info: index_info(&g),
        rows: table,
    };
    Ok(Rendered::table(&out, &out.rows))
}

/// Parameters of the `example` command.
#[derive(Debug, Clone)]
pub struct ExampleArgs {
    pub which: u8,
    pub d: Option<usize>,
    pub m: i64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub k: usize,
    pub q: i64,
    pub p: i64,
    pub cbar: f64,
    pub h: Option<Inhomogeneity>,
    pub alpha: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ExampleOut {
    command: &'static str,
    example: u8,
    params: BTreeMap<&'static str, f64>,
    window: WindowInfo,
    oracle_max_error: f64,
    threshold: f64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pinv_max_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solvability: Option<Solvability>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<&'static str>,
    max_residual: f64,
    rows: Vec<Row>,
}

/// The rendered output and, if the oracle check failed, the error to report.
pub struct ExampleRun {
    pub rendered: Rendered,
    pub failure: Option<CliError>,
}

fn oracle_gap(x: &Sequence, window: &Window, oracle: impl Fn(i64) -> StateVector) -> CliResult<f64> {
    let mut worst: f64 = 0.0;
    for n in window.n_min..=window.n_max {
        worst = worst.max((x.at(n)? - oracle(n)).amax());
    }
    Ok(worst)
}

pub fn example(args: &ExampleArgs, tol: &Tolerances, exec: Execution) -> CliResult<ExampleRun> {
    let (spec, x, gap, threshold, extra, pinv_gap) = match args.which {
        1 => {
            let d = args.d.unwrap_or(10);
            if d < 6 || !d.is_multiple_of(2) || args.m < 1 {
                return Err(CliError::config("/m", "example 1 needs an even d >= 6 and m >= 1"));
            }
            let ex = example1(d, args.m, args.alpha1, args.alpha2);
            let s = &ex.spec;
            let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, tol.rank, exec)?;
            let fam = g.family_for(&s.h);
            let l = s.boundary.as_ref().expect("example 1 has a boundary operator");
            let red = reduce_bvp(&g, &fam, l, s.alpha.as_ref().expect("example 1 has alpha"), tol.rank)?;
            let x = fam.solution_reduced(&red.solve(tol.solve).c_particular);
            let gap = oracle_gap(&x, &s.window, |n| ex.oracle(n))?;
            let mut params = BTreeMap::new();
            params.insert("d", d as f64);
            params.insert("m", args.m as f64);
            params.insert("alpha1", args.alpha1);
            params.insert("alpha2", args.alpha2);
            (ex.spec.clone(), x, gap, 1e-12, (params, None, None), None)
        }
        2 => {
            let d = args.d.unwrap_or(7);
            if args.k == 0 || args.k >= d {
                return Err(CliError::config("/k", "example 2 needs 1 <= k < d"));
            }
            let h = match &args.h {
                Some(h) if h.dim() == d => h.clone(),
                Some(_) => return Err(CliError::config("/problem/h", format!("expected vectors of length {d}"))),
                None => {
                    let mut table = BTreeMap::new();
                    table.insert(0, DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 0.0 }));
                    Inhomogeneity::from_table(d, table, TailRule::Zero)?
                }
            };
            let ex = example2(d, args.k, h);
            let s = &ex.spec;
            let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, tol.rank, exec)?;
            let rep = g.solvability_residual(&s.h, tol.solve)?;
            let x = g.apply_all(&s.h);
            let gap = oracle_gap(&x, &s.window, |n| ex.green_oracle(n))?;
            let mut params = BTreeMap::new();
            params.insert("d", d as f64);
            params.insert("k", args.k as f64);
            let solv = Solvability {
                residual_norm: rep.residual.norm(),
                tail_bound: rep.tail_bound,
                solvable: rep.solvable,
            };
            let v = verdict(rep.solvable);
            (ex.spec.clone(), x, gap, 1e-10, (params, Some(solv), Some(v)), None)
        }
        3 => {
            let d = args.d.unwrap_or(12);
            let alpha = match &args.alpha {
                Some(a) => param(&Some(a.clone()), d, "/problem/alpha")?,
                None => DVector::from_fn(d, |i, _| if i > args.k { 1.0 } else { 0.0 }),
            };
            let ex = example3(d, args.k, args.q, args.p, alpha).map_err(|e| CliError::config("/k", e.to_string()))?;
            let s = &ex.spec;
            let g = GreenOperator::new(&s.family, &s.dichotomy, s.window, tol.rank, exec)?;
            let fam = g.family_for(&s.h);
            let l = s.boundary.as_ref().expect("example 3 has a boundary operator");
            let red = reduce_bvp(&g, &fam, l, s.alpha.as_ref().expect("example 3 has alpha"), tol.rank)?;
            let strong = weighted_pseudo_inverse(&red.v, &ex.weights, tol.rank)?;
            let pinv_gap = ex
                .strong_pinv_diagonal()
                .iter()
                .enumerate()
                .map(|(j, e)| (strong.pinv[(j, ex.k + j)] - e).abs())
                .fold(0.0, f64::max);
            let set = red.strong_solve(&ex.weights, tol.solve)?;
            let cbar = DVector::from_element(set.free_basis.ncols(), args.cbar);
            let c = set.member(&(&set.free_basis * cbar));
            let x = fam.solution_reduced(&c);
            let free = x.at(0)?[ex.k];
            let gap = oracle_gap(&x, &s.window, |n| ex.oracle(free, n))?.max(pinv_gap);
            let mut params = BTreeMap::new();
            params.insert("d", d as f64);
            params.insert("k", args.k as f64);
            params.insert("q", args.q as f64);
            params.insert("p", args.p as f64);
            params.insert("cbar", args.cbar);
            (ex.spec.clone(), x, gap, 1e-10, (params, None, None), Some(pinv_gap))
        }
        other => return Err(CliError::config("/example", format!("unknown example {other}; expected 1, 2 or 3"))),
    };
    finish_example(args.which, spec, x, gap, threshold, extra, pinv_gap)
}

type ExampleExtra = (BTreeMap<&'static str, f64>, Option<Solvability>, Option<&'static str>);

fn finish_example(
    which: u8,
    spec: dichotomy::problems::ProblemSpec,
    x: Sequence,
    gap: f64,
    threshold: f64,
    (params, solvability, verdict): ExampleExtra,
    pinv_max_error: Option<f64>,
) -> CliResult<ExampleRun> {
    let table = rows(&x, &spec.window, |n, xn, next| next - spec.family.coefficient(n) * xn - spec.h.value(n));
    let passed = gap < threshold;
    let out = ExampleOut {
        command: "example",
        example: which,
        params,
        window: (&spec.window).into(),
        oracle_max_error: gap,
        threshold,
        passed,
        pinv_max_error,
        solvability,
        verdict,
        max_residual: max_residual(&table),
        rows: table,
    };
    let rendered = Rendered::table(&out, &out.rows);
    let failure = (!passed).then_some(CliError::OracleMismatch {
        max_error: gap,
        threshold,
    });
    Ok(ExampleRun { rendered, failure })
}
