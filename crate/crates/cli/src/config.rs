//! JSON run configuration and its translation into a [`ProblemSpec`].
//!
//! Matrices are row-major nested arrays, sequences are
//! `{"table": {"n": [..]}, "tail": "zero" | "constant"}`, and all state
//! indices inside the config are 0-based.

use std::collections::BTreeMap;

use dichotomy::bvp::BoundaryOperator;
use dichotomy::dynamics::{DichotomyData, OperatorFamily, Window};
use dichotomy::green::{Inhomogeneity, TailRule};
use dichotomy::linalg::{spectral_norm, WeightedSpace, DEFAULT_RANK_TOL};
use dichotomy::nonlinear::Nonlinearity;
use dichotomy::problems::{self, ProblemSpec};
use dichotomy::{LinearMap, StateVector};
use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub command: CommandParams,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub builtin: Option<Builtin>,
    pub family: Option<FamilyConfig>,
    pub projectors: Option<ProjectorConfig>,
    pub h: Option<SequenceConfig>,
    pub boundary: Option<BoundaryConfig>,
    pub alpha: Option<Vec<f64>>,
    pub nonlinearity: Option<NonlinearityConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    Example1(Example1Params),
    Example2(Example2Params),
    Example3(Example3Params),
    QuadraticToy(ToyParams),
    CircleToy(ToyParams),
    Manufactured(ManufacturedParams),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1Params {
    pub d: usize,
    pub m: i64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            d: 10,
            m: 2,
            alpha1: 1.0,
            alpha2: 3.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example2Params {
    pub d: usize,
    pub k: usize,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self { d: 7, k: 3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example3Params {
    pub d: usize,
    pub k: usize,
    pub q: i64,
    pub p: i64,
}

impl Default for Example3Params {
    fn default() -> Self {
        Self { d: 12, k: 3, q: 1, p: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    pub a: f64,
    pub decay: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self { a: 0.5, decay: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManufacturedParams {
    pub d: usize,
    pub seed: u64,
    pub rates: [f64; 2],
    pub overlap: usize,
}

impl Default for ManufacturedParams {
    fn default() -> Self {
        Self {
            d: 4,
            seed: 0,
            rates: [0.5, 0.5],
            overlap: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    Constant(Matrix),
    /// `maps[j]` is `A_{start + j}`; constant continuation beyond both ends.
    Table { start: i64, maps: Vec<Matrix> },
    /// `A_n = negative` for `n < 0`, `zero` at `n = 0`, `positive` for `n > 0`.
    Piecewise {
        negative: Matrix,
        zero: Matrix,
        positive: Matrix,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorConfig {
    pub p: Matrix,
    pub q: Matrix,
    #[serde(default = "one")]
    pub k1: f64,
    #[serde(default = "half")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub k2: f64,
    #[serde(default = "half")]
    pub lambda2: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailConfig {
    #[default]
    Zero,
    Constant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub table: BTreeMap<i64, Vec<f64>>,
    #[serde(default)]
    pub tail: TailConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryTerm {
    pub n: i64,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    TwoPoint { m: i64, a1: Matrix, a2: Matrix },
    MultiPoint { terms: Vec<BoundaryTerm> },
    AtInfinity {
        minus: Matrix,
        plus: Matrix,
        #[serde(default = "limit_tolerance")]
        limit_tolerance: f64,
    },
    Samples { nodes: Vec<i64>, matrix: Matrix },
}

fn limit_tolerance() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Quadratic {
        target: usize,
        sources: Vec<usize>,
        a: f64,
        decay: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub n_min: Option<i64>,
    pub n_max: Option<i64>,
    pub tail: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rank: f64,
    pub solve: f64,
    pub dichotomy: f64,
    pub newton: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK_TOL,
            solve: 1e-10,
            dichotomy: 1e-9,
            newton: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandParams {
    /// Full-space parameter of the bounded family (`solve-linear`).
    pub c: Option<Vec<f64>>,
    /// Free parameter of the boundary-value solution set (`solve-bvp`).
    pub cbar: Option<Vec<f64>>,
    /// Weights for the strong solve (`solve-bvp`).
    pub weights: Option<Vec<f64>>,
    pub eps: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Initial guesses for the generating equation.
    pub t0: Option<Vec<Vec<f64>>>,
    /// Which generating root to continue.
    pub root: usize,
    pub c_rho: Option<Vec<f64>>,
    pub scale_c_rho: bool,
    pub parallel: bool,
    pub out: Option<String>,
    pub format: Option<Format>,
}

impl Default for CommandParams {
    fn default() -> Self {
        Self {
            c: None,
            cbar: None,
            weights: None,
            eps: 1e-3,
            max_iter: 200,
            max_halvings: 20,
            t0: None,
            root: 0,
            c_rho: None,
            scale_c_rho: false,
            parallel: true,
            out: None,
            format: None,
        }
    }
}

/// RFC 6901 pointer built from a serde path.
fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        let token = match seg {
            Segment::Seq { index } => index.to_string(),
            Segment::Map { key } => key.clone(),
            Segment::Enum { variant } => variant.clone(),
            Segment::Unknown => continue,
        };
        out.push('/');
        out.push_str(&token.replace('~', "~0").replace('/', "~1"));
    }
    out
}

pub fn parse(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        CliError::config(pointer, e.into_inner().to_string())
    })
}

pub fn load(path: &str) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    parse(&text)
}

/// A fully built problem together with command-level extras.
pub struct Problem {
    pub spec: ProblemSpec,
    pub source: &'static str,
    pub weights: Option<WeightedSpace>,
}

fn matrix(rows: &Matrix, nrows: Option<usize>, ncols: usize, ptr: &str) -> CliResult<LinearMap> {
    if let Some(r) = nrows {
        if rows.len() != r {
            return Err(CliError::config(ptr, format!("expected {r} rows, found {}", rows.len())));
        }
    }
    if rows.is_empty() {
        return Err(CliError::config(ptr, "matrix has no rows"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CliError::config(
                format!("{ptr}/{i}"),
                format!("expected {ncols} columns, found {}", row.len()),
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(CliError::config(format!("{ptr}/{i}/{j}"), "entry is not finite"));
        }
    }
    Ok(LinearMap::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn square(rows: &Matrix, d: usize, ptr: &str) -> CliResult<LinearMap> {
    matrix(rows, Some(d), d, ptr)
}

fn vector(v: &[f64], d: usize, ptr: &str) -> CliResult<StateVector> {
    if v.len() != d {
        return Err(CliError::config(ptr, format!("expected length {d}, found {}", v.len())));
    }
    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
        return Err(CliError::config(format!("{ptr}/{j}"), "entry is not finite"));
    }
    Ok(DVector::from_column_slice(v))
}

fn at(ptr: &str, e: dichotomy::Error) -> CliError {
    CliError::config(ptr, e.to_string())
}

fn family(cfg: &FamilyConfig) -> CliResult<OperatorFamily> {
    const PTR: &str = "/problem/family";
    match cfg {
        FamilyConfig::Constant(m) => {
            let d = m.len();
            let a = square(m, d, &format!("{PTR}/constant"))?;
            OperatorFamily::constant(a).map_err(|e| at(PTR, e))
        }
        FamilyConfig::Table { start, maps } => {
            let first = maps
                .first()
                .ok_or_else(|| CliError::config(format!("{PTR}/table/maps"), "table is empty"))?;
            let d = first.len();
            let maps = maps
                .iter()
                .enumerate()
                .map(|(j, m)| square(m, d, &format!("{PTR}/table/maps/{j}")))
                .collect::<CliResult<Vec<_>>>()?;
            OperatorFamily::table(*start, maps).map_err(|e| at(PTR, e))
        }
        FamilyConfig::Piecewise {
            negative,
            zero,
            positive,
        } => {
            let d = negative.len();
            let neg = square(negative, d, &format!("{PTR}/piecewise/negative"))?;
            let mid = square(zero, d, &format!("{PTR}/piecewise/zero"))?;
            let pos = square(positive, d, &format!("{PTR}/piecewise/positive"))?;
            let sup = [&neg, &mid, &pos].iter().map(|m| spectral_norm(m)).fold(0.0, f64::max);
            Ok(OperatorFamily::from_fn(d, sup, move |n| match n.signum() {
                -1 => neg.clone(),
                0 => mid.clone(),
                _ => pos.clone(),
            }))
        }
    }
}

fn projectors(cfg: &ProjectorConfig, d: usize) -> CliResult<DichotomyData> {
    const PTR: &str = "/problem/projectors";
    let p = square(&cfg.p, d, &format!("{PTR}/p"))?;
    let q = square(&cfg.q, d, &format!("{PTR}/q"))?;
    DichotomyData::new(p, q, (cfg.k1, cfg.lambda1), (cfg.k2, cfg.lambda2)).map_err(|e| at(PTR, e))
}

pub fn inhomogeneity(cfg: &SequenceConfig, d: usize) -> CliResult<Inhomogeneity> {
    let mut table = BTreeMap::new();
    for (n, v) in &cfg.table {
        table.insert(*n, vector(v, d, &format!("/problem/h/table/{n}"))?);
    }
    let tail = match cfg.tail {
        TailConfig::Zero => TailRule::Zero,
        TailConfig::Constant => TailRule::Constant,
    };
    Inhomogeneity::from_table(d, table, tail).map_err(|e| at("/problem/h", e))
}

fn boundary(cfg: &BoundaryConfig, d: usize) -> CliResult<BoundaryOperator> {
    const PTR: &str = "/problem/boundary";
    let built = match cfg {
        BoundaryConfig::TwoPoint { m, a1, a2 } => {
            let a1 = matrix(a1, None, d, &format!("{PTR}/two_point/a1"))?;
            let a2 = matrix(a2, Some(a1.nrows()), d, &format!("{PTR}/two_point/a2"))?;
            BoundaryOperator::two_point(*m, a1, a2)
        }
        BoundaryConfig::MultiPoint { terms } => {
            let mut out = Vec::with_capacity(terms.len());
            let mut rows = None;
            for (i, t) in terms.iter().enumerate() {
                let m = matrix(&t.matrix, rows, d, &format!("{PTR}/multi_point/terms/{i}/matrix"))?;
                rows = Some(m.nrows());
                out.push((t.n, m));
            }
            BoundaryOperator::multi_point(out)
        }
        BoundaryConfig::AtInfinity {
            minus,
            plus,
            limit_tolerance,
        } => {
            let minus = matrix(minus, None, d, &format!("{PTR}/at_infinity/minus"))?;
            let plus = matrix(plus, Some(minus.nrows()), d, &format!("{PTR}/at_infinity/plus"))?;
            BoundaryOperator::at_infinity(minus, plus, *limit_tolerance)
        }
        BoundaryConfig::Samples { nodes, matrix: m } => {
            let m = matrix(m, None, d * nodes.len(), &format!("{PTR}/samples/matrix"))?;
            BoundaryOperator::samples(nodes.clone(), m, d)
        }
    };
    built.map_err(|e| at(PTR, e))
}

fn nonlinearity(cfg: &NonlinearityConfig, d: usize) -> CliResult<Nonlinearity> {
    match cfg {
        NonlinearityConfig::Quadratic {
            target,
            sources,
            a,
            decay,
        } => {
            const PTR: &str = "/problem/nonlinearity/quadratic";
            if *target >= d {
                return Err(CliError::config(format!("{PTR}/target"), format!("index must be below {d}")));
            }
            if let Some(i) = sources.iter().position(|&s| s >= d) {
                return Err(CliError::config(format!("{PTR}/sources/{i}"), format!("index must be below {d}")));
            }
            Ok(Nonlinearity::quadratic(d, *target, sources.clone(), *a, *decay))
        }
    }
}

fn builtin(b: &Builtin, alpha: Option<&[f64]>) -> CliResult<Problem> {
    const PTR: &str = "/problem/builtin";
    let (spec, source, weights) = match b {
        Builtin::Example1(p) => {
            if p.d < 6 || !p.d.is_multiple_of(2) || p.m < 1 {
                return Err(CliError::config(format!("{PTR}/example1"), "need an even d >= 6 and m >= 1"));
            }
            (problems::example1(p.d, p.m, p.alpha1, p.alpha2).spec, "example1", None)
        }
        Builtin::Example2(p) => {
            if p.k == 0 || p.k >= p.d {
                return Err(CliError::config(format!("{PTR}/example2"), "need 1 <= k < d"));
            }
            (problems::example2(p.d, p.k, Inhomogeneity::zero(p.d)).spec, "example2", None)
        }
        Builtin::Example3(p) => {
            let alpha = match alpha {
                Some(a) => vector(a, p.d, "/problem/alpha")?,
                None => DVector::from_fn(p.d, |i, _| if i > p.k { 1.0 } else { 0.0 }),
            };
            let ex = problems::example3(p.d, p.k, p.q, p.p, alpha).map_err(|e| at(&format!("{PTR}/example3"), e))?;
            (ex.spec, "example3", Some(ex.weights))
        }
        Builtin::QuadraticToy(p) => (problems::quadratic_toy(p.a, p.decay).spec, "quadratic_toy", None),
        Builtin::CircleToy(p) => (problems::circle_toy(p.a, p.decay).spec, "circle_toy", None),
        Builtin::Manufactured(p) => {
            let ok = p.d >= 2
                && p.overlap <= p.d / 2
                && p.rates.iter().all(|r| r.is_finite() && *r > 0.0 && *r < 1.0);
            if !ok {
                return Err(CliError::config(
                    format!("{PTR}/manufactured"),
                    "need d >= 2, overlap <= d / 2 and rates in (0, 1)",
                ));
            }
            let m = problems::random_manufactured(p.d, p.seed, (p.rates[0], p.rates[1]), p.overlap);
            (m.spec, "manufactured", None)
        }
    };
    Ok(Problem { spec, source, weights })
}

impl RunConfig {
    /// Applies command-line overrides.
    pub fn override_with(&mut self, window: Option<(i64, i64)>, tail: Option<i64>, tol: Option<f64>, seed: Option<u64>) {
        if let Some((a, b)) = window {
            self.window.n_min = Some(a);
            self.window.n_max = Some(b);
        }
        if let Some(t) = tail {
            self.window.tail = Some(t);
        }
        if let Some(t) = tol {
            self.tolerances.solve = t;
        }
        if let (Some(s), Some(Builtin::Manufactured(p))) = (seed, self.problem.builtin.as_mut()) {
            p.seed = s;
        }
    }

    pub fn build(&self) -> CliResult<Problem> {
        let tol = &self.tolerances;
        for (name, v) in [
            ("rank", tol.rank),
            ("solve", tol.solve),
            ("dichotomy", tol.dichotomy),
            ("newton", tol.newton),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::config(format!("/tolerances/{name}"), "must be positive and finite"));
            }
        }
        let pc = &self.problem;
        let mut problem = match (&pc.builtin, &pc.family) {
            (Some(b), None) => {
                if pc.projectors.is_some() {
                    return Err(CliError::config("/problem/projectors", "cannot be combined with a builtin problem"));
                }
                builtin(b, pc.alpha.as_deref())?
            }
            (Some(_), Some(_)) => {
                return Err(CliError::config("/problem/family", "cannot be combined with a builtin problem"));
            }
            (None, Some(f)) => {
                let family = family(f)?;
                let d = family.dim();
                let data = projectors(
                    pc.projectors
                        .as_ref()
                        .ok_or_else(|| CliError::config("/problem/projectors", "required for an explicit family"))?,
                    d,
                )?;
                let spec = ProblemSpec {
                    family,
                    dichotomy: data,
                    h: Inhomogeneity::zero(d),
                    boundary: None,
                    alpha: None,
                    nonlinearity: None,
                    window: Window::new(-20, 20, 1).expect("valid window"),
                };
                Problem {
                    spec,
                    source: "explicit",
                    weights: None,
                }
            }
            (None, None) => return Err(CliError::config("/problem", "either builtin or family is required")),
        };
        let d = problem.spec.dim();
        let spec = &mut problem.spec;
        if let Some(h) = &pc.h {
            spec.h = inhomogeneity(h, d)?;
        }
        if let Some(b) = &pc.boundary {
            spec.boundary = Some(boundary(b, d)?);
        }
        if let Some(a) = &pc.alpha {
            let codim = spec.boundary.as_ref().map_or(d, |l| l.codomain_dim());
            spec.alpha = Some(vector(a, codim, "/problem/alpha")?);
        }
        if let Some(nl) = &pc.nonlinearity {
            spec.nonlinearity = Some(nonlinearity(nl, d)?);
        }

        let explicit = problem.source == "explicit";
        let w = &self.window;
        let n_min = w.n_min.unwrap_or(spec.window.n_min);
        let n_max = w.n_max.unwrap_or(spec.window.n_max);
        let tail = match w.tail {
            Some(t) => t,
            None if explicit => {
                let h_sup = spec.h.table().values().map(|v| v.norm()).fold(0.0, f64::max);
                Window::tail_for(&spec.dichotomy, h_sup.max(1.0), tol.solve, 200)
            }
            None => spec.window.tail_len,
        };
        spec.window = Window::new(n_min, n_max, tail).map_err(|e| at("/window", e))?;

        if let Some(ws) = &self.command.weights {
            let space = WeightedSpace::new(ws.clone()).map_err(|e| at("/command/weights", e))?;
            problem.weights = Some(space);
        }
        Ok(problem)
    }
}
