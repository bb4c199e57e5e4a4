//! Conic programs over named scalar variables.
//!
//! Estimators describe their relaxations with [`Symbol`]s in a [`VarSpace`];
//! the space owns the mapping from symbols to solver columns, including an
//! optional per-symbol scale so that badly scaled quantities (squared
//! distances in m², positions in m) reach the solver with unit magnitude.
//! A [`ConicProgram`] collects a linear objective, linear equalities,
//! second-order cones and linear matrix inequalities. [`solve`] lowers the
//! program to standard form and runs the primal-dual interior-point method.

pub mod builders;
mod cones;
mod ipm;
mod presolve;

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builders::{
    build_anchor_penalty, build_epigraph_soc, build_residual_equalities, build_residual_lmi,
    build_schur_block, build_sq_distance_links, LiftedLayout,
};

/// Named scalar unknowns used by the localization relaxations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    /// Entry of the stacked position vector `[t; s]`.
    Mu(usize),
    /// Entry `(a, b)` of the lifted Gram matrix, stored with `a <= b`.
    K(usize, usize),
    /// Relaxed squared distance of link `k` (canonical link order).
    SqDist(usize),
    /// Relaxed squared anchor deviation of anchor `i`.
    AnchorDev(usize),
    /// Epigraph variable of the residual sum of squares.
    Omega,
    /// Residual of link `k`.
    Xi(usize),
    /// Relative path-loss exponent correction.
    Epsilon,
    /// Power-dependent gain of target `j`.
    Gain(usize),
    /// Gain offset of target `j`.
    Offset(usize),
    /// Free-form auxiliary scalar.
    Aux(usize),
}

impl Symbol {
    /// Gram entry with the indices put in canonical order.
    pub fn k(a: usize, b: usize) -> Self {
        Symbol::K(a.min(b), a.max(b))
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Mu(a) => write!(f, "mu[{a}]"),
            Symbol::K(a, b) => write!(f, "K[{a},{b}]"),
            Symbol::SqDist(k) => write!(f, "u[{k}]"),
            Symbol::AnchorDev(i) => write!(f, "lambda[{i}]"),
            Symbol::Omega => write!(f, "omega"),
            Symbol::Xi(k) => write!(f, "xi[{k}]"),
            Symbol::Epsilon => write!(f, "epsilon"),
            Symbol::Gain(j) => write!(f, "g[{j}]"),
            Symbol::Offset(j) => write!(f, "r[{j}]"),
            Symbol::Aux(k) => write!(f, "aux[{k}]"),
        }
    }
}

/// Symbol table of a program.
///
/// Column `c` of the solver holds `symbol_value / scale[c]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VarSpace {
    symbols: Vec<Symbol>,
    scales: Vec<f64>,
    #[serde(skip)]
    index: HashMap<Symbol, usize>,
    /// Dimensions of the lifted matrix blocks declared in this space.
    pub psd_blocks: Vec<usize>,
    pub lifted: Option<LiftedLayout>,
    /// Per-slot origin of the lifted block: node position = `mu + origin`.
    #[serde(default)]
    pub lifted_origin: Vec<f64>,
}

impl VarSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Adds `sym` with unit scale, returning its column. Re-declaring a
    /// symbol returns the existing column.
    pub fn declare(&mut self, sym: Symbol) -> usize {
        self.declare_scaled(sym, 1.0)
    }

    pub fn declare_scaled(&mut self, sym: Symbol, scale: f64) -> usize {
        if let Some(&c) = self.index.get(&sym) {
            return c;
        }
        let c = self.symbols.len();
        self.symbols.push(sym);
        self.scales.push(scale);
        self.index.insert(sym, c);
        c
    }

    /// Declares the position vector and Gram matrix of a lifted block for
    /// `n_targets` targets and `n_anchors` anchors. Positions are scaled by
    /// `length_scale` and Gram entries by its square.
    pub fn declare_lifted(&mut self, n_targets: usize, n_anchors: usize, length_scale: f64) {
        let layout = LiftedLayout {
            n_targets,
            n_anchors,
            length_scale,
        };
        let n = layout.mu_len();
        for a in 0..n {
            self.declare_scaled(Symbol::Mu(a), length_scale);
        }
        for a in 0..n {
            for b in a..n {
                self.declare_scaled(Symbol::K(a, b), length_scale * length_scale);
            }
        }
        self.psd_blocks.push(n + 1);
        self.lifted = Some(layout);
        self.lifted_origin = vec![0.0; n];
    }

    /// Moves the origin of the two `mu` slots starting at `slot`. The lifted
    /// block then holds offsets from `origin`, which is an exact congruence
    /// of the unshifted block, so feasibility and rank are unchanged.
    pub fn set_lifted_origin(&mut self, slot: usize, origin: [f64; 2]) -> Result<()> {
        if slot + 1 >= self.lifted_origin.len() {
            return Err(Error::Construction(format!("lifted slot {slot} out of range")));
        }
        self.lifted_origin[slot..slot + 2].copy_from_slice(&origin);
        Ok(())
    }

    /// Origin of `mu` slot `a`; zero when none was set.
    pub fn origin(&self, a: usize) -> f64 {
        self.lifted_origin.get(a).copied().unwrap_or(0.0)
    }

    pub fn column(&self, sym: Symbol) -> Result<usize> {
        self.index
            .get(&sym)
            .copied()
            .ok_or_else(|| Error::Construction(format!("symbol {sym} was not declared")))
    }

    pub fn symbol(&self, column: usize) -> Symbol {
        self.symbols[column]
    }

    pub fn scale(&self, column: usize) -> f64 {
        self.scales[column]
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    /// `coef * sym` as an expression.
    pub fn term(&self, sym: Symbol, coef: f64) -> Result<LinExpr> {
        let mut e = LinExpr::zero();
        self.add_term(&mut e, sym, coef)?;
        Ok(e)
    }

    /// Adds `coef * sym` to `expr`.
    pub fn add_term(&self, expr: &mut LinExpr, sym: Symbol, coef: f64) -> Result<()> {
        let c = self.column(sym)?;
        expr.terms.push((c, coef * self.scales[c]));
        Ok(())
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(c, &s)| (s, c))
            .collect();
    }
}

/// Affine expression `sum coef * column + constant` over solver columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        self.terms
            .extend(other.terms.iter().map(|&(c, v)| (c, v * s)));
        self.constant += other.constant * s;
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut e = Self::zero();
        e.add_scaled(self, s);
        e
    }

    /// Merges repeated columns and drops exact zeros.
    pub fn compress(&mut self) {
        self.terms.sort_by_key(|&(c, _)| c);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(c, v) in &self.terms {
            match out.last_mut() {
                Some((lc, lv)) if *lc == c => *lv += v,
                _ => out.push((c, v)),
            }
        }
        out.retain(|&(_, v)| v != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, v)| v * x[c]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub label: String,
    /// Constrained to zero.
    pub expr: LinExpr,
}

/// `|| body ||_2 <= head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocConstraint {
    pub label: String,
    pub head: LinExpr,
    pub body: Vec<LinExpr>,
}

/// Symmetric affine matrix `M(x) >= 0` given by its upper-triangular
/// entries; entries not listed are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiConstraint {
    pub label: String,
    pub dim: usize,
    pub entries: Vec<(usize, usize, LinExpr)>,
}

impl LmiConstraint {
    pub fn is_diagonal(&self) -> bool {
        self.entries
            .iter()
            .all(|(i, j, e)| i == j || e.is_zero())
    }
}

/// Linear objective (minimized) with equality, second-order cone and LMI
/// constraints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub space: VarSpace,
    pub objective: LinExpr,
    pub equalities: Vec<Equality>,
    pub socs: Vec<SocConstraint>,
    pub lmis: Vec<LmiConstraint>,
}

impl ConicProgram {
    pub fn new(space: VarSpace) -> Self {
        Self {
            space,
            ..Self::default()
        }
    }

    pub fn add_equality(&mut self, label: impl Into<String>, expr: LinExpr) {
        self.equalities.push(Equality {
            label: label.into(),
            expr,
        });
    }

    /// Serializes the full program, including the symbol table, for debugging.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut p: ConicProgram = serde_json::from_str(s)?;
        p.space.rebuild_index();
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.space.len();
        let check = |e: &LinExpr, what: &str| -> Result<()> {
            if let Some(&(c, v)) = e.terms.iter().find(|&&(c, v)| c >= n || !v.is_finite()) {
                return Err(Error::Construction(format!(
                    "{what}: bad term ({c}, {v}) for a space of {n} columns"
                )));
            }
            if !e.constant.is_finite() {
                return Err(Error::Construction(format!("{what}: non-finite constant")));
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for eq in &self.equalities {
            check(&eq.expr, &eq.label)?;
        }
        for s in &self.socs {
            check(&s.head, &s.label)?;
            for b in &s.body {
                check(b, &s.label)?;
            }
        }
        for l in &self.lmis {
            for (i, j, e) in &l.entries {
                if i > j || *j >= l.dim {
                    return Err(Error::Construction(format!(
                        "{}: entry ({i}, {j}) is not in the upper triangle of a {}x{} block",
                        l.label, l.dim, l.dim
                    )));
                }
                check(e, &l.label)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub tol_infeas: f64,
    /// Relaxed tolerance below which a stalled run is reported as inaccurate
    /// instead of failed.
    pub tol_inaccurate: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            tol_infeas: 1e-8,
            tol_inaccurate: 1e-4,
            max_iter: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Inaccurate,
    Infeasible,
    Unbounded,
    SolverError,
}

impl SolveStatus {
    /// Whether a primal point is available.
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Symbol values (already multiplied by their scales), indexed by column.
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rel_gap: f64,
    /// Rows and cone dimension after presolve.
    pub reduced_rows: usize,
    pub solve_time_s: f64,
}

impl SolveResult {
    pub fn value(&self, space: &VarSpace, sym: Symbol) -> Result<f64> {
        Ok(self.values[space.column(sym)?])
    }

    /// Lifted block `[1 mu'; mu K]` at the solution, in symbol units and
    /// relative to the lifted origin.
    pub fn lifted_matrix(&self, space: &VarSpace) -> Result<DMatrix<f64>> {
        let layout = space
            .lifted
            .ok_or_else(|| Error::Construction("program has no lifted block".into()))?;
        let n = layout.mu_len();
        let mut z = DMatrix::zeros(n + 1, n + 1);
        z[(0, 0)] = 1.0;
        for a in 0..n {
            let m = self.value(space, Symbol::Mu(a))?;
            z[(0, a + 1)] = m;
            z[(a + 1, 0)] = m;
            for b in a..n {
                let k = self.value(space, Symbol::K(a, b))?;
                z[(a + 1, b + 1)] = k;
                z[(b + 1, a + 1)] = k;
            }
        }
        Ok(z)
    }

    /// Ratio of the two largest eigenvalues of the lifted block as seen by
    /// the solver (positions divided by the length scale); large values mean
    /// the relaxation is tight.
    pub fn rank1_ratio(&self, space: &VarSpace) -> Result<f64> {
        let mut z = self.lifted_matrix(space)?;
        let inv = 1.0 / space.lifted.map_or(1.0, |l| l.length_scale);
        let n = z.nrows();
        for a in 1..n {
            for b in 0..n {
                z[(a, b)] *= inv;
                z[(b, a)] *= inv;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(z).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev.len() < 2 {
            return Ok(f64::INFINITY);
        }
        let second = ev[1].max(0.0);
        Ok(if second == 0.0 {
            f64::INFINITY
        } else {
            ev[0] / second
        })
    }
}

/// Solves `program` with the interior-point method.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<SolveResult> {
    program.validate()?;
    let start = Instant::now();
    let lowered = presolve::lower(program)?;
    let (status, x, info) = match &lowered {
        presolve::Lowered::Infeasible => (
            SolveStatus::Infeasible,
            None,
            ipm::IpmInfo::default(),
        ),
        presolve::Lowered::Unbounded => (SolveStatus::Unbounded, None, ipm::IpmInfo::default()),
        presolve::Lowered::Problem(std_form, _) => {
            let out = ipm::solve(std_form, settings);
            (out.status, Some(out.x), out.info)
        }
    };
    let n = program.space.len();
    let (values, objective, reduced_rows) = match (&lowered, x) {
        (presolve::Lowered::Problem(std_form, recovery), Some(x)) if status.has_solution() => {
            let cols = recovery.recover(&x);
            let obj = program.objective.eval(&cols);
            let vals = cols
                .iter()
                .enumerate()
                .map(|(c, v)| v * program.space.scale(c))
                .collect();
            (vals, obj, std_form.rows.len())
        }
        (presolve::Lowered::Problem(std_form, _), _) => {
            (vec![f64::NAN; n], f64::NAN, std_form.rows.len())
        }
        _ => (vec![f64::NAN; n], f64::NAN, 0),
    };
    Ok(SolveResult {
        status,
        values,
        objective,
        iterations: info.iterations,
        primal_residual: info.pinf,
        dual_residual: info.dinf,
        rel_gap: info.rel_gap,
        reduced_rows,
        solve_time_s: start.elapsed().as_secs_f64(),
    })
}
