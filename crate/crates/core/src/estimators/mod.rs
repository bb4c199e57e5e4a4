//! Relaxed maximum-likelihood estimators for the four knowledge scenarios.
//!
//! Each estimator lifts the stacked positions `mu = [t; s]` into
//! `Z = [1 mu'; mu K] >= 0`, expresses every squared link distance and every
//! squared anchor deviation linearly in `(mu, K)`, and minimizes an epigraph
//! of the residual sum of squares plus the anchor penalty:
//!
//! | scenario | residual of link `j -> i`                         | penalty weight |
//! |----------|---------------------------------------------------|----------------|
//! | 1        | `(u - a) / zeta`                                  | `1/delta^2`    |
//! | 2        | `(u - a0 + chi eps) / tau`, `beta = beta0 (1+eps)`| `1/delta^2`    |
//! | 3        | `10^(P_ij / 5 beta) u - g_j`                      | 1              |
//! | 4        | `10^(P_ij / 5 beta0) u - g_j + r_j`               | 1              |
//!
//! Scenario 4 then refines powers and exponent in closed form from the
//! relaxed distances.

mod closed_form;

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

pub use closed_form::{estimate_beta0, refine_ple, refine_power, LinkObservation};

use crate::conic::{
    build_anchor_penalty, build_epigraph_soc, build_residual_equalities, build_residual_lmi,
    build_schur_block, build_sq_distance_links, solve, ConicProgram, LinExpr, SolveResult,
    SolveStatus, SolverSettings, Symbol, VarSpace,
};
use crate::error::{Error, Result};
use crate::model::{Adjacency, Link, MeasurementSet, NodeId, Point, Scenario};

/// Warn when the relative exponent correction leaves the range where the
/// first-order expansion is accurate.
pub const EPSILON_WARN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualEncoding {
    /// `xi = r` as linear equalities.
    #[default]
    Equality,
    /// The diagonal matrix inequality `diag(xi - r, r - xi) >= 0`.
    DiagonalLmi,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub solver: SolverSettings,
    pub residual_encoding: ResidualEncoding,
    /// Length used to normalize positions inside the solver; defaults to the
    /// RMS spread of the anchor fixes.
    pub length_scale: Option<f64>,
}

/// Parameters known to the estimator, per scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnownParams {
    pub tx_power_dbm: Option<Vec<f64>>,
    pub ple: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDistance {
    pub tx: usize,
    pub rx: NodeId,
    pub d_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rel_gap: f64,
    pub reduced_rows: usize,
    pub rank1_ratio: f64,
    pub solve_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub scenario: Scenario,
    pub targets: Vec<Point>,
    pub anchors: Vec<Point>,
    /// Estimated target powers; `None` for a target whose power could not be
    /// recovered. Absent when the powers were known.
    pub tx_power_dbm: Option<Vec<Option<f64>>>,
    pub ple: Option<f64>,
    pub beta0: Option<f64>,
    pub epsilon: Option<f64>,
    pub distances: Vec<LinkDistance>,
    pub solver: SolverSummary,
    pub warnings: Vec<String>,
}

/// How the residual of each link is formed.
enum ResidualModel<'a> {
    KnownPowerKnownPle { powers: &'a [f64], ple: f64 },
    KnownPowerUnknownPle { powers: &'a [f64], beta0: f64 },
    UnknownPowerKnownPle { ple: f64 },
    UnknownPowerUnknownPle { beta0: f64 },
}

impl ResidualModel<'_> {
    fn scenario(&self) -> Scenario {
        match self {
            ResidualModel::KnownPowerKnownPle { .. } => Scenario::KnownPowerKnownPle,
            ResidualModel::KnownPowerUnknownPle { .. } => Scenario::KnownPowerUnknownPle,
            ResidualModel::UnknownPowerKnownPle { .. } => Scenario::UnknownPowerKnownPle,
            ResidualModel::UnknownPowerUnknownPle { .. } => Scenario::UnknownPowerUnknownPle,
        }
    }

    fn weighted_penalty(&self) -> bool {
        matches!(
            self,
            ResidualModel::KnownPowerKnownPle { .. } | ResidualModel::KnownPowerUnknownPle { .. }
        )
    }
}

/// A relaxation ready to solve, with what is needed to read it back.
pub struct Relaxation {
    pub program: ConicProgram,
    pub links: Vec<Link>,
    /// Anchor-fix centroid subtracted from all coordinates.
    pub center: Point,
    scenario: Scenario,
}

fn default_length_scale(fixes: &[Point], center: &Point) -> f64 {
    if fixes.is_empty() {
        return 1.0;
    }
    let ms = fixes.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / fixes.len() as f64;
    ms.sqrt().max(1.0)
}

fn check_powers(powers: &[f64], n_targets: usize) -> Result<()> {
    if powers.len() != n_targets || powers.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "expected {n_targets} finite target powers, got {}",
            powers.len()
        )));
    }
    Ok(())
}

fn check_ple(ple: f64, what: &str) -> Result<()> {
    if !(ple > 0.0 && ple.is_finite()) {
        return Err(Error::Domain(format!("{what} must be positive, got {ple}")));
    }
    Ok(())
}

fn build(
    meas: &MeasurementSet,
    adj: &Adjacency,
    model: &ResidualModel<'_>,
    opts: &EstimatorOptions,
) -> Result<Relaxation> {
    meas.validate(adj)?;
    let n_t = meas.n_targets;
    let n_a = meas.n_anchors();
    match model {
        ResidualModel::KnownPowerKnownPle { powers, ple } => {
            check_powers(powers, n_t)?;
            check_ple(*ple, "path-loss exponent")?;
        }
        ResidualModel::KnownPowerUnknownPle { powers, beta0 } => {
            check_powers(powers, n_t)?;
            check_ple(*beta0, "initial path-loss exponent")?;
        }
        ResidualModel::UnknownPowerKnownPle { ple } => check_ple(*ple, "path-loss exponent")?,
        ResidualModel::UnknownPowerUnknownPle { beta0 } => {
            check_ple(*beta0, "initial path-loss exponent")?
        }
    }
    let links = adj.links();
    if links.is_empty() {
        return Err(Error::InvalidInput("no target links to localize from".into()));
    }

    let fixes: Vec<Point> = meas.anchor_fixes.iter().map(|f| f.position).collect();
    let center = if fixes.is_empty() {
        Point::zeros()
    } else {
        fixes.iter().sum::<Point>() / fixes.len() as f64
    };
    let scale = opts
        .length_scale
        .unwrap_or_else(|| default_length_scale(&fixes, &center));
    let l2 = scale * scale;

    let mut space = VarSpace::new();
    space.declare_lifted(n_t, n_a, scale);
    // Anchor slots hold deviations from their fixes.
    let lay = space.lifted.expect("lifted block was just declared");
    for (i, f) in meas.anchor_fixes.iter().enumerate() {
        let o = f.position - center;
        space.set_lifted_origin(lay.anchor_slot(i), [o.x, o.y])?;
    }
    for k in 0..links.len() {
        space.declare_scaled(Symbol::SqDist(k), l2);
    }
    for i in 0..n_a {
        space.declare_scaled(Symbol::AnchorDev(i), l2);
    }
    space.declare(Symbol::Omega);
    for k in 0..links.len() {
        space.declare(Symbol::Xi(k));
    }
    match model {
        ResidualModel::KnownPowerUnknownPle { .. } => {
            space.declare(Symbol::Epsilon);
        }
        ResidualModel::UnknownPowerKnownPle { .. } => {
            for j in 0..n_t {
                space.declare(Symbol::Gain(j));
            }
        }
        ResidualModel::UnknownPowerUnknownPle { .. } => {
            for j in 0..n_t {
                space.declare(Symbol::Gain(j));
                space.declare(Symbol::Offset(j));
            }
        }
        ResidualModel::KnownPowerKnownPle { .. } => {}
    }

    let mut program = ConicProgram::new(space.clone());
    program.lmis.push(build_schur_block(&space)?);

    for (k, u) in build_sq_distance_links(&space, &links)?.into_iter().enumerate() {
        let mut e = space.term(Symbol::SqDist(k), 1.0)?;
        e.add_scaled(&u, -1.0);
        program.add_equality(format!("u[{k}]"), e);
    }
    let centered: Vec<_> = meas
        .anchor_fixes
        .iter()
        .map(|f| crate::model::AnchorFix {
            position: f.position - center,
            delta_m: f.delta_m,
        })
        .collect();
    for (i, lam) in build_anchor_penalty(&space, &centered)?.into_iter().enumerate() {
        let mut e = space.term(Symbol::AnchorDev(i), 1.0)?;
        e.add_scaled(&lam, -1.0);
        program.add_equality(format!("lambda[{i}]"), e);
    }

    let mut residuals = Vec::with_capacity(links.len());
    for (k, link) in links.iter().enumerate() {
        let r = meas.link_reading(link)?;
        let mut e = LinExpr::zero();
        match model {
            ResidualModel::KnownPowerKnownPle { powers, ple } => {
                let a = 10f64.powf((powers[link.tx] - r.p_dbm) / (5.0 * ple));
                let zeta = a * LN_10 / (5.0 * ple) * r.sigma_db;
                space.add_term(&mut e, Symbol::SqDist(k), 1.0 / zeta)?;
                e.constant = -a / zeta;
            }
            ResidualModel::KnownPowerUnknownPle { powers, beta0 } => {
                let dp = powers[link.tx] - r.p_dbm;
                let a0 = 10f64.powf(dp / (5.0 * beta0));
                let tau = a0 * LN_10 / (5.0 * beta0) * r.sigma_db;
                let chi = a0 * dp * LN_10 / (5.0 * beta0);
                space.add_term(&mut e, Symbol::SqDist(k), 1.0 / tau)?;
                space.add_term(&mut e, Symbol::Epsilon, chi / tau)?;
                e.constant = -a0 / tau;
            }
            ResidualModel::UnknownPowerKnownPle { ple } => {
                space.add_term(&mut e, Symbol::SqDist(k), 10f64.powf(r.p_dbm / (5.0 * ple)))?;
                space.add_term(&mut e, Symbol::Gain(link.tx), -1.0)?;
            }
            ResidualModel::UnknownPowerUnknownPle { beta0 } => {
                space.add_term(&mut e, Symbol::SqDist(k), 10f64.powf(r.p_dbm / (5.0 * beta0)))?;
                space.add_term(&mut e, Symbol::Gain(link.tx), -1.0)?;
                space.add_term(&mut e, Symbol::Offset(link.tx), 1.0)?;
            }
        }
        residuals.push((Symbol::Xi(k), e));
    }
    match opts.residual_encoding {
        ResidualEncoding::Equality => program
            .equalities
            .extend(build_residual_equalities(&space, &residuals)?),
        ResidualEncoding::DiagonalLmi => program.lmis.push(build_residual_lmi(&space, &residuals)?),
    }
    let xis: Vec<Symbol> = (0..links.len()).map(Symbol::Xi).collect();
    program.socs.push(build_epigraph_soc(&space, &xis, Symbol::Omega)?);

    let mut obj = space.term(Symbol::Omega, 1.0)?;
    for (i, f) in meas.anchor_fixes.iter().enumerate() {
        let w = if model.weighted_penalty() {
            1.0 / (f.delta_m * f.delta_m)
        } else {
            1.0
        };
        space.add_term(&mut obj, Symbol::AnchorDev(i), w)?;
    }
    program.objective = obj;

    Ok(Relaxation {
        program,
        links,
        center,
        scenario: model.scenario(),
    })
}

struct Solved {
    result: SolveResult,
    targets: Vec<Point>,
    anchors: Vec<Point>,
    distances: Vec<LinkDistance>,
    summary: SolverSummary,
}

fn solve_relaxation(rel: &Relaxation, opts: &EstimatorOptions) -> Result<Solved> {
    let space = &rel.program.space;
    let result = solve(&rel.program, &opts.solver)?;
    if !result.status.has_solution() {
        return Err(Error::Solver(format!(
            "{} relaxation ended with status {:?}",
            rel.scenario.label(),
            result.status
        )));
    }
    let lay = space.lifted.expect("relaxation declares a lifted block");
    let pos = |slot: usize| -> Result<Point> {
        Ok(Point::new(
            result.value(space, Symbol::Mu(slot))? + space.origin(slot),
            result.value(space, Symbol::Mu(slot + 1))? + space.origin(slot + 1),
        ) + rel.center)
    };
    let targets = (0..lay.n_targets)
        .map(|j| pos(lay.target_slot(j)))
        .collect::<Result<Vec<_>>>()?;
    let anchors = (0..lay.n_anchors)
        .map(|i| pos(lay.anchor_slot(i)))
        .collect::<Result<Vec<_>>>()?;
    let distances = rel
        .links
        .iter()
        .enumerate()
        .map(|(k, l)| {
            Ok(LinkDistance {
                tx: l.tx,
                rx: l.rx,
                d_m: result.value(space, Symbol::SqDist(k))?.max(0.0).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = SolverSummary {
        status: result.status,
        iterations: result.iterations,
        objective: result.objective,
        primal_residual: result.primal_residual,
        dual_residual: result.dual_residual,
        rel_gap: result.rel_gap,
        reduced_rows: result.reduced_rows,
        rank1_ratio: result.rank1_ratio(space)?,
        solve_time_s: result.solve_time_s,
    };
    Ok(Solved {
        result,
        targets,
        anchors,
        distances,
        summary,
    })
}

fn report(rel: &Relaxation, s: Solved) -> EstimateReport {
    let mut warnings = Vec::new();
    if s.summary.status == SolveStatus::Inaccurate {
        warnings.push("solver stopped at reduced accuracy".into());
    }
    EstimateReport {
        scenario: rel.scenario,
        targets: s.targets,
        anchors: s.anchors,
        tx_power_dbm: None,
        ple: None,
        beta0: None,
        epsilon: None,
        distances: s.distances,
        solver: s.summary,
        warnings,
    }
}

fn epsilon_warning(rep: &mut EstimateReport, eps: f64) {
    if eps.abs() > EPSILON_WARN {
        rep.warnings.push(format!(
            "relative exponent correction {eps:.3} exceeds {EPSILON_WARN}; the linearization may be inaccurate"
        ));
    }
}

/// Builds the relaxation for `scenario` without solving it.
pub fn build_relaxation(
    scenario: Scenario,
    meas: &MeasurementSet,
    adj: &Adjacency,
    known: &KnownParams,
    opts: &EstimatorOptions,
) -> Result<Relaxation> {
    let powers = || {
        known.tx_power_dbm.as_deref().ok_or_else(|| Error::MissingField {
            field: "tx_power_dbm".into(),
            reason: format!("scenario {} needs the target transmit powers", scenario.number()),
        })
    };
    let ple = || {
        known.ple.ok_or_else(|| Error::MissingField {
            field: "ple".into(),
            reason: format!("scenario {} needs the path-loss exponent", scenario.number()),
        })
    };
    let model = match scenario {
        Scenario::KnownPowerKnownPle => ResidualModel::KnownPowerKnownPle {
            powers: powers()?,
            ple: ple()?,
        },
        Scenario::KnownPowerUnknownPle => ResidualModel::KnownPowerUnknownPle {
            powers: powers()?,
            beta0: estimate_beta0(meas, adj)?,
        },
        Scenario::UnknownPowerKnownPle => ResidualModel::UnknownPowerKnownPle { ple: ple()? },
        Scenario::UnknownPowerUnknownPle => ResidualModel::UnknownPowerUnknownPle {
            beta0: estimate_beta0(meas, adj)?,
        },
    };
    build(meas, adj, &model, opts)
}

/// Known powers and exponent.
pub fn ctup1(
    meas: &MeasurementSet,
    adj: &Adjacency,
    powers: &[f64],
    ple: f64,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let rel = build(meas, adj, &ResidualModel::KnownPowerKnownPle { powers, ple }, opts)?;
    let s = solve_relaxation(&rel, opts)?;
    Ok(report(&rel, s))
}

/// Known powers, exponent initialized from anchor-anchor links.
pub fn ctup2(
    meas: &MeasurementSet,
    adj: &Adjacency,
    powers: &[f64],
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let beta0 = estimate_beta0(meas, adj)?;
    ctup2_with_beta0(meas, adj, powers, beta0, opts)
}

/// Known powers with an explicit initial exponent.
pub fn ctup2_with_beta0(
    meas: &MeasurementSet,
    adj: &Adjacency,
    powers: &[f64],
    beta0: f64,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let rel = build(meas, adj, &ResidualModel::KnownPowerUnknownPle { powers, beta0 }, opts)?;
    let s = solve_relaxation(&rel, opts)?;
    let eps = s.result.value(&rel.program.space, Symbol::Epsilon)?;
    let mut rep = report(&rel, s);
    rep.beta0 = Some(beta0);
    rep.epsilon = Some(eps);
    rep.ple = Some(beta0 * (1.0 + eps));
    epsilon_warning(&mut rep, eps);
    Ok(rep)
}

/// Unknown powers, known exponent.
pub fn ctup3(
    meas: &MeasurementSet,
    adj: &Adjacency,
    ple: f64,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let rel = build(meas, adj, &ResidualModel::UnknownPowerKnownPle { ple }, opts)?;
    let s = solve_relaxation(&rel, opts)?;
    let space = &rel.program.space;
    let mut powers = Vec::with_capacity(meas.n_targets);
    let mut bad = Vec::new();
    for j in 0..meas.n_targets {
        let g = s.result.value(space, Symbol::Gain(j))?;
        if g > 0.0 {
            powers.push(Some(5.0 * ple * g.log10()));
        } else {
            powers.push(None);
            bad.push(j);
        }
    }
    let mut rep = report(&rel, s);
    for j in bad {
        rep.warnings.push(format!(
            "target {j}: non-positive gain estimate, transmit power not identifiable"
        ));
    }
    rep.tx_power_dbm = Some(powers);
    Ok(rep)
}

/// Unknown powers and exponent.
pub fn ctup4(meas: &MeasurementSet, adj: &Adjacency, opts: &EstimatorOptions) -> Result<EstimateReport> {
    let beta0 = estimate_beta0(meas, adj)?;
    ctup4_with_beta0(meas, adj, beta0, opts)
}

/// Unknown powers and exponent with an explicit initial exponent.
pub fn ctup4_with_beta0(
    meas: &MeasurementSet,
    adj: &Adjacency,
    beta0: f64,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let rel = build(meas, adj, &ResidualModel::UnknownPowerUnknownPle { beta0 }, opts)?;
    let s = solve_relaxation(&rel, opts)?;
    let mut rep = report(&rel, s);

    let mut per_tx: Vec<Vec<LinkObservation>> = vec![Vec::new(); meas.n_targets];
    let mut dropped = 0;
    for (link, d) in rel.links.iter().zip(&rep.distances) {
        if d.d_m <= 0.0 {
            dropped += 1;
            continue;
        }
        let r = meas.link_reading(link)?;
        per_tx[link.tx].push(LinkObservation {
            p_rx_dbm: r.p_dbm,
            sigma_db: r.sigma_db,
            d_m: d.d_m,
        });
    }
    if dropped > 0 {
        rep.warnings
            .push(format!("{dropped} links with zero relaxed distance skipped in refinement"));
    }
    let mut powers = Vec::with_capacity(meas.n_targets);
    let mut pairs = Vec::new();
    for (j, obs) in per_tx.iter().enumerate() {
        match refine_power(obs, beta0) {
            Ok(p) => {
                powers.push(Some(p));
                pairs.extend(obs.iter().map(|o| (p, *o)));
            }
            Err(e) => {
                rep.warnings.push(format!("target {j}: power refinement failed: {e}"));
                powers.push(None);
            }
        }
    }
    let ple = refine_ple(&pairs)?;
    rep.tx_power_dbm = Some(powers);
    rep.beta0 = Some(beta0);
    rep.ple = Some(ple);
    let eps = ple / beta0 - 1.0;
    rep.epsilon = Some(eps);
    epsilon_warning(&mut rep, eps);
    Ok(rep)
}

/// Runs the estimator matching `scenario`, taking whatever it needs from
/// `known`.
pub fn estimate(
    scenario: Scenario,
    meas: &MeasurementSet,
    adj: &Adjacency,
    known: &KnownParams,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    let missing = |field: &str, what: &str| Error::MissingField {
        field: field.into(),
        reason: format!("scenario {} needs {what}", scenario.number()),
    };
    let powers = || {
        known
            .tx_power_dbm
            .as_deref()
            .ok_or_else(|| missing("tx_power_dbm", "the target transmit powers"))
    };
    let ple = || known.ple.ok_or_else(|| missing("ple", "the path-loss exponent"));
    match scenario {
        Scenario::KnownPowerKnownPle => ctup1(meas, adj, powers()?, ple()?, opts),
        Scenario::KnownPowerUnknownPle => ctup2(meas, adj, powers()?, opts),
        Scenario::UnknownPowerKnownPle => ctup3(meas, adj, ple()?, opts),
        Scenario::UnknownPowerUnknownPle => ctup4(meas, adj, opts),
    }
}

#[cfg(test)]
mod tests;
