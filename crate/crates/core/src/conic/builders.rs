//! Constraint builders for the lifted localization relaxations.

use serde::{Deserialize, Serialize};

use super::{Equality, LinExpr, LmiConstraint, SocConstraint, Symbol, VarSpace};
use crate::error::{Error, Result};
use crate::model::{AnchorFix, Link, NodeKind};

/// Shape of the stacked position vector `mu = [t_0, .., t_{Nt-1}, s_0, ..]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedLayout {
    pub n_targets: usize,
    pub n_anchors: usize,
    /// Positions are handed to the solver divided by this length.
    pub length_scale: f64,
}

impl LiftedLayout {
    pub fn mu_len(&self) -> usize {
        2 * (self.n_targets + self.n_anchors)
    }

    /// First `mu` slot of target `j`.
    pub fn target_slot(&self, j: usize) -> usize {
        2 * j
    }

    /// First `mu` slot of anchor `i`.
    pub fn anchor_slot(&self, i: usize) -> usize {
        2 * (self.n_targets + i)
    }

    fn slot(&self, kind: NodeKind, index: usize) -> usize {
        match kind {
            NodeKind::Target => self.target_slot(index),
            NodeKind::Anchor => self.anchor_slot(index),
        }
    }
}

fn layout(space: &VarSpace) -> Result<LiftedLayout> {
    space
        .lifted
        .ok_or_else(|| Error::Construction("no lifted block declared".into()))
}

/// `[1 mu'; mu K] >= 0`, congruence-scaled by the layout's length scale so
/// every entry is of unit magnitude.
pub fn build_schur_block(space: &VarSpace) -> Result<LmiConstraint> {
    let lay = layout(space)?;
    let n = lay.mu_len();
    let inv = 1.0 / lay.length_scale;
    let mut entries = Vec::with_capacity((n + 1) * (n + 2) / 2);
    entries.push((0, 0, LinExpr::constant(1.0)));
    for a in 0..n {
        entries.push((0, a + 1, space.term(Symbol::Mu(a), inv)?));
    }
    for a in 0..n {
        for b in a..n {
            entries.push((a + 1, b + 1, space.term(Symbol::K(a, b), inv * inv)?));
        }
    }
    Ok(LmiConstraint {
        label: "schur".into(),
        dim: n + 1,
        entries,
    })
}

fn add_sq_diff(space: &VarSpace, e: &mut LinExpr, p: usize, q: usize) -> Result<()> {
    for c in 0..2 {
        space.add_term(e, Symbol::k(p + c, p + c), 1.0)?;
        space.add_term(e, Symbol::k(p + c, q + c), -2.0)?;
        space.add_term(e, Symbol::k(q + c, q + c), 1.0)?;
        let d = space.origin(p + c) - space.origin(q + c);
        if d != 0.0 {
            space.add_term(e, Symbol::Mu(p + c), 2.0 * d)?;
            space.add_term(e, Symbol::Mu(q + c), -2.0 * d)?;
            e.constant += d * d;
        }
    }
    Ok(())
}

/// Lifted squared distance of every link, linear in `K`.
pub fn build_sq_distance_links(space: &VarSpace, links: &[Link]) -> Result<Vec<LinExpr>> {
    let lay = layout(space)?;
    links
        .iter()
        .map(|l| {
            if l.tx >= lay.n_targets
                || l.rx.index
                    >= match l.rx.kind {
                        NodeKind::Anchor => lay.n_anchors,
                        NodeKind::Target => lay.n_targets,
                    }
            {
                return Err(Error::Construction(format!(
                    "link {} -> {} is outside the lifted layout",
                    l.tx_node(),
                    l.rx
                )));
            }
            let mut e = LinExpr::zero();
            add_sq_diff(
                space,
                &mut e,
                lay.target_slot(l.tx),
                lay.slot(l.rx.kind, l.rx.index),
            )?;
            e.compress();
            Ok(e)
        })
        .collect()
}

/// Lifted squared deviation of each anchor from its fix,
/// `tr(K_ii) - 2 g' mu_i + |g|^2` with `g` the fix relative to the slot
/// origin. Placing the origin at the fix leaves just `tr(K_ii)`, which avoids
/// cancellation when the fix weights are large.
pub fn build_anchor_penalty(space: &VarSpace, fixes: &[AnchorFix]) -> Result<Vec<LinExpr>> {
    let lay = layout(space)?;
    if fixes.len() != lay.n_anchors {
        return Err(Error::Construction(format!(
            "{} anchor fixes for a layout with {} anchors",
            fixes.len(),
            lay.n_anchors
        )));
    }
    fixes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = lay.anchor_slot(i);
            let mut e = LinExpr::zero();
            for c in 0..2 {
                let g = f.position[c] - space.origin(p + c);
                space.add_term(&mut e, Symbol::k(p + c, p + c), 1.0)?;
                if g != 0.0 {
                    space.add_term(&mut e, Symbol::Mu(p + c), -2.0 * g)?;
                    e.constant += g * g;
                }
            }
            Ok(e)
        })
        .collect()
}

/// `|| [2 xi, omega - 1] || <= omega + 1`, i.e. `sum xi^2 <= omega`.
pub fn build_epigraph_soc(space: &VarSpace, xis: &[Symbol], omega: Symbol) -> Result<SocConstraint> {
    let mut head = space.term(omega, 1.0)?;
    head.constant = 1.0;
    let mut body = xis
        .iter()
        .map(|&s| space.term(s, 2.0))
        .collect::<Result<Vec<_>>>()?;
    let mut last = space.term(omega, 1.0)?;
    last.constant = -1.0;
    body.push(last);
    Ok(SocConstraint {
        label: "epigraph".into(),
        head,
        body,
    })
}

fn residual_gap(space: &VarSpace, xi: Symbol, r: &LinExpr) -> Result<LinExpr> {
    let mut e = space.term(xi, 1.0)?;
    e.add_scaled(r, -1.0);
    Ok(e)
}

/// Diagonal block `diag(xi_k - r_k, r_k - xi_k, ...) >= 0`.
pub fn build_residual_lmi(space: &VarSpace, residuals: &[(Symbol, LinExpr)]) -> Result<LmiConstraint> {
    let mut entries = Vec::with_capacity(2 * residuals.len());
    for (k, (xi, r)) in residuals.iter().enumerate() {
        let e = residual_gap(space, *xi, r)?;
        entries.push((2 * k + 1, 2 * k + 1, e.scaled(-1.0)));
        entries.push((2 * k, 2 * k, e));
    }
    entries.sort_by_key(|&(i, _, _)| i);
    Ok(LmiConstraint {
        label: "residuals".into(),
        dim: 2 * residuals.len(),
        entries,
    })
}

/// `xi_k = r_k` as plain equalities.
pub fn build_residual_equalities(space: &VarSpace, residuals: &[(Symbol, LinExpr)]) -> Result<Vec<Equality>> {
    residuals
        .iter()
        .map(|(xi, r)| {
            Ok(Equality {
                label: format!("residual {xi}"),
                expr: residual_gap(space, *xi, r)?,
            })
        })
        .collect()
}
