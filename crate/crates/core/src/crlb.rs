//! Fisher information and Cramér-Rao lower bounds.
//!
//! The full parameter vector is `[t, s, p, beta]` (target positions, anchor
//! positions, target powers, exponent). A scenario keeps only the unknown
//! blocks; anchors are either uncertain (with a Gaussian prior from their
//! fixes) or treated as exactly known and dropped.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Adjacency, NodeKind, Scenario, Theta, DB_PER_NEPER_SLOPE};

/// Condition number of the unit-diagonal information matrix above which the
/// bound is reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Which parameter blocks are present, in order `t, s, p, beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_targets: usize,
    pub n_anchors: usize,
    pub anchors: bool,
    pub powers: bool,
    pub ple: bool,
}

/// Name of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    TargetX(usize),
    TargetY(usize),
    AnchorX(usize),
    AnchorY(usize),
    Power(usize),
    Ple,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::TargetX(j) => write!(f, "t{j}.x"),
            Param::TargetY(j) => write!(f, "t{j}.y"),
            Param::AnchorX(i) => write!(f, "s{i}.x"),
            Param::AnchorY(i) => write!(f, "s{i}.y"),
            Param::Power(j) => write!(f, "p{j}"),
            Param::Ple => write!(f, "beta"),
        }
    }
}

impl ParamLayout {
    pub fn new(scenario: Scenario, n_anchors: usize, n_targets: usize, anchors_exact: bool) -> Self {
        Self {
            n_targets,
            n_anchors,
            anchors: !anchors_exact,
            powers: !scenario.powers_known(),
            ple: !scenario.ple_known(),
        }
    }

    pub fn params(&self) -> Vec<Param> {
        let mut v = Vec::new();
        for j in 0..self.n_targets {
            v.push(Param::TargetX(j));
            v.push(Param::TargetY(j));
        }
        if self.anchors {
            for i in 0..self.n_anchors {
                v.push(Param::AnchorX(i));
                v.push(Param::AnchorY(i));
            }
        }
        if self.powers {
            v.extend((0..self.n_targets).map(Param::Power));
        }
        if self.ple {
            v.push(Param::Ple);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.params().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices into the full `[t, s, p, beta]` vector kept by this layout.
    pub fn full_indices(&self) -> Vec<usize> {
        let (nt, na) = (self.n_targets, self.n_anchors);
        let mut v: Vec<usize> = (0..2 * nt).collect();
        if self.anchors {
            v.extend(2 * nt..2 * (nt + na));
        }
        if self.powers {
            v.extend(2 * (nt + na)..3 * nt + 2 * na);
        }
        if self.ple {
            v.push(3 * nt + 2 * na);
        }
        v
    }

    fn power_offset(&self) -> usize {
        2 * self.n_targets + if self.anchors { 2 * self.n_anchors } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherInfo {
    pub layout: ParamLayout,
    pub matrix: DMatrix<f64>,
}

/// Rows of the measurement Jacobian over the full parameter vector, one per
/// link in canonical order.
pub fn measurement_jacobian(theta: &Theta, adj: &Adjacency) -> Result<DMatrix<f64>> {
    let nt = theta.targets.len();
    let na = theta.anchors.len();
    let links = adj.links();
    let dim = Theta::len_for(na, nt);
    let mut c = DMatrix::zeros(links.len(), dim);
    for (k, l) in links.iter().enumerate() {
        let t = theta.targets[l.tx];
        let rx = theta.position(l.rx);
        let d2 = (t - rx).norm_squared();
        if d2 == 0.0 {
            return Err(Error::Domain(format!(
                "link {} -> {} has zero length",
                l.tx_node(),
                l.rx
            )));
        }
        // Gradient of the mean RSS with respect to the transmitter position.
        let g = (rx - t) * (theta.ple * DB_PER_NEPER_SLOPE / d2);
        c[(k, 2 * l.tx)] += g.x;
        c[(k, 2 * l.tx + 1)] += g.y;
        let rx_col = match l.rx.kind {
            NodeKind::Target => 2 * l.rx.index,
            NodeKind::Anchor => 2 * (nt + l.rx.index),
        };
        c[(k, rx_col)] -= g.x;
        c[(k, rx_col + 1)] -= g.y;
        c[(k, 2 * (nt + na) + l.tx)] = 1.0;
        c[(k, dim - 1)] = -5.0 * d2.log10();
    }
    Ok(c)
}

/// Fisher information for `scenario`.
///
/// `sigma_db` holds one noise level per link in canonical order; `delta_m`
/// holds one per-coordinate standard deviation per anchor, or `None` for
/// exactly known anchors.
pub fn fisher_information(
    theta: &Theta,
    adj: &Adjacency,
    sigma_db: &[f64],
    delta_m: Option<&[f64]>,
    scenario: Scenario,
) -> Result<FisherInfo> {
    let nt = theta.targets.len();
    let na = theta.anchors.len();
    adj.validate(na, nt)?;
    let c = measurement_jacobian(theta, adj)?;
    if sigma_db.len() != c.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} noise levels for {} links",
            sigma_db.len(),
            c.nrows()
        )));
    }
    if sigma_db.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("noise levels must be positive".into()));
    }
    let mut qc = c.clone();
    for (k, &s) in sigma_db.iter().enumerate() {
        qc.row_mut(k).scale_mut(1.0 / (s * s));
    }
    let mut full = c.transpose() * qc;
    if let Some(deltas) = delta_m {
        if deltas.len() != na || deltas.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "expected {na} positive anchor deviations"
            )));
        }
        for (i, &d) in deltas.iter().enumerate() {
            let col = 2 * (nt + i);
            full[(col, col)] += 1.0 / (d * d);
            full[(col + 1, col + 1)] += 1.0 / (d * d);
        }
    }
    let layout = ParamLayout::new(scenario, na, nt, delta_m.is_none());
    let keep = layout.full_indices();
    let matrix = DMatrix::from_fn(keep.len(), keep.len(), |a, b| full[(keep[a], keep[b])]);
    Ok(FisherInfo { layout, matrix })
}

/// Same noise level on every link and anchor.
pub fn fisher_information_uniform(
    theta: &Theta,
    adj: &Adjacency,
    sigma_db: f64,
    delta_m: Option<f64>,
    scenario: Scenario,
) -> Result<FisherInfo> {
    let sig = vec![sigma_db; adj.links().len()];
    let del = delta_m.map(|d| vec![d; theta.anchors.len()]);
    fisher_information(theta, adj, &sig, del.as_deref(), scenario)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    pub crlb_t_m: f64,
    pub crlb_p_dbm: Option<f64>,
    pub crlb_beta: Option<f64>,
    /// Bound on `E|t_j - t_j_hat|^2` per target.
    pub per_target_var_m2: Vec<f64>,
    pub condition_number: f64,
}

/// Inverts the information matrix after scaling it to unit diagonal;
/// reports the near-null directions when it is singular.
pub fn invert_fim(fim: &FisherInfo) -> Result<(DMatrix<f64>, f64)> {
    let f = &fim.matrix;
    let n = f.nrows();
    let names = fim.layout.params();
    if let Some(k) = (0..n).find(|&k| !(f[(k, k)] > 0.0)) {
        return Err(Error::Singular(format!(
            "no information on parameter {}",
            names[k]
        )));
    }
    let d = DVector::from_fn(n, |k, _| 1.0 / f[(k, k)].sqrt());
    let fs = DMatrix::from_fn(n, n, |a, b| d[a] * f[(a, b)] * d[b]);
    let eig = SymmetricEigen::new(fs);
    let emax = eig.eigenvalues.max();
    let emin = eig.eigenvalues.min();
    let cond = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        let mut dirs = Vec::new();
        for (k, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev <= emax / MAX_CONDITION {
                let v = eig.eigenvectors.column(k);
                let mut comp: Vec<(usize, f64)> = v.iter().copied().enumerate().collect();
                comp.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
                let desc: Vec<String> = comp
                    .iter()
                    .take_while(|(_, c)| c.abs() > 1e-3)
                    .take(6)
                    .map(|(i, c)| format!("{:+.3}*{}", c, names[*i]))
                    .collect();
                dirs.push(format!("[{}]", desc.join(" ")));
            }
        }
        return Err(Error::Singular(format!(
            "Fisher information is singular (condition {cond:.3e}); null space: {}",
            dirs.join(", ")
        )));
    }
    let inv_s = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e))
        * eig.eigenvectors.transpose();
    let inv = DMatrix::from_fn(n, n, |a, b| d[a] * inv_s[(a, b)] * d[b]);
    Ok((inv, cond))
}

pub fn crlb(fim: &FisherInfo) -> Result<CrlbReport> {
    let (inv, cond) = invert_fim(fim)?;
    let lay = &fim.layout;
    let nt = lay.n_targets;
    let per_target: Vec<f64> = (0..nt)
        .map(|j| inv[(2 * j, 2 * j)] + inv[(2 * j + 1, 2 * j + 1)])
        .collect();
    let crlb_t = (per_target.iter().sum::<f64>() / nt as f64).sqrt();
    let crlb_p = lay.powers.then(|| {
        let o = lay.power_offset();
        ((0..nt).map(|j| inv[(o + j, o + j)]).sum::<f64>() / nt as f64).sqrt()
    });
    let crlb_beta = lay.ple.then(|| {
        let k = inv.nrows() - 1;
        inv[(k, k)].sqrt()
    });
    Ok(CrlbReport {
        crlb_t_m: crlb_t,
        crlb_p_dbm: crlb_p,
        crlb_beta,
        per_target_var_m2: per_target,
        condition_number: cond,
    })
}
