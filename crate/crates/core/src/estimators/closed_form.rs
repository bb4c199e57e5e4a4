//! Closed-form path-loss exponent initializer and power/exponent refinement.
//!
//! All three are weighted least-squares fits with weights `1/sigma^2`; each
//! returns the exact stationary point of its one-dimensional objective.

use crate::error::{Error, Result};
use crate::model::{Adjacency, MeasurementSet, NodeId, REFERENCE_DISTANCE_M};

/// One received reading with the distance it is attributed to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkObservation {
    pub p_rx_dbm: f64,
    pub sigma_db: f64,
    pub d_m: f64,
}

fn log_term(d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {d_m}")));
    }
    Ok(10.0 * (d_m / REFERENCE_DISTANCE_M).log10())
}

/// Weighted least-squares slope through the origin: minimizes
/// `sum w (beta phi - q)^2`.
fn ls_slope(rows: impl Iterator<Item = (f64, f64, f64)>) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (w, phi, q) in rows {
        num += w * phi * q;
        den += w * phi * phi;
    }
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::Singular(
            "every link sits at the reference distance; the exponent is not identifiable".into(),
        ));
    }
    Ok(num / den)
}

/// Path-loss exponent fitted on anchor-anchor links, using distances between
/// the measured anchor fixes and the known anchor transmit powers.
pub fn estimate_beta0(meas: &MeasurementSet, adj: &Adjacency) -> Result<f64> {
    let links = adj.anchor_links();
    if links.is_empty() {
        return Err(Error::NoAnchorLinks);
    }
    let powers = meas
        .anchor_tx_power_dbm
        .as_ref()
        .ok_or_else(|| Error::MissingField {
            field: "anchor_tx_power_dbm".into(),
            reason: "anchor-anchor links need the anchors' transmit powers".into(),
        })?;
    let mut rows = Vec::with_capacity(links.len());
    for (j, i) in links {
        let r = meas
            .reading(NodeId::anchor(j), NodeId::anchor(i))
            .ok_or_else(|| Error::InvalidInput(format!("no reading for anchor {j} -> anchor {i}")))?;
        let d = (meas.anchor_fixes[j].position - meas.anchor_fixes[i].position).norm();
        rows.push((1.0 / (r.sigma_db * r.sigma_db), log_term(d)?, powers[j] - r.p_dbm));
    }
    ls_slope(rows.into_iter())
}

/// Transmit power maximizing the likelihood of `obs` for fixed distances and
/// exponent `ple`.
pub fn refine_power(obs: &[LinkObservation], ple: f64) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("no links to refine the power from".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for o in obs {
        let w = 1.0 / (o.sigma_db * o.sigma_db);
        num += w * (o.p_rx_dbm + ple * log_term(o.d_m)?);
        den += w;
    }
    Ok(num / den)
}

/// Exponent maximizing the likelihood for fixed distances and transmit
/// powers; `obs` pairs each reading with its transmitter's power.
pub fn refine_ple(obs: &[(f64, LinkObservation)]) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("no links to refine the exponent from".into()));
    }
    let rows = obs
        .iter()
        .map(|(p_tx, o)| {
            Ok((
                1.0 / (o.sigma_db * o.sigma_db),
                log_term(o.d_m)?,
                p_tx - o.p_rx_dbm,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    ls_slope(rows.into_iter())
}
