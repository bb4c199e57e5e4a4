//! Network scenes, measurements and the log-distance path-loss model.
//!
//! Indices are 0-based throughout. A directed link always has a *target* as
//! transmitter; the receiver is either an anchor or another target. Anchor to
//! anchor links are kept separately and only feed the path-loss exponent
//! initializer.

use std::collections::BTreeMap;
use std::f64::consts::{LN_10, PI};
use std::fmt;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in metres.
pub type Point = Vector2<f64>;

/// Reference distance of the path-loss model, in metres.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Anchor,
    Target,
}

/// A node handle: kind plus 0-based index within that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub fn anchor(index: usize) -> Self {
        Self {
            kind: NodeKind::Anchor,
            index,
        }
    }

    pub fn target(index: usize) -> Self {
        Self {
            kind: NodeKind::Target,
            index,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Anchor => write!(f, "anchor {}", self.index),
            NodeKind::Target => write!(f, "target {}", self.index),
        }
    }
}

/// Which of the transmit powers and path-loss exponent are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// Powers and exponent known.
    KnownPowerKnownPle = 1,
    /// Powers known, exponent unknown.
    KnownPowerUnknownPle = 2,
    /// Powers unknown, exponent known.
    UnknownPowerKnownPle = 3,
    /// Both unknown.
    UnknownPowerUnknownPle = 4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::KnownPowerKnownPle,
        Scenario::KnownPowerUnknownPle,
        Scenario::UnknownPowerKnownPle,
        Scenario::UnknownPowerUnknownPle,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn powers_known(self) -> bool {
        matches!(
            self,
            Scenario::KnownPowerKnownPle | Scenario::KnownPowerUnknownPle
        )
    }

    pub fn ple_known(self) -> bool {
        matches!(
            self,
            Scenario::KnownPowerKnownPle | Scenario::UnknownPowerKnownPle
        )
    }

    /// Estimator label used in reports, e.g. `ctup1`.
    pub fn label(self) -> &'static str {
        match self {
            Scenario::KnownPowerKnownPle => "ctup1",
            Scenario::KnownPowerUnknownPle => "ctup2",
            Scenario::UnknownPowerKnownPle => "ctup3",
            Scenario::UnknownPowerUnknownPle => "ctup4",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_prefix("ctup-").or_else(|| s.strip_prefix("ctup")).unwrap_or(&s);
        s.parse::<u8>().ok().and_then(|n| Scenario::try_from(n).ok())
    }
}

impl TryFrom<u8> for Scenario {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Scenario::KnownPowerKnownPle),
            2 => Ok(Scenario::KnownPowerUnknownPle),
            3 => Ok(Scenario::UnknownPowerKnownPle),
            4 => Ok(Scenario::UnknownPowerUnknownPle),
            _ => Err(format!("scenario must be 1..=4, got {v}")),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s as u8
    }
}

/// Directed link from target `tx` to receiver `rx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub tx: usize,
    pub rx: NodeId,
}

impl Link {
    pub fn tx_node(&self) -> NodeId {
        NodeId::target(self.tx)
    }
}

/// Neighbour sets of every transmitter.
///
/// `target_anchor[j]` lists anchors receiving target `j`, `target_target[j]`
/// lists targets receiving target `j` and `anchor_anchor[j]` lists anchors
/// receiving anchor `j`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Adjacency {
    pub target_anchor: Vec<Vec<usize>>,
    pub target_target: Vec<Vec<usize>>,
    pub anchor_anchor: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Every node hears every other node.
    pub fn full(n_anchors: usize, n_targets: usize) -> Self {
        Self {
            target_anchor: (0..n_targets).map(|_| (0..n_anchors).collect()).collect(),
            target_target: (0..n_targets)
                .map(|j| (0..n_targets).filter(|&i| i != j).collect())
                .collect(),
            anchor_anchor: (0..n_anchors)
                .map(|j| (0..n_anchors).filter(|&i| i != j).collect())
                .collect(),
        }
    }

    /// Links shorter than `radius_m` between the given positions.
    pub fn within_radius(anchors: &[Point], targets: &[Point], radius_m: f64) -> Self {
        let close = |a: &Point, b: &Point| (a - b).norm() <= radius_m;
        Self {
            target_anchor: targets
                .iter()
                .map(|t| (0..anchors.len()).filter(|&i| close(t, &anchors[i])).collect())
                .collect(),
            target_target: targets
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    (0..targets.len())
                        .filter(|&i| i != j && close(t, &targets[i]))
                        .collect()
                })
                .collect(),
            anchor_anchor: anchors
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    (0..anchors.len())
                        .filter(|&i| i != j && close(s, &anchors[i]))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn n_targets(&self) -> usize {
        self.target_anchor.len()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchor_anchor.len()
    }

    /// Target-transmitted links in canonical order: for each transmitter,
    /// anchor receivers first, then target receivers, each ascending.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for j in 0..self.n_targets() {
            let mut a = self.target_anchor[j].clone();
            a.sort_unstable();
            out.extend(a.into_iter().map(|i| Link {
                tx: j,
                rx: NodeId::anchor(i),
            }));
            let mut t = self.target_target[j].clone();
            t.sort_unstable();
            out.extend(t.into_iter().map(|i| Link {
                tx: j,
                rx: NodeId::target(i),
            }));
        }
        out
    }

    /// Anchor-anchor links as `(tx, rx)` pairs in ascending order.
    pub fn anchor_links(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, rxs) in self.anchor_anchor.iter().enumerate() {
            let mut r = rxs.clone();
            r.sort_unstable();
            out.extend(r.into_iter().map(|i| (j, i)));
        }
        out
    }

    /// Rebuild neighbour sets from the keys of a reading map.
    pub fn from_readings<'a>(
        n_anchors: usize,
        n_targets: usize,
        keys: impl IntoIterator<Item = &'a (NodeId, NodeId)>,
    ) -> Result<Self> {
        let mut adj = Self {
            target_anchor: vec![Vec::new(); n_targets],
            target_target: vec![Vec::new(); n_targets],
            anchor_anchor: vec![Vec::new(); n_anchors],
        };
        for &(tx, rx) in keys {
            let (list, limit) = match (tx.kind, rx.kind) {
                (NodeKind::Target, NodeKind::Anchor) => {
                    (adj.target_anchor.get_mut(tx.index), n_anchors)
                }
                (NodeKind::Target, NodeKind::Target) => {
                    (adj.target_target.get_mut(tx.index), n_targets)
                }
                (NodeKind::Anchor, NodeKind::Anchor) => {
                    (adj.anchor_anchor.get_mut(tx.index), n_anchors)
                }
                (NodeKind::Anchor, NodeKind::Target) => {
                    return Err(Error::InvalidInput(format!(
                        "link {tx} -> {rx}: anchors transmitting to targets are not part of the model"
                    )))
                }
            };
            let list = list.ok_or_else(|| {
                Error::InvalidInput(format!("link {tx} -> {rx}: transmitter out of range"))
            })?;
            if rx.index >= limit {
                return Err(Error::InvalidInput(format!(
                    "link {tx} -> {rx}: receiver out of range"
                )));
            }
            list.push(rx.index);
        }
        adj.validate(n_anchors, n_targets)?;
        Ok(adj)
    }

    pub fn validate(&self, n_anchors: usize, n_targets: usize) -> Result<()> {
        if self.target_anchor.len() != n_targets
            || self.target_target.len() != n_targets
            || self.anchor_anchor.len() != n_anchors
        {
            return Err(Error::InvalidInput(format!(
                "adjacency sized for {} anchors / {} targets, expected {n_anchors} / {n_targets}",
                self.anchor_anchor.len(),
                self.target_anchor.len()
            )));
        }
        let check = |lists: &[Vec<usize>], limit: usize, what: &str, no_self: bool| {
            for (j, l) in lists.iter().enumerate() {
                let mut seen = l.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != l.len() {
                    return Err(Error::InvalidInput(format!(
                        "{what} neighbours of transmitter {j} contain duplicates"
                    )));
                }
                if let Some(&bad) = l.iter().find(|&&i| i >= limit || (no_self && i == j)) {
                    return Err(Error::InvalidInput(format!(
                        "{what} neighbour {bad} of transmitter {j} is invalid"
                    )));
                }
            }
            Ok(())
        };
        check(&self.target_anchor, n_anchors, "target-anchor", false)?;
        check(&self.target_target, n_targets, "target-target", true)?;
        check(&self.anchor_anchor, n_anchors, "anchor-anchor", true)?;
        Ok(())
    }
}

/// Ground truth for a synthetic or surveyed deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScene {
    pub anchors: Vec<Point>,
    pub targets: Vec<Point>,
    /// Transmit power of each target, dBm at the reference distance.
    pub target_tx_power_dbm: Vec<f64>,
    /// Transmit power of each anchor; only used on anchor-anchor links.
    pub anchor_tx_power_dbm: Vec<f64>,
    pub ple: f64,
    pub adjacency: Adjacency,
}

impl NetworkScene {
    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn position(&self, id: NodeId) -> Point {
        match id.kind {
            NodeKind::Anchor => self.anchors[id.index],
            NodeKind::Target => self.targets[id.index],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (na, nt) = (self.n_anchors(), self.n_targets());
        if self.target_tx_power_dbm.len() != nt || self.anchor_tx_power_dbm.len() != na {
            return Err(Error::InvalidInput(
                "transmit power vectors do not match node counts".into(),
            ));
        }
        if !(self.ple > 0.0 && self.ple.is_finite()) {
            return Err(Error::Domain(format!(
                "path-loss exponent must be positive, got {}",
                self.ple
            )));
        }
        self.adjacency.validate(na, nt)?;
        let all: Vec<Point> = self.targets.iter().chain(&self.anchors).copied().collect();
        for (a, p) in all.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidInput("non-finite node position".into()));
            }
            if all[a + 1..].iter().any(|q| (p - q).norm() == 0.0) {
                return Err(Error::InvalidInput("two nodes share a position".into()));
            }
        }
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta {
            targets: self.targets.clone(),
            anchors: self.anchors.clone(),
            powers_dbm: self.target_tx_power_dbm.clone(),
            ple: self.ple,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssReading {
    pub p_dbm: f64,
    pub sigma_db: f64,
}

/// A noisy anchor position fix with per-coordinate standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorFix {
    pub position: Point,
    pub delta_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RssEntry {
    tx: NodeId,
    rx: NodeId,
    p_dbm: f64,
    sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeasurementSetRepr {
    n_targets: usize,
    rss: Vec<RssEntry>,
    anchor_fixes: Vec<AnchorFix>,
    #[serde(default)]
    anchor_tx_power_dbm: Option<Vec<f64>>,
}

/// Everything an estimator observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MeasurementSetRepr", try_from = "MeasurementSetRepr")]
pub struct MeasurementSet {
    pub n_targets: usize,
    /// Readings keyed by `(transmitter, receiver)`.
    pub rss: BTreeMap<(NodeId, NodeId), RssReading>,
    pub anchor_fixes: Vec<AnchorFix>,
    /// Needed only when anchor-anchor links are used.
    pub anchor_tx_power_dbm: Option<Vec<f64>>,
}

impl From<MeasurementSet> for MeasurementSetRepr {
    fn from(m: MeasurementSet) -> Self {
        Self {
            n_targets: m.n_targets,
            rss: m
                .rss
                .iter()
                .map(|(&(tx, rx), r)| RssEntry {
                    tx,
                    rx,
                    p_dbm: r.p_dbm,
                    sigma_db: r.sigma_db,
                })
                .collect(),
            anchor_fixes: m.anchor_fixes,
            anchor_tx_power_dbm: m.anchor_tx_power_dbm,
        }
    }
}

impl TryFrom<MeasurementSetRepr> for MeasurementSet {
    type Error = String;

    fn try_from(r: MeasurementSetRepr) -> std::result::Result<Self, String> {
        let mut rss = BTreeMap::new();
        for e in r.rss {
            let reading = RssReading {
                p_dbm: e.p_dbm,
                sigma_db: e.sigma_db,
            };
            if rss.insert((e.tx, e.rx), reading).is_some() {
                return Err(format!("duplicate reading for link {} -> {}", e.tx, e.rx));
            }
        }
        Ok(Self {
            n_targets: r.n_targets,
            rss,
            anchor_fixes: r.anchor_fixes,
            anchor_tx_power_dbm: r.anchor_tx_power_dbm,
        })
    }
}

impl MeasurementSet {
    pub fn n_anchors(&self) -> usize {
        self.anchor_fixes.len()
    }

    pub fn reading(&self, tx: NodeId, rx: NodeId) -> Option<&RssReading> {
        self.rss.get(&(tx, rx))
    }

    pub fn link_reading(&self, link: &Link) -> Result<&RssReading> {
        self.reading(link.tx_node(), link.rx).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no reading for link {} -> {}",
                link.tx_node(),
                link.rx
            ))
        })
    }

    /// Adjacency implied by the reading keys.
    pub fn adjacency(&self) -> Result<Adjacency> {
        Adjacency::from_readings(self.n_anchors(), self.n_targets, self.rss.keys())
    }

    /// Checks the invariants and that every link in `adj` has a reading.
    pub fn validate(&self, adj: &Adjacency) -> Result<()> {
        adj.validate(self.n_anchors(), self.n_targets)?;
        for (&(tx, rx), r) in &self.rss {
            if !(r.sigma_db > 0.0 && r.sigma_db.is_finite()) || !r.p_dbm.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "reading {tx} -> {rx} must have finite power and positive sigma"
                )));
            }
        }
        for (i, f) in self.anchor_fixes.iter().enumerate() {
            if !(f.delta_m > 0.0 && f.delta_m.is_finite())
                || !(f.position.x.is_finite() && f.position.y.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "anchor fix {i} must be finite with positive delta"
                )));
            }
        }
        for link in adj.links() {
            self.link_reading(&link)?;
        }
        for (j, i) in adj.anchor_links() {
            if self.reading(NodeId::anchor(j), NodeId::anchor(i)).is_none() {
                return Err(Error::InvalidInput(format!(
                    "no reading for link anchor {j} -> anchor {i}"
                )));
            }
        }
        if let Some(p) = &self.anchor_tx_power_dbm {
            if p.len() != self.n_anchors() {
                return Err(Error::InvalidInput(
                    "anchor transmit powers do not match the anchor count".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Full parameter vector `[t, s, p, beta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub targets: Vec<Point>,
    pub anchors: Vec<Point>,
    pub powers_dbm: Vec<f64>,
    pub ple: f64,
}

impl Theta {
    pub fn len_for(n_anchors: usize, n_targets: usize) -> usize {
        3 * n_targets + 2 * n_anchors + 1
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(Self::len_for(self.anchors.len(), self.targets.len()));
        for p in self.targets.iter().chain(&self.anchors) {
            v.push(p.x);
            v.push(p.y);
        }
        v.extend_from_slice(&self.powers_dbm);
        v.push(self.ple);
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>, n_anchors: usize, n_targets: usize) -> Result<Self> {
        if v.len() != Self::len_for(n_anchors, n_targets) {
            return Err(Error::InvalidInput(format!(
                "parameter vector has length {}, expected {}",
                v.len(),
                Self::len_for(n_anchors, n_targets)
            )));
        }
        let pt = |k: usize| Point::new(v[2 * k], v[2 * k + 1]);
        let off = 2 * (n_targets + n_anchors);
        Ok(Self {
            targets: (0..n_targets).map(pt).collect(),
            anchors: (n_targets..n_targets + n_anchors).map(pt).collect(),
            powers_dbm: (0..n_targets).map(|j| v[off + j]).collect(),
            ple: v[off + n_targets],
        })
    }

    pub fn position(&self, id: NodeId) -> Point {
        match id.kind {
            NodeKind::Anchor => self.anchors[id.index],
            NodeKind::Target => self.targets[id.index],
        }
    }
}

/// Mean received power at distance `d_m` from a transmitter of power `p_tx_dbm`.
pub fn pathloss_forward(p_tx_dbm: f64, ple: f64, d_m: f64, d0_m: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(d0_m > 0.0) {
        return Err(Error::Domain(format!(
            "distances must be positive (d = {d_m}, d0 = {d0_m})"
        )));
    }
    if !(ple > 0.0) {
        return Err(Error::Domain(format!("path-loss exponent must be positive, got {ple}")));
    }
    Ok(p_tx_dbm - 10.0 * ple * (d_m / d0_m).log10())
}

/// Squared distance implied by a noiseless reading (reference distance 1 m).
pub fn distance_sq_from_rss(p_tx_dbm: f64, p_rx_dbm: f64, ple: f64) -> Result<f64> {
    if !(ple > 0.0) {
        return Err(Error::Domain(format!("path-loss exponent must be positive, got {ple}")));
    }
    Ok(10f64.powf((p_tx_dbm - p_rx_dbm) / (5.0 * ple)))
}

/// Derivative of the received power with respect to the log-distance slope
/// term; `10 / ln 10`.
pub const DB_PER_NEPER_SLOPE: f64 = 10.0 / LN_10;

/// Log-likelihood of `theta` given the measurements, without the constant
/// normalizers (see [`log_normalizer`]).
pub fn loglikelihood(theta: &Theta, meas: &MeasurementSet, adj: &Adjacency) -> Result<f64> {
    if theta.targets.len() != meas.n_targets || theta.anchors.len() != meas.n_anchors() {
        return Err(Error::InvalidInput(
            "parameter vector does not match the measurement set".into(),
        ));
    }
    let mut ll = 0.0;
    for link in adj.links() {
        let r = meas.link_reading(&link)?;
        let d = (theta.targets[link.tx] - theta.position(link.rx)).norm();
        let mean = pathloss_forward(theta.powers_dbm[link.tx], theta.ple, d, REFERENCE_DISTANCE_M)?;
        let e = (r.p_dbm - mean) / r.sigma_db;
        ll -= 0.5 * e * e;
    }
    for (fix, s) in meas.anchor_fixes.iter().zip(&theta.anchors) {
        ll -= 0.5 * (fix.position - s).norm_squared() / (fix.delta_m * fix.delta_m);
    }
    Ok(ll)
}

/// Constant part of the log-likelihood: Gaussian normalizers of every RSS
/// reading and of the two-dimensional anchor fixes.
pub fn log_normalizer(meas: &MeasurementSet, adj: &Adjacency) -> Result<f64> {
    let mut c = 0.0;
    for link in adj.links() {
        let r = meas.link_reading(&link)?;
        c -= (r.sigma_db * (2.0 * PI).sqrt()).ln();
    }
    for fix in &meas.anchor_fixes {
        c -= (2.0 * PI * fix.delta_m * fix.delta_m).ln();
    }
    Ok(c)
}
