//! Field-data ingestion and calibration.
//!
//! A dataset directory holds three UTF-8 CSV files with a header row:
//!
//! - `nodes.csv`: `node_id,role,tx_power_dbm`, role is `anchor` or `target`,
//!   the power may be empty;
//! - `rss.csv`: `tx_id,rx_id,rssi_dbm[,timestamp]`, one row per reading;
//! - `gps.csv`: `node_id,lat_deg,lon_deg,source`, source is `std` or `rtk`.
//!
//! [`read_dataset`] returns the raw records exactly as written, so
//! [`save_dataset`] followed by [`read_dataset`] is the identity.
//! [`derive_problem`] turns the records into an estimation problem: repeated
//! readings are aggregated per directed link, standard GPS fixes become anchor
//! fixes, and RTK fixes become ground truth.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimators::KnownParams;
use crate::model::{Adjacency, AnchorFix, MeasurementSet, NodeId, Point, RssReading};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Site extent beyond which the local projection is no longer trusted.
pub const MAX_SITE_EXTENT_M: f64 = 10_000.0;

pub const NODES_FILE: &str = "nodes.csv";
pub const RSS_FILE: &str = "rss.csv";
pub const GPS_FILE: &str = "gps.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Anchor,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixSource {
    Std,
    Rtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: String,
    pub role: Role,
    pub tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssLogRecord {
    pub tx_id: String,
    pub rx_id: String,
    pub rssi_dbm: f64,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub node_id: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub source: FixSource,
}

/// Raw records of one field campaign.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub nodes: Vec<NodeRecord>,
    pub rss: Vec<RssLogRecord>,
    pub gps: Vec<GeoFix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

// ---------------------------------------------------------------- parsing

struct Table {
    path: String,
    columns: HashMap<String, usize>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn get<'a>(&self, row: &'a [String], col: &str) -> Option<&'a str> {
        self.columns.get(col).map(|&i| row[i].as_str())
    }
}

fn read_table(path: &Path, required: &[&str], optional: &[&str]) -> Result<Table> {
    let name = path.display().to_string();
    let perr = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let bytes = fs::read(path).map_err(|e| perr(0, format!("cannot read file: {e}")))?;
    let text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            let upto = e.utf8_error().valid_up_to();
            let line = e.as_bytes()[..upto].iter().filter(|&&b| b == b'\n').count() + 1;
            return Err(perr(line, "file is not valid UTF-8".into()));
        }
    };
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    if text.trim().is_empty() {
        return Err(perr(1, "file is empty; a header row is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| perr(1, format!("unreadable header: {e}")))?
        .clone();
    let mut columns = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if !required.contains(&h) && !optional.contains(&h) {
            return Err(perr(
                1,
                format!(
                    "unexpected column `{h}`; expected {}",
                    required.iter().chain(optional).copied().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        if columns.insert(h.to_string(), i).is_some() {
            return Err(perr(1, format!("duplicate column `{h}`")));
        }
    }
    for r in required {
        if !columns.contains_key(*r) {
            return Err(perr(1, format!("missing column `{r}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            perr(line, format!("malformed CSV: {e}"))
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(perr(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table {
        path: name,
        columns,
        rows,
    })
}

fn parse_f64(t: &Table, line: usize, field: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| t.err(line, format!("{field}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(t.err(line, format!("{field}: `{s}` is not finite")));
    }
    Ok(v)
}

fn parse_opt_f64(t: &Table, line: usize, field: &str, s: Option<&str>) -> Result<Option<f64>> {
    match s {
        None | Some("") => Ok(None),
        Some(s) => parse_f64(t, line, field, s).map(Some),
    }
}

fn parse_id(t: &Table, line: usize, field: &str, s: &str) -> Result<String> {
    if s.is_empty() {
        return Err(t.err(line, format!("{field} is empty")));
    }
    Ok(s.to_string())
}

fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>> {
    let t = read_table(path, &["node_id", "role", "tx_power_dbm"], &[])?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let line = *line;
        let node_id = parse_id(&t, line, "node_id", t.get(row, "node_id").unwrap())?;
        if !seen.insert(node_id.clone()) {
            return Err(t.err(line, format!("node `{node_id}` declared twice")));
        }
        let role = match t.get(row, "role").unwrap() {
            "anchor" => Role::Anchor,
            "target" => Role::Target,
            other => {
                return Err(t.err(
                    line,
                    format!("role: `{other}` is not `anchor` or `target`"),
                ))
            }
        };
        let tx_power_dbm = parse_opt_f64(&t, line, "tx_power_dbm", t.get(row, "tx_power_dbm"))?;
        out.push(NodeRecord {
            node_id,
            role,
            tx_power_dbm,
        });
    }
    if out.is_empty() {
        return Err(t.err(1, "no nodes declared"));
    }
    Ok(out)
}

fn read_rss(path: &Path, known: &HashSet<&str>) -> Result<Vec<RssLogRecord>> {
    let t = read_table(path, &["tx_id", "rx_id", "rssi_dbm"], &["timestamp"])?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let line = *line;
        let tx_id = parse_id(&t, line, "tx_id", t.get(row, "tx_id").unwrap())?;
        let rx_id = parse_id(&t, line, "rx_id", t.get(row, "rx_id").unwrap())?;
        for id in [&tx_id, &rx_id] {
            if !known.contains(id.as_str()) {
                return Err(t.err(line, format!("unknown node `{id}`")));
            }
        }
        if tx_id == rx_id {
            return Err(t.err(line, format!("node `{tx_id}` cannot measure itself")));
        }
        let rssi_dbm = parse_f64(&t, line, "rssi_dbm", t.get(row, "rssi_dbm").unwrap())?;
        let timestamp = parse_opt_f64(&t, line, "timestamp", t.get(row, "timestamp"))?;
        out.push(RssLogRecord {
            tx_id,
            rx_id,
            rssi_dbm,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(t.err(1, "no RSS readings"));
    }
    Ok(out)
}

fn read_gps(path: &Path, known: &HashSet<&str>) -> Result<Vec<GeoFix>> {
    let t = read_table(path, &["node_id", "lat_deg", "lon_deg", "source"], &[])?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let line = *line;
        let node_id = parse_id(&t, line, "node_id", t.get(row, "node_id").unwrap())?;
        if !known.contains(node_id.as_str()) {
            return Err(t.err(line, format!("unknown node `{node_id}`")));
        }
        let lat_deg = parse_f64(&t, line, "lat_deg", t.get(row, "lat_deg").unwrap())?;
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(t.err(line, format!("lat_deg {lat_deg} outside [-90, 90]")));
        }
        let lon_deg = parse_f64(&t, line, "lon_deg", t.get(row, "lon_deg").unwrap())?;
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(t.err(line, format!("lon_deg {lon_deg} outside [-180, 180]")));
        }
        let source = match t.get(row, "source").unwrap() {
            "std" => FixSource::Std,
            "rtk" => FixSource::Rtk,
            other => return Err(t.err(line, format!("source: `{other}` is not `std` or `rtk`"))),
        };
        out.push(GeoFix {
            node_id,
            lat_deg,
            lon_deg,
            source,
        });
    }
    Ok(out)
}

/// Reads the three CSV files of `dir` without interpreting them.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let nodes = read_nodes(&dir.join(NODES_FILE))?;
    let known: HashSet<&str> = nodes.iter().map(|n| n.node_id.as_str()).collect();
    let rss = read_rss(&dir.join(RSS_FILE), &known)?;
    let gps = read_gps(&dir.join(GPS_FILE), &known)?;
    Ok(Dataset { nodes, rss, gps })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `ds` as the three CSV files of `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));

    let mut w = csv::Writer::from_path(dir.join(NODES_FILE)).map_err(io)?;
    w.write_record(["node_id", "role", "tx_power_dbm"]).map_err(io)?;
    for n in &ds.nodes {
        let role = match n.role {
            Role::Anchor => "anchor",
            Role::Target => "target",
        };
        w.write_record([n.node_id.as_str(), role, &opt_cell(n.tx_power_dbm)])
            .map_err(io)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(RSS_FILE)).map_err(io)?;
    w.write_record(["tx_id", "rx_id", "rssi_dbm", "timestamp"]).map_err(io)?;
    for r in &ds.rss {
        w.write_record([
            r.tx_id.as_str(),
            &r.rx_id,
            &r.rssi_dbm.to_string(),
            &opt_cell(r.timestamp),
        ])
        .map_err(io)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(GPS_FILE)).map_err(io)?;
    w.write_record(["node_id", "lat_deg", "lon_deg", "source"]).map_err(io)?;
    for g in &ds.gps {
        let src = match g.source {
            FixSource::Std => "std",
            FixSource::Rtk => "rtk",
        };
        w.write_record([g.node_id.as_str(), &g.lat_deg.to_string(), &g.lon_deg.to_string(), src])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------- projection

/// Equirectangular projection about `origin`: east, north in metres.
pub fn project(lat_deg: f64, lon_deg: f64, origin: &GeoOrigin) -> Point {
    let lat0 = origin.lat_deg.to_radians();
    Point::new(
        EARTH_RADIUS_M * (lon_deg - origin.lon_deg).to_radians() * lat0.cos(),
        EARTH_RADIUS_M * (lat_deg - origin.lat_deg).to_radians(),
    )
}

/// Largest distance between two projected points.
pub fn site_extent_m(points: &[Point]) -> f64 {
    let mut m: f64 = 0.0;
    for (k, a) in points.iter().enumerate() {
        for b in &points[k + 1..] {
            m = m.max((a - b).norm());
        }
    }
    m
}

/// Local positions of `fixes`; warns when the site is too large for the
/// small-area projection.
pub fn geo_to_local(fixes: &[GeoFix], origin: &GeoOrigin) -> Vec<Point> {
    let pts: Vec<Point> = fixes
        .iter()
        .map(|f| project(f.lat_deg, f.lon_deg, origin))
        .collect();
    let ext = site_extent_m(&pts);
    if ext > MAX_SITE_EXTENT_M {
        log::warn!("site extent {ext:.0} m exceeds {MAX_SITE_EXTENT_M} m; projection error grows");
    }
    pts
}

// ------------------------------------------------------------- derivation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    pub aggregation: Aggregation,
    /// Noise level for links with a single reading when no link has repeats.
    pub sigma_db: Option<f64>,
    /// Anchor uncertainty for anchors with a single fix when no anchor has
    /// repeats.
    pub delta_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub anchors: Vec<Point>,
    pub targets: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub tx_id: String,
    pub rx_id: String,
    pub n_readings: usize,
    pub p_dbm: f64,
    pub sigma_db: f64,
    /// The noise level is the dataset-wide estimate.
    pub pooled: bool,
}

/// An estimation problem derived from a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedDataset {
    pub measurements: MeasurementSet,
    pub adjacency: Adjacency,
    /// Target powers, present when every target declares one.
    pub known: KnownParams,
    pub truth: Option<GroundTruth>,
    pub anchor_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub origin: GeoOrigin,
    pub links: Vec<LinkSummary>,
    pub pooled_sigma_db: f64,
    pub pooled_delta_m: Option<f64>,
    /// Standard fixes minus RTK truth, per fix, for anchors with both.
    pub gps_deviations_m: Vec<Point>,
    pub warnings: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean_point(v: &[Point]) -> Point {
    v.iter().sum::<Point>() / v.len() as f64
}

/// Turns raw records into measurements, anchor fixes and ground truth.
pub fn derive_problem(ds: &Dataset, opts: &LoadOptions) -> Result<LoadedDataset> {
    let mut ids: HashMap<&str, NodeId> = HashMap::new();
    let mut anchor_ids = Vec::new();
    let mut target_ids = Vec::new();
    for n in &ds.nodes {
        let id = match n.role {
            Role::Anchor => {
                anchor_ids.push(n.node_id.clone());
                NodeId::anchor(anchor_ids.len() - 1)
            }
            Role::Target => {
                target_ids.push(n.node_id.clone());
                NodeId::target(target_ids.len() - 1)
            }
        };
        if ids.insert(&n.node_id, id).is_some() {
            return Err(Error::InvalidInput(format!("node `{}` declared twice", n.node_id)));
        }
    }
    if target_ids.is_empty() {
        return Err(Error::InvalidInput("the dataset declares no targets".into()));
    }
    let lookup = |id: &str| {
        ids.get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown node `{id}`")))
    };
    let mut warnings = Vec::new();

    // Readings per directed link.
    let mut raw: BTreeMap<(NodeId, NodeId), Vec<f64>> = BTreeMap::new();
    let mut unused = 0usize;
    for r in &ds.rss {
        let (tx, rx) = (lookup(&r.tx_id)?, lookup(&r.rx_id)?);
        if tx == rx {
            return Err(Error::InvalidInput(format!("node `{}` cannot measure itself", r.tx_id)));
        }
        if tx.kind == crate::NodeKind::Anchor && rx.kind == crate::NodeKind::Target {
            unused += 1;
            continue;
        }
        raw.entry((tx, rx)).or_default().push(r.rssi_dbm);
    }
    if unused > 0 {
        warnings.push(format!(
            "{unused} anchor-to-target readings are outside the model and were not used"
        ));
    }
    if raw.is_empty() {
        return Err(Error::InvalidInput("no usable RSS readings".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for v in raw.values().filter(|v| v.len() >= 2) {
        num += sample_var(v) * (v.len() - 1) as f64;
        den += (v.len() - 1) as f64;
    }
    let pooled_sigma_db = if den > 0.0 && num > 0.0 {
        (num / den).sqrt()
    } else {
        match opts.sigma_db {
            Some(s) if s > 0.0 => s,
            _ => {
                return Err(Error::MissingField {
                    field: "sigma_db".into(),
                    reason: "no link has repeated readings to estimate the noise level".into(),
                })
            }
        }
    };
    let name = |id: NodeId| match id.kind {
        crate::NodeKind::Anchor => anchor_ids[id.index].clone(),
        crate::NodeKind::Target => target_ids[id.index].clone(),
    };
    let mut rss = BTreeMap::new();
    let mut links = Vec::new();
    for (&(tx, rx), v) in &raw {
        let p_dbm = match opts.aggregation {
            Aggregation::Mean => mean(v),
            Aggregation::Median => median(v),
        };
        let s = if v.len() >= 2 { sample_var(v).sqrt() } else { 0.0 };
        let pooled = !(s > 0.0);
        let sigma_db = if pooled { pooled_sigma_db } else { s };
        rss.insert((tx, rx), RssReading { p_dbm, sigma_db });
        links.push(LinkSummary {
            tx_id: name(tx),
            rx_id: name(rx),
            n_readings: v.len(),
            p_dbm,
            sigma_db,
            pooled,
        });
    }
    let n_pooled = links.iter().filter(|l| l.pooled).count();
    if n_pooled > 0 {
        warnings.push(format!(
            "{n_pooled} links without usable repeats use the dataset-wide sigma {pooled_sigma_db:.3} dB"
        ));
    }

    // Fixes.
    if ds.gps.is_empty() {
        return Err(Error::InvalidInput("the dataset has no GPS fixes".into()));
    }
    let origin = GeoOrigin {
        lat_deg: mean(&ds.gps.iter().map(|g| g.lat_deg).collect::<Vec<_>>()),
        lon_deg: mean(&ds.gps.iter().map(|g| g.lon_deg).collect::<Vec<_>>()),
    };
    let local = geo_to_local(&ds.gps, &origin);
    let ext = site_extent_m(&local);
    if ext > MAX_SITE_EXTENT_M {
        warnings.push(format!("site extent {ext:.0} m exceeds the small-area projection range"));
    }
    let mut std_fixes: HashMap<NodeId, Vec<Point>> = HashMap::new();
    let mut rtk_fixes: HashMap<NodeId, Vec<Point>> = HashMap::new();
    for (g, p) in ds.gps.iter().zip(&local) {
        let id = lookup(&g.node_id)?;
        match g.source {
            FixSource::Std => std_fixes.entry(id).or_default().push(*p),
            FixSource::Rtk => rtk_fixes.entry(id).or_default().push(*p),
        }
    }
    let n_a = anchor_ids.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n_a {
        if let Some(v) = std_fixes.get(&NodeId::anchor(i)).filter(|v| v.len() >= 2) {
            let xs: Vec<f64> = v.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = v.iter().map(|p| p.y).collect();
            num += (sample_var(&xs) + sample_var(&ys)) * (v.len() - 1) as f64;
            den += 2.0 * (v.len() - 1) as f64;
        }
    }
    let pooled_delta_m = (den > 0.0 && num > 0.0).then(|| (num / den).sqrt());
    let mut anchor_fixes = Vec::with_capacity(n_a);
    for (i, aid) in anchor_ids.iter().enumerate() {
        let v = std_fixes.get(&NodeId::anchor(i)).ok_or_else(|| {
            Error::InvalidInput(format!("anchor `{aid}` has no standard GPS fix"))
        })?;
        let delta = if v.len() >= 2 {
            let xs: Vec<f64> = v.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = v.iter().map(|p| p.y).collect();
            (0.5 * (sample_var(&xs) + sample_var(&ys))).sqrt()
        } else {
            0.0
        };
        let delta_m = if delta > 0.0 {
            delta
        } else {
            match pooled_delta_m.or(opts.delta_m.filter(|d| *d > 0.0)) {
                Some(d) => d,
                None => {
                    return Err(Error::MissingField {
                        field: "delta_m".into(),
                        reason: format!("anchor `{aid}` has a single fix and no fallback uncertainty"),
                    })
                }
            }
        };
        anchor_fixes.push(AnchorFix {
            position: mean_point(v),
            delta_m,
        });
    }
    let mut gps_deviations_m = Vec::new();
    for i in 0..n_a {
        let id = NodeId::anchor(i);
        if let (Some(s), Some(r)) = (std_fixes.get(&id), rtk_fixes.get(&id)) {
            let truth = mean_point(r);
            gps_deviations_m.extend(s.iter().map(|p| p - truth));
        }
    }
    let truth = {
        let pos = |id: NodeId| rtk_fixes.get(&id).map(|v| mean_point(v));
        let anchors: Option<Vec<Point>> = (0..n_a).map(|i| pos(NodeId::anchor(i))).collect();
        let targets: Option<Vec<Point>> =
            (0..target_ids.len()).map(|j| pos(NodeId::target(j))).collect();
        match (anchors, targets) {
            (Some(anchors), Some(targets)) => Some(GroundTruth { anchors, targets }),
            _ => {
                warnings.push("not every node has an RTK fix; no ground truth".into());
                None
            }
        }
    };

    let power = |role: Role| -> Option<Vec<f64>> {
        ds.nodes
            .iter()
            .filter(|n| n.role == role)
            .map(|n| n.tx_power_dbm)
            .collect()
    };
    let measurements = MeasurementSet {
        n_targets: target_ids.len(),
        rss,
        anchor_fixes,
        anchor_tx_power_dbm: if n_a > 0 { power(Role::Anchor) } else { None },
    };
    let adjacency = measurements.adjacency()?;
    measurements.validate(&adjacency)?;
    for (j, tid) in target_ids.iter().enumerate() {
        if adjacency.target_anchor[j].is_empty() && adjacency.target_target[j].is_empty() {
            warnings.push(format!("target `{tid}` transmits on no link and cannot be located"));
        }
    }
    Ok(LoadedDataset {
        measurements,
        adjacency,
        known: KnownParams {
            tx_power_dbm: power(Role::Target),
            ple: None,
        },
        truth,
        anchor_ids,
        target_ids,
        origin,
        links,
        pooled_sigma_db,
        pooled_delta_m,
        gps_deviations_m,
        warnings,
    })
}

/// [`read_dataset`] followed by [`derive_problem`].
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<(Dataset, LoadedDataset)> {
    let ds = read_dataset(dir)?;
    let loaded = derive_problem(&ds, opts)?;
    Ok((ds, loaded))
}

// ------------------------------------------------------------ calibration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub d_m: f64,
    pub rssi_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub p0_dbm: f64,
    pub ple: f64,
    pub residual_std_db: f64,
    pub n_points: usize,
    pub r_squared: f64,
    /// 95% confidence intervals; absent with only two points per parameter.
    pub p0_ci95: Option<(f64, f64)>,
    pub ple_ci95: Option<(f64, f64)>,
}

/// Ordinary least squares of RSS on `log10(d)`: slope `-10 beta`,
/// intercept the power at 1 m.
pub fn fit_pathloss(points: &[CalibrationPoint]) -> Result<CalibrationFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "a path-loss fit needs at least 3 points, got {n}"
        )));
    }
    for p in points {
        if !(p.d_m > 0.0 && p.d_m.is_finite()) || !p.rssi_dbm.is_finite() {
            return Err(Error::Domain(format!(
                "calibration point ({}, {}) needs a positive distance and finite RSS",
                p.d_m, p.rssi_dbm
            )));
        }
    }
    let x: Vec<f64> = points.iter().map(|p| p.d_m.log10()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.rssi_dbm).collect();
    let (xm, ym) = (mean(&x), mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    if sxx <= 1e-12 * x.iter().map(|v| v * v).sum::<f64>().max(1e-300) {
        return Err(Error::Singular("all calibration distances are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let dof = (n - 2) as f64;
    let s = (ssr / dof).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    let se_slope = s / sxx.sqrt();
    let se_int = s * (1.0 / n as f64 + xm * xm / sxx).sqrt();
    let ple = -slope / 10.0;
    Ok(CalibrationFit {
        p0_dbm: intercept,
        ple,
        residual_std_db: s,
        n_points: n,
        r_squared,
        p0_ci95: Some((intercept - t * se_int, intercept + t * se_int)),
        ple_ci95: Some((ple - t * se_slope / 10.0, ple + t * se_slope / 10.0)),
    })
}

/// Reads `distance_m,rssi_dbm` rows.
pub fn read_calibration_csv(path: &Path) -> Result<Vec<CalibrationPoint>> {
    let t = read_table(path, &["distance_m", "rssi_dbm"], &[])?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let d_m = parse_f64(&t, *line, "distance_m", t.get(row, "distance_m").unwrap())?;
        if d_m <= 0.0 {
            return Err(t.err(*line, format!("distance_m {d_m} must be positive")));
        }
        let rssi_dbm = parse_f64(&t, *line, "rssi_dbm", t.get(row, "rssi_dbm").unwrap())?;
        out.push(CalibrationPoint { d_m, rssi_dbm });
    }
    Ok(out)
}

pub fn write_calibration_csv(points: &[CalibrationPoint], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["distance_m", "rssi_dbm"]).map_err(io)?;
    for p in points {
        w.write_record([p.d_m.to_string(), p.rssi_dbm.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Raw readings transmitted by `tx_id` paired with RTK distances.
pub fn calibration_points(ds: &Dataset, loaded: &LoadedDataset, tx_id: &str) -> Result<Vec<CalibrationPoint>> {
    let truth = loaded.truth.as_ref().ok_or_else(|| Error::MissingField {
        field: "rtk".into(),
        reason: "calibration from a dataset needs RTK fixes for every node".into(),
    })?;
    let pos = |id: &str| -> Option<Point> {
        if let Some(i) = loaded.anchor_ids.iter().position(|a| a == id) {
            return Some(truth.anchors[i]);
        }
        loaded.target_ids.iter().position(|t| t == id).map(|j| truth.targets[j])
    };
    let tx = pos(tx_id).ok_or_else(|| Error::InvalidInput(format!("unknown node `{tx_id}`")))?;
    let pts: Vec<CalibrationPoint> = ds
        .rss
        .iter()
        .filter(|r| r.tx_id == tx_id)
        .filter_map(|r| {
            pos(&r.rx_id).map(|rx| CalibrationPoint {
                d_m: (tx - rx).norm(),
                rssi_dbm: r.rssi_dbm,
            })
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidInput(format!("node `{tx_id}` transmits no readings")));
    }
    Ok(pts)
}

// -------------------------------------------------------------- histogram

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub densities: Vec<f64>,
}

/// Sturges' rule, `ceil(1 + log2 n)`.
pub fn sturges_bins(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    (1.0 + (n as f64).log2()).ceil() as usize
}

/// Empirical density over equal-width bins spanning the data.
pub fn histogram_pdf(values: &[f64], n_bins: Option<usize>) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::InvalidInput("histogram of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("histogram values must be finite".into()));
    }
    let nb = n_bins.unwrap_or_else(|| sturges_bins(values.len()));
    if nb == 0 {
        return Err(Error::InvalidInput("at least one bin is required".into()));
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let w = (hi - lo) / nb as f64;
    let bin_edges: Vec<f64> = (0..=nb).map(|k| lo + w * k as f64).collect();
    let mut counts = vec![0usize; nb];
    for v in values {
        let k = (((v - lo) / w).floor() as usize).min(nb - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let densities = counts.iter().map(|&c| c as f64 / (n * w)).collect();
    Ok(Histogram {
        bin_edges,
        counts,
        densities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn origin_and_unit_offsets() {
        let o = GeoOrigin { lat_deg: 37.5, lon_deg: 127.0 };
        assert_eq!(project(37.5, 127.0, &o), Point::zeros());
        let p = project(37.5 + (1.0 / EARTH_RADIUS_M).to_degrees(), 127.0, &o);
        assert_abs_diff_eq!(p.x, 0.0);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn exact_fit_recovers_parameters() {
        let pts: Vec<_> = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|&d| CalibrationPoint { d_m: d, rssi_dbm: -3.59 - 32.7 * f64::log10(d) })
            .collect();
        let f = fit_pathloss(&pts).unwrap();
        assert_abs_diff_eq!(f.p0_dbm, -3.59, epsilon = 1e-10);
        assert_abs_diff_eq!(f.ple, 3.27, epsilon = 1e-10);
        assert_abs_diff_eq!(f.residual_std_db, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_shift_moves_only_intercept() {
        let pts: Vec<_> = [(1.5, -10.0), (3.0, -22.0), (7.0, -30.5), (12.0, -37.0)]
            .iter()
            .map(|&(d, r)| CalibrationPoint { d_m: d, rssi_dbm: r })
            .collect();
        let shifted: Vec<_> = pts
            .iter()
            .map(|p| CalibrationPoint { rssi_dbm: p.rssi_dbm + 4.0, ..*p })
            .collect();
        let (a, b) = (fit_pathloss(&pts).unwrap(), fit_pathloss(&shifted).unwrap());
        assert_abs_diff_eq!(b.p0_dbm - a.p0_dbm, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(b.ple, a.ple, epsilon = 1e-12);
    }

    #[test]
    fn equal_distances_are_rank_deficient() {
        let pts = vec![CalibrationPoint { d_m: 4.0, rssi_dbm: -20.0 }; 5];
        assert!(matches!(fit_pathloss(&pts), Err(Error::Singular(_))));
        assert!(fit_pathloss(&pts[..2]).is_err());
    }

    #[test]
    fn sturges_counts() {
        assert_eq!(sturges_bins(100), 8);
        assert_eq!(sturges_bins(2), 2);
        let h = histogram_pdf(&(0..100).map(|v| v as f64).collect::<Vec<_>>(), None).unwrap();
        assert_eq!(h.counts.len(), 8);
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
    }

    #[test]
    fn constant_sample_histogram() {
        let h = histogram_pdf(&[2.0; 5], None).unwrap();
        let area: f64 = h
            .densities
            .iter()
            .zip(h.bin_edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum();
        assert_abs_diff_eq!(area, 1.0, epsilon = 1e-12);
        assert!(histogram_pdf(&[], None).is_err());
    }

    #[test]
    fn median_aggregation() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
