//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rssloc::sim::{generate_scene, stream, synthesize_measurements, NoiseConfig, SceneConfig};
use rssloc::{MeasurementSet, NetworkScene};

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd(s, b - (s - a))
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        let (t, f) = two_sum(self.1, o.1);
        let d = quick_two_sum(s, e + t);
        quick_two_sum(d.0, d.1 + f)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd(-o.0, -o.1))
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        quick_two_sum(p, e + (self.0 * o.1 + self.1 * o.0))
    }

    pub fn lt(self, o: Dd) -> bool {
        let d = self.sub(o);
        d.0 < 0.0 || (d.0 == 0.0 && d.1 < 0.0)
    }
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> Dd, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..400 {
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
        if fa.lt(fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

pub fn nw1(seed: u64) -> NetworkScene {
    generate_scene(&SceneConfig::new(5, 10, seed)).unwrap()
}

pub fn measure(scene: &NetworkScene, sigma_db: f64, delta_m: f64, seed: u64) -> MeasurementSet {
    let noise = NoiseConfig { sigma_db, delta_m, sigma_aa_db: None };
    synthesize_measurements(scene, &noise, &mut stream(seed, &[])).unwrap()
}

/// No three anchors within `tol` of a common line.
pub fn anchors_generic(scene: &NetworkScene, tol: f64) -> bool {
    let a = &scene.anchors;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            for k in j + 1..a.len() {
                let (u, v) = (a[j] - a[i], a[k] - a[i]);
                let area = (u.x * v.y - u.y * v.x).abs();
                let base = u.norm().max(v.norm()).max((a[k] - a[j]).norm());
                if area / base < tol {
                    return false;
                }
            }
        }
    }
    true
}

pub fn rmse(est: &[rssloc::Point], truth: &[rssloc::Point]) -> f64 {
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    (s / est.len() as f64).sqrt()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Anchor-only instance with `n_links` anchor-anchor readings drawn around
/// the path-loss model. Returns the measurements, the neighbour sets and the
/// `(weight, 10 log10 d, P_tx - P_rx)` rows of the exponent fit.
pub fn beta0_instance(
    seed: u64,
    n_links: usize,
) -> (MeasurementSet, rssloc::Adjacency, Vec<(f64, f64, f64)>) {
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rssloc::{AnchorFix, NodeId, Point, RssReading};

    let mut rng = stream(seed, &[77]);
    let na = 8;
    let fixes: Vec<Point> = (0..na)
        .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
        .collect();
    let powers: Vec<f64> = (0..na).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let ple = rng.gen_range(2.0..4.0);
    let mut pairs: Vec<(usize, usize)> =
        (0..na).flat_map(|j| (0..na).filter(move |&i| i != j).map(move |i| (j, i))).collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(n_links);

    let mut adj = rssloc::Adjacency {
        target_anchor: vec![],
        target_target: vec![],
        anchor_anchor: vec![Vec::new(); na],
    };
    let mut rss = std::collections::BTreeMap::new();
    let mut rows = Vec::new();
    for (j, i) in pairs {
        let d = (fixes[j] - fixes[i]).norm().max(1.5);
        let sigma: f64 = rng.gen_range(0.5..6.0);
        let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
        let p = powers[j] - 10.0 * ple * d.log10() + noise;
        adj.anchor_anchor[j].push(i);
        rss.insert((NodeId::anchor(j), NodeId::anchor(i)), RssReading { p_dbm: p, sigma_db: sigma });
        let dist = (fixes[j] - fixes[i]).norm();
        rows.push((1.0 / (sigma * sigma), 10.0 * dist.log10(), powers[j] - p));
    }
    let meas = MeasurementSet {
        n_targets: 0,
        rss,
        anchor_fixes: fixes.iter().map(|&position| AnchorFix { position, delta_m: 1.0 }).collect(),
        anchor_tx_power_dbm: Some(powers),
    };
    (meas, adj, rows)
}

/// Weighted squared misfit `sum w (q - beta phi)^2` in double-double.
pub fn slope_objective(rows: &[(f64, f64, f64)], beta: f64) -> Dd {
    let b = Dd::from(beta);
    rows.iter().fold(Dd::from(0.0), |acc, &(w, phi, q)| {
        let r = Dd::from(q).sub(b.mul(Dd::from(phi)));
        acc.add(Dd::from(w).mul(r.mul(r)))
    })
}

/// Malformed variants of a valid dataset directory: `(name, file, contents)`.
/// `None` contents delete the file.
pub fn malformed_corpus() -> Vec<(&'static str, &'static str, Option<Vec<u8>>)> {
    let nodes_h = "node_id,role,tx_power_dbm\n";
    let nodes_ok = "A1,anchor,-3\nA2,anchor,-3\nA3,anchor,-3\nT1,target,-3\n";
    let rss_h = "tx_id,rx_id,rssi_dbm,timestamp\n";
    let gps_h = "node_id,lat_deg,lon_deg,source\n";
    let b = |s: String| Some(s.into_bytes());
    let mut bad_utf8 = format!("{rss_h}T1,A1,-50,0\n").into_bytes();
    bad_utf8.extend_from_slice(&[b'T', b'1', b',', b'A', 0xff, 0xfe, b',', b'1', b'\n']);
    vec![
        ("empty nodes file", "nodes.csv", b(String::new())),
        ("empty rss file", "rss.csv", b(String::new())),
        ("rss header only", "rss.csv", b(rss_h.into())),
        ("nodes header only", "nodes.csv", b(nodes_h.into())),
        ("missing gps column", "gps.csv", b("node_id,lat_deg,lon_deg\nA1,36.1,127.1\n".into())),
        ("unexpected nodes column", "nodes.csv", b("node_id,role,tx_power_dbm,color\nA1,anchor,-3,red\n".into())),
        ("duplicate rss column", "rss.csv", b("tx_id,rx_id,rssi_dbm,rssi_dbm\nT1,A1,-50,-50\n".into())),
        ("non-numeric rssi", "rss.csv", b(format!("{rss_h}T1,A1,strong,0\n"))),
        ("nan rssi", "rss.csv", b(format!("{rss_h}T1,A1,NaN,0\n"))),
        ("infinite rssi", "rss.csv", b(format!("{rss_h}T1,A1,-inf,0\n"))),
        ("unknown rss node", "rss.csv", b(format!("{rss_h}T9,A1,-50,0\n"))),
        ("self link", "rss.csv", b(format!("{rss_h}T1,T1,-50,0\n"))),
        ("short rss row", "rss.csv", b(format!("{rss_h}T1,A1,-50,0\nT1,A2\n"))),
        ("decimal comma", "rss.csv", b(format!("{rss_h}T1,A1,-50,5,0\n"))),
        ("bad timestamp", "rss.csv", b(format!("{rss_h}T1,A1,-50,noon\n"))),
        ("latitude out of range", "gps.csv", b(format!("{gps_h}A1,91.0,127.1,std\n"))),
        ("longitude out of range", "gps.csv", b(format!("{gps_h}A1,36.1,-181.0,rtk\n"))),
        ("bad fix source", "gps.csv", b(format!("{gps_h}A1,36.1,127.1,glonass\n"))),
        ("unknown gps node", "gps.csv", b(format!("{gps_h}Z1,36.1,127.1,std\n"))),
        ("bad role", "nodes.csv", b(format!("{nodes_h}A1,beacon,-3\n"))),
        ("duplicate node", "nodes.csv", b(format!("{nodes_h}{nodes_ok}A1,anchor,-3\n"))),
        ("bad power", "nodes.csv", b(format!("{nodes_h}A1,anchor,loud\n"))),
        ("empty node id", "nodes.csv", b(format!("{nodes_h},anchor,-3\n"))),
        ("invalid utf-8", "rss.csv", Some(bad_utf8)),
        ("unterminated quote", "rss.csv", b(format!("{rss_h}\"T1,A1,-50,0\n"))),
        ("no targets", "nodes.csv", b(format!("{nodes_h}A1,anchor,-3\nA2,anchor,-3\n"))),
        ("no gps fixes", "gps.csv", b(gps_h.into())),
        ("missing gps file", "gps.csv", None),
        ("binary garbage", "nodes.csv", Some(vec![0, 159, 146, 150, 0, 1, 2])),
    ]
}

/// A small valid dataset matching the node ids used by [`malformed_corpus`].
pub fn tiny_dataset() -> rssloc::dataio::Dataset {
    use rssloc::dataio::{Dataset, FixSource, GeoFix, NodeRecord, Role, RssLogRecord};
    let nodes = [("A1", Role::Anchor), ("A2", Role::Anchor), ("A3", Role::Anchor), ("T1", Role::Target)];
    let pos = [(0.0, 0.0), (0.0004, 0.0), (0.0, 0.0005), (0.0002, 0.0002)];
    let mut ds = Dataset::default();
    for (id, role) in nodes {
        ds.nodes.push(NodeRecord { node_id: id.into(), role, tx_power_dbm: Some(-3.0) });
    }
    for (k, (a, _)) in nodes.iter().enumerate() {
        ds.gps.push(GeoFix { node_id: (*a).into(), lat_deg: 36.0 + pos[k].0, lon_deg: 127.0 + pos[k].1, source: FixSource::Rtk });
        if k < 3 {
            for e in [-1e-5, 1e-5] {
                ds.gps.push(GeoFix { node_id: (*a).into(), lat_deg: 36.0 + pos[k].0 + e, lon_deg: 127.0 + pos[k].1, source: FixSource::Std });
            }
        }
    }
    let mut t = 0.0;
    for (tx, rx, p) in [("T1", "A1", -60.0), ("T1", "A2", -62.0), ("T1", "A3", -61.0), ("A1", "A2", -70.0), ("A2", "A3", -71.0)] {
        for dp in [-1.0, 0.5, 0.5] {
            ds.rss.push(RssLogRecord { tx_id: tx.into(), rx_id: rx.into(), rssi_dbm: p + dp, timestamp: Some(t) });
            t += 1.0;
        }
    }
    ds
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}
