//! Writes the bundled synthetic field sample.
//!
//! Usage: `cargo run --example make_sample_data -- <dir>`
//!
//! The sample mimics a small outdoor BLE deployment: twelve nodes over a
//! 640 m x 180 m site, a common transmit power of -3.59 dBm, exponent 3.27,
//! 2.47 dB shadowing, 50 readings per link and 100 standard GPS fixes per
//! anchor. The first anchor's GPS deviations are standardized to a mean of
//! (-0.11, 0.29) m (north, east) and a standard deviation of 1.53 m.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use rssloc::dataio::{
    save_dataset, write_calibration_csv, CalibrationPoint, Dataset, FixSource, GeoFix,
    NodeRecord, Role, RssLogRecord, EARTH_RADIUS_M,
};
use rssloc::model::pathloss_forward;
use rssloc::sim::stream;

const P0: f64 = -3.59;
const PLE: f64 = 3.27;
const SIGMA: f64 = 2.47;
const DELTA: f64 = 1.53;
const LAT0: f64 = 36.3725;
const LON0: f64 = 127.3620;

fn to_geo(east: f64, north: f64) -> (f64, f64) {
    let lat = LAT0 + (north / EARTH_RADIUS_M).to_degrees();
    let lon = LON0 + (east / (EARTH_RADIUS_M * LAT0.to_radians().cos())).to_degrees();
    (lat, lon)
}

fn standardize(v: &mut [f64], mean: f64, std: f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for x in v.iter_mut() {
        *x = mean + (*x - m) * std / s;
    }
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let mut rng = stream(20240917, &[]);
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let anchors = [(20.0, 20.0), (620.0, 25.0), (320.0, 160.0), (40.0, 165.0), (600.0, 170.0)];
    let targets = [
        (120.0, 60.0),
        (210.0, 130.0),
        (300.0, 40.0),
        (390.0, 110.0),
        (470.0, 55.0),
        (540.0, 120.0),
        (160.0, 20.0),
    ];
    let mut ds = Dataset::default();
    let mut pos: Vec<(String, f64, f64)> = Vec::new();
    for (k, &(e, n)) in anchors.iter().enumerate() {
        let id = format!("A{}", k + 1);
        ds.nodes.push(NodeRecord { node_id: id.clone(), role: Role::Anchor, tx_power_dbm: Some(P0) });
        pos.push((id, e, n));
    }
    for (k, &(e, n)) in targets.iter().enumerate() {
        let id = format!("T{}", k + 1);
        ds.nodes.push(NodeRecord { node_id: id.clone(), role: Role::Target, tx_power_dbm: Some(P0) });
        pos.push((id, e, n));
    }

    let mut t = 0.0;
    for (tx, te, tn) in &pos {
        for (rx, re, rn) in &pos {
            // Anchors only transmit to anchors.
            if tx == rx || (tx.starts_with('A') && rx.starts_with('T')) {
                continue;
            }
            let d = ((te - re).powi(2) + (tn - rn).powi(2)).sqrt();
            let mean = pathloss_forward(P0, PLE, d, 1.0).unwrap();
            for _ in 0..50 {
                let p = mean + SIGMA * gauss(&mut rng);
                ds.rss.push(RssLogRecord {
                    tx_id: tx.clone(),
                    rx_id: rx.clone(),
                    rssi_dbm: (p * 100.0).round() / 100.0,
                    timestamp: Some(t),
                });
                t += 0.5;
            }
        }
    }

    for (k, (id, e, n)) in pos.iter().enumerate() {
        let (lat, lon) = to_geo(*e, *n);
        ds.gps.push(GeoFix { node_id: id.clone(), lat_deg: lat, lon_deg: lon, source: FixSource::Rtk });
        if k >= anchors.len() {
            continue;
        }
        let mut de: Vec<f64> = (0..100).map(|_| DELTA * gauss(&mut rng)).collect();
        let mut dn: Vec<f64> = (0..100).map(|_| DELTA * gauss(&mut rng)).collect();
        if k == 0 {
            standardize(&mut dn, -0.11, DELTA);
            standardize(&mut de, 0.29, DELTA);
        }
        for (x, y) in de.iter().zip(&dn) {
            let (lat, lon) = to_geo(e + x, n + y);
            ds.gps.push(GeoFix { node_id: id.clone(), lat_deg: lat, lon_deg: lon, source: FixSource::Std });
        }
    }
    save_dataset(&ds, &dir.join("field_sample")).unwrap();

    let mut cal = Vec::new();
    for d in [10.0, 25.0, 50.0, 86.23, 120.0, 200.0, 300.0, 450.0] {
        let mean = pathloss_forward(P0, PLE, d, 1.0).unwrap();
        for _ in 0..50 {
            let p = mean + SIGMA * gauss(&mut rng);
            cal.push(CalibrationPoint { d_m: d, rssi_dbm: (p * 100.0).round() / 100.0 });
        }
    }
    write_calibration_csv(&cal, &dir.join("calibration_sample.csv")).unwrap();
    println!("wrote {}", dir.display());
}
