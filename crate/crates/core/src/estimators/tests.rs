use super::*;
use crate::sim::{generate_scene, stream, synthesize_measurements, NoiseConfig, SceneConfig};
use crate::NetworkScene;

fn scene(seed: u64) -> NetworkScene {
    generate_scene(&SceneConfig::new(5, 10, seed)).unwrap()
}

fn measure(s: &NetworkScene, sigma_db: f64, delta_m: f64, seed: u64) -> MeasurementSet {
    let noise = NoiseConfig { sigma_db, delta_m, sigma_aa_db: None };
    synthesize_measurements(s, &noise, &mut stream(seed, &[])).unwrap()
}

fn max_error(rep: &EstimateReport, s: &NetworkScene) -> f64 {
    rep.targets
        .iter()
        .zip(&s.targets)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

fn known(s: &NetworkScene) -> KnownParams {
    KnownParams {
        tx_power_dbm: Some(s.target_tx_power_dbm.clone()),
        ple: Some(s.ple),
    }
}

#[test]
fn noiseless_recovery_all_scenarios() {
    let s = scene(11);
    let m = measure(&s, 1e-6, 1e-6, 1);
    for sc in Scenario::ALL {
        let rep = estimate(sc, &m, &s.adjacency, &known(&s), &EstimatorOptions::default()).unwrap();
        let err = max_error(&rep, &s);
        assert!(err < 0.1, "{}: max error {err}, status {:?}", sc.label(), rep.solver.status);
        if let Some(p) = &rep.tx_power_dbm {
            for (e, t) in p.iter().zip(&s.target_tx_power_dbm) {
                assert!((e.unwrap() - t).abs() < 0.05, "{}: power {e:?} vs {t}", sc.label());
            }
        }
        if let Some(b) = rep.ple {
            assert!((b - s.ple).abs() < 1e-3, "{}: ple {b}", sc.label());
        }
    }
}

#[test]
fn relaxed_distances_match_extracted_positions() {
    let s = scene(4);
    let m = measure(&s, 2.0, 1.0, 3);
    let rep = ctup1(&m, &s.adjacency, &s.target_tx_power_dbm, s.ple, &EstimatorOptions::default())
        .unwrap();
    // u >= |t - x|^2 always; equality up to the relaxation gap.
    for d in &rep.distances {
        let rx = match d.rx.kind {
            crate::NodeKind::Anchor => rep.anchors[d.rx.index],
            crate::NodeKind::Target => rep.targets[d.rx.index],
        };
        let geo = (rep.targets[d.tx] - rx).norm();
        assert!(d.d_m + 1e-4 * (1.0 + geo) >= geo, "relaxed {} < extracted {geo}", d.d_m);
    }
    assert!(rep.solver.rank1_ratio >= 0.0);
}

#[test]
fn ple_correction_moves_toward_truth() {
    let s = scene(21);
    let m = measure(&s, 1e-3, 1e-3, 5);
    let rep = ctup2_with_beta0(&m, &s.adjacency, &s.target_tx_power_dbm, 2.9, &EstimatorOptions::default())
        .unwrap();
    let b = rep.ple.unwrap();
    assert!((b - 3.0).abs() < (2.9f64 - 3.0).abs(), "beta {b}");
    assert_eq!(rep.beta0, Some(2.9));
}

#[test]
fn residual_encodings_agree() {
    let s = generate_scene(&SceneConfig::new(4, 3, 8)).unwrap();
    let m = measure(&s, 2.0, 1.0, 2);
    let eq = EstimatorOptions::default();
    let lmi = EstimatorOptions {
        residual_encoding: ResidualEncoding::DiagonalLmi,
        ..Default::default()
    };
    for sc in [Scenario::KnownPowerKnownPle, Scenario::UnknownPowerKnownPle] {
        let a = estimate(sc, &m, &s.adjacency, &known(&s), &eq).unwrap();
        let b = estimate(sc, &m, &s.adjacency, &known(&s), &lmi).unwrap();
        let tol = 1e-4 * (1.0 + a.solver.objective.abs());
        assert!(
            (a.solver.objective - b.solver.objective).abs() < tol,
            "{}: {} vs {}",
            sc.label(),
            a.solver.objective,
            b.solver.objective
        );
    }
}

#[test]
fn missing_parameters_are_reported() {
    let s = scene(2);
    let m = measure(&s, 1.0, 1.0, 1);
    let none = KnownParams::default();
    let opts = EstimatorOptions::default();
    for sc in [Scenario::KnownPowerKnownPle, Scenario::KnownPowerUnknownPle] {
        match estimate(sc, &m, &s.adjacency, &none, &opts) {
            Err(Error::MissingField { field, .. }) => assert_eq!(field, "tx_power_dbm"),
            other => panic!("unexpected {other:?}"),
        }
    }
    match estimate(Scenario::UnknownPowerKnownPle, &m, &s.adjacency, &none, &opts) {
        Err(Error::MissingField { field, .. }) => assert_eq!(field, "ple"),
        other => panic!("unexpected {other:?}"),
    }
    let mut no_aa = m.clone();
    no_aa.anchor_tx_power_dbm = None;
    assert!(matches!(
        estimate(Scenario::UnknownPowerUnknownPle, &no_aa, &s.adjacency, &none, &opts),
        Err(Error::MissingField { .. })
    ));
}

#[test]
fn wrong_power_count_is_rejected() {
    let s = scene(2);
    let m = measure(&s, 1.0, 1.0, 1);
    let err = ctup1(&m, &s.adjacency, &[0.0; 3], 3.0, &EstimatorOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
    let err = ctup1(&m, &s.adjacency, &s.target_tx_power_dbm, -1.0, &EstimatorOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::Domain(_)));
}

#[test]
fn large_correction_warns() {
    let s = scene(21);
    let m = measure(&s, 1e-3, 1e-3, 5);
    let mut rep = ctup2_with_beta0(&m, &s.adjacency, &s.target_tx_power_dbm, 2.9, &EstimatorOptions::default())
        .unwrap();
    assert!(!rep.warnings.iter().any(|w| w.contains("exponent correction")));
    epsilon_warning(&mut rep, -0.4);
    assert!(rep.warnings.iter().any(|w| w.contains("exponent correction")));
}
