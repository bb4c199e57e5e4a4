use rssloc::model::pathloss_forward;
use rssloc::sim::{
    generate_scene, run_sweep, stream, synthesize_measurements, AxisName, NoiseConfig, SceneConfig,
    SceneSource, SweepAxis, SweepResult, SweepSpec, SWEEP_CSV_HEADER,
};
use rssloc::{NodeId, Scenario};

fn spec(scene: SceneSource, axis: SweepAxis, trials: usize, estimators: &[&str]) -> SweepSpec {
    SweepSpec {
        scene,
        axis,
        sigma_db: 1.0,
        delta_m: 1.0,
        sigma_aa_db: None,
        trials,
        estimators: estimators.iter().map(|s| s.to_string()).collect(),
        seed: 99,
        redraw_scene: false,
        options: Default::default(),
    }
}

fn nw1() -> SceneSource {
    SceneSource::Generate(SceneConfig::new(5, 10, 1))
}

fn sigma_axis(values: &[f64]) -> SweepAxis {
    SweepAxis { name: AxisName::SigmaDb, values: values.to_vec() }
}

fn strip_times(r: &SweepResult) -> SweepResult {
    let mut r = r.clone();
    r.rows.iter_mut().for_each(|row| row.mean_solve_time_s = 0.0);
    r
}

#[test]
fn same_spec_gives_the_same_result() {
    let s = spec(nw1(), sigma_axis(&[1.0, 4.0]), 3, &["ctup1", "ctup3"]);
    let a = run_sweep(&s).unwrap();
    let b = run_sweep(&s).unwrap();
    assert_eq!(strip_times(&a), strip_times(&b));
    let mut other = s.clone();
    other.seed += 1;
    let c = run_sweep(&other).unwrap();
    assert_ne!(a.rows[0].nrmse_t_m, c.rows[0].nrmse_t_m);
}

#[test]
fn zero_noise_reproduces_the_forward_model() {
    let scene = generate_scene(&SceneConfig::new(4, 3, 5)).unwrap();
    let noise = NoiseConfig { sigma_db: 0.0, delta_m: 0.0, sigma_aa_db: None };
    let m = synthesize_measurements(&scene, &noise, &mut stream(1, &[])).unwrap();
    for l in scene.adjacency.links() {
        let d = (scene.targets[l.tx] - scene.position(l.rx)).norm();
        let want = pathloss_forward(scene.target_tx_power_dbm[l.tx], scene.ple, d, 1.0).unwrap();
        assert_eq!(m.link_reading(&l).unwrap().p_dbm, want);
    }
    for (j, i) in scene.adjacency.anchor_links() {
        let d = (scene.anchors[j] - scene.anchors[i]).norm();
        let want = pathloss_forward(scene.anchor_tx_power_dbm[j], scene.ple, d, 1.0).unwrap();
        assert_eq!(m.reading(NodeId::anchor(j), NodeId::anchor(i)).unwrap().p_dbm, want);
    }
    for (f, a) in m.anchor_fixes.iter().zip(&scene.anchors) {
        assert_eq!(f.position, *a);
    }
}

#[test]
fn reading_spread_matches_sigma() {
    let scene = generate_scene(&SceneConfig::new(1, 1, 2)).unwrap();
    let noise = NoiseConfig { sigma_db: 2.47, delta_m: 1.53, sigma_aa_db: None };
    let mut rng = stream(7, &[]);
    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    let (mut f1, mut f2) = (0.0, 0.0);
    let link = scene.adjacency.links()[0];
    for _ in 0..n {
        let m = synthesize_measurements(&scene, &noise, &mut rng).unwrap();
        let p = m.link_reading(&link).unwrap().p_dbm;
        s1 += p;
        s2 += p * p;
        let dx = m.anchor_fixes[0].position.x - scene.anchors[0].x;
        f1 += dx;
        f2 += dx * dx;
    }
    let n = n as f64;
    let std = ((s2 - s1 * s1 / n) / (n - 1.0)).sqrt();
    let fix_std = ((f2 - f1 * f1 / n) / (n - 1.0)).sqrt();
    assert!((std / 2.47 - 1.0).abs() < 0.02, "{std}");
    assert!((fix_std / 1.53 - 1.0).abs() < 0.02, "{fix_std}");
}

#[test]
fn failures_are_counted_not_fatal() {
    // One anchor: no anchor-anchor links, so the exponent initializer fails.
    let scene = generate_scene(&SceneConfig::new(1, 3, 4)).unwrap();
    let s = spec(SceneSource::Inline(scene), sigma_axis(&[1.0]), 4, &["ctup1", "ctup2"]);
    let r = run_sweep(&s).unwrap();
    for row in &r.rows {
        let ok = row.trial_mse_t.iter().filter(|v| v.is_some()).count();
        assert_eq!(row.trial_mse_t.len(), s.trials);
        assert_eq!(row.failures + ok, s.trials);
    }
    assert_eq!(r.rows[0].failures, 0);
    assert!(r.rows[0].nrmse_t_m.is_some());
    assert_eq!(r.rows[1].failures, 4);
    assert_eq!(r.rows[1].nrmse_t_m, None);
}

#[test]
fn csv_has_the_named_columns_and_round_trips() {
    let s = spec(nw1(), sigma_axis(&[2.0]), 2, &["ctup1", "ctup4"]);
    let r = run_sweep(&s).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, SWEEP_CSV_HEADER);
    let parse = |s: &str| -> Option<f64> { (!s.is_empty()).then(|| s.parse().unwrap()) };
    for (rec, row) in rd.records().zip(&r.rows) {
        let rec = rec.unwrap();
        assert_eq!(rec[0].parse::<f64>().unwrap(), row.axis_value);
        assert_eq!(&rec[1], row.estimator);
        assert_eq!(parse(&rec[2]), row.nrmse_t_m);
        assert_eq!(parse(&rec[3]), row.nrmse_p_dbm);
        assert_eq!(parse(&rec[4]), row.nrmse_beta);
        assert_eq!(parse(&rec[5]), row.crlb_t_m);
        assert_eq!(parse(&rec[6]), row.crlb_p_dbm);
        assert_eq!(parse(&rec[7]), row.crlb_beta);
        assert_eq!(rec[8].parse::<f64>().unwrap(), row.mean_solve_time_s);
        assert_eq!(rec[9].parse::<usize>().unwrap(), row.failures);
    }
    let json = serde_json::to_string(&r).unwrap();
    let back: SweepResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}

#[test]
fn ctup1_sits_between_one_and_five_bounds() {
    let s = spec(nw1(), sigma_axis(&[1.0]), 100, &["ctup1"]);
    let r = run_sweep(&s).unwrap();
    let row = &r.rows[0];
    let (e, b) = (row.nrmse_t_m.unwrap(), row.crlb_t_m.unwrap());
    println!("nrmse {e} crlb {b}");
    assert_eq!(row.failures, 0);
    assert!(e >= b && e <= 5.0 * b, "nrmse {e}, bound {b}");
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(nw1(), sigma_axis(&[1.0]), 0, &["ctup1"]);
    assert!(run_sweep(&s).is_err());
    s.trials = 1;
    s.estimators = vec!["ctup9".into()];
    assert!(run_sweep(&s).is_err());
    s.estimators = vec![Scenario::KnownPowerKnownPle.label().into()];
    s.axis = sigma_axis(&[-1.0]);
    assert!(run_sweep(&s).is_err());
    let scene = generate_scene(&SceneConfig::new(3, 2, 0)).unwrap();
    s.scene = SceneSource::Inline(scene);
    s.axis = SweepAxis { name: AxisName::NAnchors, values: vec![4.0] };
    assert!(run_sweep(&s).is_err());
}
