//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{
    beta0_instance, data_dir, golden_section, malformed_corpus, measure, median, nw1, slope_objective,
    tiny_dataset, Dd,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rssloc::crlb::{crlb, fisher_information_uniform};
use rssloc::dataio::{fit_pathloss, load_dataset, read_dataset, save_dataset, CalibrationPoint, LoadOptions};
use rssloc::estimators::{estimate, estimate_beta0, refine_ple, refine_power, EstimatorOptions, KnownParams, LinkObservation};
use rssloc::model::loglikelihood;
use rssloc::sim::{
    generate_scene, run_sweep, stream, synthesize_measurements, AxisName, NoiseConfig, SceneConfig,
    SceneSource, SweepAxis, SweepResult, SweepSpec,
};
use rssloc::{NetworkScene, Scenario, Theta};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn known(s: &NetworkScene) -> KnownParams {
    KnownParams { tx_power_dbm: Some(s.target_tx_power_dbm.clone()), ple: Some(s.ple) }
}

fn noiseless_recovery() -> Outcome {
    let opts = EstimatorOptions::default();
    let (mut worst, mut slowest) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let s = nw1(seed);
        let m = measure(&s, 1e-6, 1e-6, seed);
        for sc in Scenario::ALL {
            let start = Instant::now();
            let r = estimate(sc, &m, &s.adjacency, &known(&s), &opts).map_err(|e| format!("seed {seed} {}: {e}", sc.label()))?;
            slowest = slowest.max(start.elapsed().as_secs_f64());
            for (e, t) in r.targets.iter().zip(&s.targets) {
                worst = worst.max((e - t).norm());
            }
        }
    }
    check(worst < 0.1 && slowest < 30.0, format!("max error {worst:.2e} m, slowest estimate {slowest:.2} s"))
}

fn beta0_oracle() -> Outcome {
    let mut rng = stream(31, &[]);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = rng.gen_range(1..=50);
        let (m, adj, rows) = beta0_instance(1000 + k, n);
        let b = estimate_beta0(&m, &adj).map_err(|e| e.to_string())?;
        let oracle = golden_section(|x| slope_objective(&rows, x), -20.0, 30.0);
        worst = worst.max((b - oracle).abs());
    }
    check(worst < 1e-9, format!("max |delta beta| {worst:.2e} over 100 instances"))
}

fn refinement_oracle() -> Outcome {
    let mut rng = stream(32, &[]);
    let (mut wp, mut wb) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=30);
        let ple: f64 = rng.gen_range(2.0..4.0);
        let p_tx: f64 = rng.gen_range(-10.0..10.0);
        let obs: Vec<LinkObservation> = (0..n)
            .map(|_| {
                let d: f64 = rng.gen_range(2.0..150.0);
                let sigma: f64 = rng.gen_range(0.5..6.0);
                let e: f64 = rng.sample(StandardNormal);
                LinkObservation { p_rx_dbm: p_tx - 10.0 * ple * d.log10() + sigma * e, sigma_db: sigma, d_m: d }
            })
            .collect();
        let misfit = |p: f64, b: f64| -> Dd {
            obs.iter().fold(Dd::from(0.0), |acc, o| {
                let mean = Dd::from(p).sub(Dd::from(b).mul(Dd::from(10.0 * o.d_m.log10())));
                let r = Dd::from(o.p_rx_dbm).sub(mean);
                acc.add(Dd::from(1.0 / (o.sigma_db * o.sigma_db)).mul(r.mul(r)))
            })
        };
        let p = refine_power(&obs, ple).map_err(|e| e.to_string())?;
        let p_oracle = golden_section(|x| misfit(x, ple), -100.0, 100.0);
        wp = wp.max((p - p_oracle).abs());
        let pairs: Vec<(f64, LinkObservation)> = obs.iter().map(|&o| (p_tx, o)).collect();
        let b = refine_ple(&pairs).map_err(|e| e.to_string())?;
        let b_oracle = golden_section(|x| misfit(p_tx, x), -20.0, 30.0);
        wb = wb.max((b - b_oracle).abs());
    }
    check(wp < 1e-8 && wb < 1e-8, format!("max |delta p| {wp:.2e}, max |delta beta| {wb:.2e}"))
}

fn fim_oracle() -> Outcome {
    let start = Instant::now();
    let scene = generate_scene(&SceneConfig::new(3, 1, 17)).map_err(|e| e.to_string())?;
    let noise = NoiseConfig { sigma_db: 2.0, delta_m: 1.5, sigma_aa_db: None };
    let theta = scene.theta();
    let base = theta.to_vector();
    let (na, nt) = (scene.n_anchors(), scene.n_targets());
    let dim = base.len();
    let samples = 100_000;
    let mut rng = stream(33, &[]);
    let mut outer = DMatrix::<f64>::zeros(dim, dim);
    for _ in 0..samples {
        let m = synthesize_measurements(&scene, &noise, &mut rng).map_err(|e| e.to_string())?;
        let mut score = nalgebra::DVector::zeros(dim);
        for k in 0..dim {
            let h = 1e-5 * base[k].abs().max(1.0);
            let mut up = base.clone();
            up[k] += h;
            let mut dn = base.clone();
            dn[k] -= h;
            let f = |v: &nalgebra::DVector<f64>| loglikelihood(&Theta::from_vector(v, na, nt).unwrap(), &m, &scene.adjacency).unwrap();
            score[k] = (f(&up) - f(&dn)) / (2.0 * h);
        }
        outer += &score * score.transpose();
    }
    outer /= samples as f64;
    let mut worst = 0.0f64;
    for sc in Scenario::ALL {
        let fim = fisher_information_uniform(&theta, &scene.adjacency, noise.sigma_db, Some(noise.delta_m), sc)
            .map_err(|e| e.to_string())?;
        let keep = fim.layout.full_indices();
        let mc = DMatrix::from_fn(keep.len(), keep.len(), |a, b| outer[(keep[a], keep[b])]);
        worst = worst.max((&mc - &fim.matrix).norm() / fim.matrix.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 0.05 && secs < 300.0, format!("max relative Frobenius error {worst:.4}, {secs:.1} s"))
}

fn crlb_properties() -> Outcome {
    let not_above = |a: f64, b: f64| a <= b * (1.0 + 1e-9);
    let bound = |s: &NetworkScene, sc: Scenario, sigma: f64, delta: Option<f64>| -> Result<rssloc::crlb::CrlbReport, String> {
        let fim = fisher_information_uniform(&s.theta(), &s.adjacency, sigma, delta, sc).map_err(|e| e.to_string())?;
        crlb(&fim).map_err(|e| e.to_string())
    };
    let mut worst_scale = 0.0f64;
    for seed in 0..20 {
        let s = nw1(100 + seed);
        let c: Vec<f64> = Scenario::ALL
            .iter()
            .map(|&sc| bound(&s, sc, 2.0, Some(1.0)).map(|r| r.crlb_t_m))
            .collect::<Result<_, _>>()?;
        if !(not_above(c[0], c[1]) && not_above(c[0], c[2]) && not_above(c[1], c[3]) && not_above(c[2], c[3])) {
            return Err(format!("scene {seed}: nesting violated {c:?}"));
        }
        let mut fewer = s.clone();
        fewer.adjacency.target_target[(seed as usize) % 10].remove(0);
        for sc in Scenario::ALL {
            let (a, b) = (bound(&s, sc, 2.0, Some(1.0))?, bound(&fewer, sc, 2.0, Some(1.0))?);
            let per_target = a.per_target_var_m2.iter().zip(&b.per_target_var_m2).all(|(x, y)| not_above(*x, *y));
            if !not_above(a.crlb_t_m, b.crlb_t_m) || !per_target {
                return Err(format!("scene {seed} {}: removing a link tightened the bound", sc.label()));
            }
            for delta in [Some(1.0), None] {
                let a = bound(&s, sc, 2.0, delta)?.crlb_t_m;
                let b = bound(&s, sc, 6.0, delta.map(|d| 3.0 * d))?.crlb_t_m;
                worst_scale = worst_scale.max((b / (3.0 * a) - 1.0).abs());
            }
        }
    }
    check(worst_scale < 1e-8, format!("nesting and link monotonicity hold; scaling error {worst_scale:.1e}"))
}

fn sweep(scene: SceneSource, axis: SweepAxis, sigma: f64, delta: f64, trials: usize, est: &str, seed: u64) -> SweepSpec {
    SweepSpec {
        scene,
        axis,
        sigma_db: sigma,
        delta_m: delta,
        sigma_aa_db: None,
        trials,
        estimators: vec![est.into()],
        seed,
        redraw_scene: false,
        options: EstimatorOptions::default(),
    }
}

fn sigma_surrogate() -> Outcome {
    let start = Instant::now();
    let spec = sweep(
        SceneSource::Generate(SceneConfig::new(5, 10, 1)),
        SweepAxis { name: AxisName::SigmaDb, values: vec![1.0, 3.0, 6.0] },
        1.0,
        3.0,
        100,
        "ctup1",
        2024,
    );
    let r = run_sweep(&spec).map_err(|e| e.to_string())?;
    let e: Vec<f64> = r.rows.iter().map(|row| row.nrmse_t_m.unwrap_or(f64::NAN)).collect();
    let b = r.rows[0].crlb_t_m.unwrap_or(f64::NAN);
    let ratio = e[0] / b;
    let secs = start.elapsed().as_secs_f64();
    check(
        e[0] <= e[1] && e[1] <= e[2] && (1.0..=5.0).contains(&ratio) && secs < 7200.0,
        format!("NRMSE_t {e:.3?} m, ratio to bound at 1 dB {ratio:.2}, {secs:.0} s"),
    )
}

fn anchor_surrogate() -> Outcome {
    let mut spec = sweep(
        SceneSource::Generate(SceneConfig::new(10, 10, 7)),
        SweepAxis { name: AxisName::NAnchors, values: vec![10.0, 20.0] },
        3.0,
        1.0,
        50,
        "ctup4",
        2026,
    );
    spec.redraw_scene = true;
    let r = run_sweep(&spec).map_err(|e| e.to_string())?;
    let med = |k: usize| {
        let mut v: Vec<f64> = r.rows[k].trial_mse_t.iter().flatten().map(|x| x.sqrt()).collect();
        median(&mut v)
    };
    let (m10, m20) = (med(0), med(1));
    check(m20 <= m10, format!("median NRMSE_t {m10:.3} m at 10 anchors, {m20:.3} m at 20"))
}

fn calibration_reproduction() -> Outcome {
    let mut rng = stream(34, &[]);
    let distances = [10.0, 25.0, 50.0, 86.23, 120.0, 200.0, 300.0, 450.0];
    let mut hits = 0;
    for _ in 0..200 {
        let mut pts = Vec::with_capacity(distances.len() * 500);
        for &d in &distances {
            for _ in 0..500 {
                let e: f64 = rng.sample(StandardNormal);
                pts.push(CalibrationPoint { d_m: d, rssi_dbm: -3.59 - 32.7 * f64::log10(d) + 2.47 * e });
            }
        }
        let fit = fit_pathloss(&pts).map_err(|e| e.to_string())?;
        if (fit.ple - 3.27).abs() <= 0.15 {
            hits += 1;
        }
    }
    check(hits >= 190, format!("{hits}/200 fits within 0.15 of the exponent"))
}

fn round_trips() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = read_dataset(&data_dir().join("field_sample")).map_err(|e| e.to_string())?;
    save_dataset(&ds, tmp.path()).map_err(|e| e.to_string())?;
    if read_dataset(tmp.path()).map_err(|e| e.to_string())? != ds {
        return Err("dataset changed on save/load".into());
    }
    let spec = sweep(
        SceneSource::Generate(SceneConfig::new(5, 10, 1)),
        SweepAxis { name: AxisName::SigmaDb, values: vec![2.0] },
        1.0,
        1.0,
        2,
        "ctup4",
        5,
    );
    let r = run_sweep(&spec).map_err(|e| e.to_string())?;
    let back: SweepResult = serde_json::from_str(&serde_json::to_string(&r).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    if back != r {
        return Err("sweep result changed on JSON round trip".into());
    }
    let corpus = malformed_corpus();
    let mut diagnosed = 0;
    for (name, file, contents) in &corpus {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        save_dataset(&tiny_dataset(), dir.path()).map_err(|e| e.to_string())?;
        let path = dir.path().join(file);
        match contents {
            Some(c) => fs::write(&path, c).map_err(|e| e.to_string())?,
            None => fs::remove_file(&path).map_err(|e| e.to_string())?,
        }
        match std::panic::catch_unwind(|| load_dataset(dir.path(), &LoadOptions::default())) {
            Ok(Err(e)) if !e.to_string().is_empty() => diagnosed += 1,
            Ok(Ok(_)) => return Err(format!("malformed case `{name}` was accepted")),
            Ok(Err(_)) => return Err(format!("malformed case `{name}` gave an empty diagnostic")),
            Err(_) => return Err(format!("malformed case `{name}` crashed")),
        }
    }
    check(
        corpus.len() >= 20 && diagnosed == corpus.len(),
        format!("dataset and sweep round trips lossless; {diagnosed}/{} malformed cases diagnosed", corpus.len()),
    )
}

fn simulate_csv(out: &Path) -> Result<Vec<Vec<String>>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_rssloc"))
        .arg("--out")
        .arg(out)
        .args(["simulate", "--spec"])
        .arg(data_dir().join("nw1_sigma.json"))
        .args(["--trials", "3"])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let text = fs::read_to_string(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    let skip = header.iter().position(|h| h == "mean_solve_time_s").ok_or("no timing column")?;
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v.to_string()).collect());
    }
    Ok(rows)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ra, rb) = (simulate_csv(a.path())?, simulate_csv(b.path())?);
    check(
        ra == rb && !ra.is_empty(),
        format!("{} rows identical apart from wall-clock timing", ra.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("noiseless recovery", noiseless_recovery),
        ("beta0 oracle equivalence", beta0_oracle),
        ("refinement oracle equivalence", refinement_oracle),
        ("FIM score oracle", fim_oracle),
        ("CRLB properties", crlb_properties),
        ("sigma sweep surrogate", sigma_surrogate),
        ("anchor-count surrogate", anchor_surrogate),
        ("calibration reproduction", calibration_reproduction),
        ("data round trip", round_trips),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match std::panic::catch_unwind(f) {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {:>2} {name}: {detail} [{:.1} s]", k + 1, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
