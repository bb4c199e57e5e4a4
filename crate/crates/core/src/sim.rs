//! Synthetic scenes, measurement synthesis and Monte-Carlo sweeps.
//!
//! Randomness is split into independent ChaCha streams derived from a base
//! seed and small integer labels, so results do not depend on evaluation
//! order or thread count. Scene streams are separate per node kind: growing
//! the anchor count keeps the existing anchors and all targets unchanged.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb::{crlb, fisher_information_uniform};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorOptions, KnownParams};
use crate::model::{
    pathloss_forward, Adjacency, AnchorFix, MeasurementSet, NetworkScene, NodeId, Point,
    RssReading, Scenario, REFERENCE_DISTANCE_M,
};

/// Smallest noise level written into a synthesized measurement set; keeps
/// the weights of noiseless data finite.
pub const MIN_RECORDED_NOISE: f64 = 1e-12;

/// Minimum separation enforced between generated nodes, in metres.
pub const MIN_SEPARATION_M: f64 = 1.0;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream labelled by `parts` under `base`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_anchors: usize,
    pub n_targets: usize,
    /// Side of the square deployment area, metres.
    #[serde(default = "default_area")]
    pub area_m: f64,
    #[serde(default = "default_ple")]
    pub ple: f64,
    #[serde(default = "default_power_range")]
    pub power_range_dbm: (f64, f64),
    /// Links longer than this are dropped; `None` keeps every link.
    #[serde(default)]
    pub comm_radius_m: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_area() -> f64 {
    100.0
}
fn default_ple() -> f64 {
    3.0
}
fn default_power_range() -> (f64, f64) {
    (-10.0, 10.0)
}

impl SceneConfig {
    pub fn new(n_anchors: usize, n_targets: usize, seed: u64) -> Self {
        Self {
            n_anchors,
            n_targets,
            area_m: default_area(),
            ple: default_ple(),
            power_range_dbm: default_power_range(),
            comm_radius_m: None,
            seed,
        }
    }
}

fn place(rng: &mut ChaCha8Rng, area: f64, taken: &[Point]) -> Point {
    loop {
        let p = Point::new(rng.gen::<f64>() * area, rng.gen::<f64>() * area);
        if taken.iter().all(|q| (p - q).norm() >= MIN_SEPARATION_M) {
            return p;
        }
    }
}

/// Uniform random deployment.
pub fn generate_scene(cfg: &SceneConfig) -> Result<NetworkScene> {
    if !(cfg.area_m > 0.0) || !(cfg.ple > 0.0) || cfg.power_range_dbm.0 > cfg.power_range_dbm.1 {
        return Err(Error::InvalidInput("invalid scene configuration".into()));
    }
    if cfg.n_targets == 0 {
        return Err(Error::InvalidInput("a scene needs at least one target".into()));
    }
    let mut t_rng = stream(cfg.seed, &[1]);
    let mut a_rng = stream(cfg.seed, &[2]);
    let mut tp_rng = stream(cfg.seed, &[3]);
    let mut ap_rng = stream(cfg.seed, &[4]);
    let mut taken = Vec::new();
    let mut targets = Vec::with_capacity(cfg.n_targets);
    for _ in 0..cfg.n_targets {
        let p = place(&mut t_rng, cfg.area_m, &taken);
        taken.push(p);
        targets.push(p);
    }
    let mut anchors = Vec::with_capacity(cfg.n_anchors);
    for _ in 0..cfg.n_anchors {
        let p = place(&mut a_rng, cfg.area_m, &taken);
        taken.push(p);
        anchors.push(p);
    }
    let (lo, hi) = cfg.power_range_dbm;
    let draw = |rng: &mut ChaCha8Rng| lo + (hi - lo) * rng.gen::<f64>();
    let target_tx_power_dbm = (0..cfg.n_targets).map(|_| draw(&mut tp_rng)).collect();
    let anchor_tx_power_dbm = (0..cfg.n_anchors).map(|_| draw(&mut ap_rng)).collect();
    let adjacency = match cfg.comm_radius_m {
        Some(r) => Adjacency::within_radius(&anchors, &targets, r),
        None => Adjacency::full(cfg.n_anchors, cfg.n_targets),
    };
    let scene = NetworkScene {
        anchors,
        targets,
        target_tx_power_dbm,
        anchor_tx_power_dbm,
        ple: cfg.ple,
        adjacency,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_db: f64,
    pub delta_m: f64,
    /// Noise on anchor-anchor links; defaults to `sigma_db`.
    #[serde(default)]
    pub sigma_aa_db: Option<f64>,
}

/// Draws one measurement set: target links, then anchor-anchor links, then
/// anchor fixes, each in canonical order.
pub fn synthesize_measurements(
    scene: &NetworkScene,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    let sigma_aa = noise.sigma_aa_db.unwrap_or(noise.sigma_db);
    if noise.sigma_db < 0.0 || noise.delta_m < 0.0 || sigma_aa < 0.0 {
        return Err(Error::Domain("noise levels must be non-negative".into()));
    }
    let n = |rng: &mut dyn rand::RngCore| -> f64 { rng.sample(StandardNormal) };
    let mut rss = std::collections::BTreeMap::new();
    for link in scene.adjacency.links() {
        let d = (scene.targets[link.tx] - scene.position(link.rx)).norm();
        let mean = pathloss_forward(
            scene.target_tx_power_dbm[link.tx],
            scene.ple,
            d,
            REFERENCE_DISTANCE_M,
        )?;
        let p = mean + noise.sigma_db * n(rng);
        rss.insert(
            (link.tx_node(), link.rx),
            RssReading {
                p_dbm: p,
                sigma_db: noise.sigma_db.max(MIN_RECORDED_NOISE),
            },
        );
    }
    for (j, i) in scene.adjacency.anchor_links() {
        let d = (scene.anchors[j] - scene.anchors[i]).norm();
        let mean = pathloss_forward(scene.anchor_tx_power_dbm[j], scene.ple, d, REFERENCE_DISTANCE_M)?;
        rss.insert(
            (NodeId::anchor(j), NodeId::anchor(i)),
            RssReading {
                p_dbm: mean + sigma_aa * n(rng),
                sigma_db: sigma_aa.max(MIN_RECORDED_NOISE),
            },
        );
    }
    let anchor_fixes = scene
        .anchors
        .iter()
        .map(|s| {
            let dx = noise.delta_m * n(rng);
            let dy = noise.delta_m * n(rng);
            AnchorFix {
                position: s + Point::new(dx, dy),
                delta_m: noise.delta_m.max(MIN_RECORDED_NOISE),
            }
        })
        .collect();
    Ok(MeasurementSet {
        n_targets: scene.n_targets(),
        rss,
        anchor_fixes,
        anchor_tx_power_dbm: Some(scene.anchor_tx_power_dbm.clone()),
    })
}

/// Root mean squared norm of error vectors pooled over trials and items.
pub fn nrmse(errors: &[Vec<Vec<f64>>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for trial in errors {
        for e in trial {
            sum += e.iter().map(|v| v * v).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no errors to pool".into()));
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Generate(SceneConfig),
    Inline(NetworkScene),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    SigmaDb,
    DeltaM,
    NAnchors,
    NTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub scene: SceneSource,
    pub axis: SweepAxis,
    pub sigma_db: f64,
    pub delta_m: f64,
    #[serde(default)]
    pub sigma_aa_db: Option<f64>,
    pub trials: usize,
    /// Estimator labels, `ctup1` .. `ctup4`.
    pub estimators: Vec<String>,
    pub seed: u64,
    /// Draw a fresh generated scene for every trial.
    #[serde(default)]
    pub redraw_scene: bool,
    #[serde(default)]
    pub options: EstimatorOptions,
}

impl SweepSpec {
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.estimators
            .iter()
            .map(|s| {
                Scenario::from_label(s)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown estimator `{s}`")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenarios()?;
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.axis.values.is_empty() {
            return Err(Error::InvalidInput("the sweep axis has no values".into()));
        }
        let needs_generator = matches!(self.axis.name, AxisName::NAnchors | AxisName::NTargets)
            || self.redraw_scene;
        if needs_generator && !matches!(self.scene, SceneSource::Generate(_)) {
            return Err(Error::InvalidInput(
                "node-count axes and per-trial scenes need a generated scene".into(),
            ));
        }
        for &v in &self.axis.values {
            let ok = match self.axis.name {
                AxisName::SigmaDb | AxisName::DeltaM => v > 0.0,
                AxisName::NAnchors => v >= 0.0 && v.fract() == 0.0,
                AxisName::NTargets => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("invalid axis value {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub estimator: String,
    /// `None` when every trial failed.
    pub nrmse_t_m: Option<f64>,
    pub nrmse_p_dbm: Option<f64>,
    pub nrmse_beta: Option<f64>,
    pub crlb_t_m: Option<f64>,
    pub crlb_p_dbm: Option<f64>,
    pub crlb_beta: Option<f64>,
    pub mean_solve_time_s: f64,
    pub failures: usize,
    /// Per-trial mean squared target error (`None` for failed trials); kept
    /// for distribution-level comparisons.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trial_mse_t: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "axis_value",
    "estimator",
    "nrmse_t_m",
    "nrmse_p_dbm",
    "nrmse_beta",
    "crlb_t_m",
    "crlb_p_dbm",
    "crlb_beta",
    "mean_solve_time_s",
    "failures",
];

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

impl SweepResult {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record([
                format!("{}", r.axis_value),
                r.estimator.clone(),
                cell(r.nrmse_t_m),
                cell(r.nrmse_p_dbm),
                cell(r.nrmse_beta),
                cell(r.crlb_t_m),
                cell(r.crlb_p_dbm),
                cell(r.crlb_beta),
                format!("{}", r.mean_solve_time_s),
                r.failures.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct TrialOutcome {
    pos_err: Option<Vec<Vec<f64>>>,
    pow_err: Option<Vec<Vec<f64>>>,
    ple_err: Option<f64>,
    time_s: f64,
    crlb: Option<crate::crlb::CrlbReport>,
}

fn grid_point(spec: &SweepSpec, v: f64) -> (Option<SceneConfig>, NoiseConfig) {
    let mut noise = NoiseConfig {
        sigma_db: spec.sigma_db,
        delta_m: spec.delta_m,
        sigma_aa_db: spec.sigma_aa_db,
    };
    let mut cfg = match &spec.scene {
        SceneSource::Generate(c) => Some(c.clone()),
        SceneSource::Inline(_) => None,
    };
    match spec.axis.name {
        AxisName::SigmaDb => noise.sigma_db = v,
        AxisName::DeltaM => noise.delta_m = v,
        AxisName::NAnchors => cfg.as_mut().unwrap().n_anchors = v as usize,
        AxisName::NTargets => cfg.as_mut().unwrap().n_targets = v as usize,
    }
    (cfg, noise)
}

fn bound(scene: &NetworkScene, noise: &NoiseConfig, scenario: Scenario) -> Option<crate::crlb::CrlbReport> {
    let fim = fisher_information_uniform(
        &scene.theta(),
        &scene.adjacency,
        noise.sigma_db,
        Some(noise.delta_m),
        scenario,
    )
    .ok()?;
    match crlb(&fim) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("bound unavailable for {}: {e}", scenario.label());
            None
        }
    }
}

fn run_trial(
    scene: &NetworkScene,
    scenario: Scenario,
    meas: &MeasurementSet,
    opts: &EstimatorOptions,
) -> TrialOutcome {
    let known = KnownParams {
        tx_power_dbm: Some(scene.target_tx_power_dbm.clone()),
        ple: Some(scene.ple),
    };
    let start = Instant::now();
    let res = estimate(scenario, meas, &scene.adjacency, &known, opts);
    let time_s = start.elapsed().as_secs_f64();
    match res {
        Ok(rep) => {
            let pos_err = rep
                .targets
                .iter()
                .zip(&scene.targets)
                .map(|(a, b)| vec![a.x - b.x, a.y - b.y])
                .collect();
            let pow_err = rep.tx_power_dbm.as_ref().map(|p| {
                p.iter()
                    .zip(&scene.target_tx_power_dbm)
                    .filter_map(|(e, t)| e.map(|e| vec![e - t]))
                    .collect()
            });
            TrialOutcome {
                pos_err: Some(pos_err),
                pow_err,
                ple_err: rep.ple.map(|b| b - scene.ple),
                time_s,
                crlb: None,
            }
        }
        Err(e) => {
            log::debug!("{} trial failed: {e}", scenario.label());
            TrialOutcome {
                pos_err: None,
                pow_err: None,
                ple_err: None,
                time_s,
                crlb: None,
            }
        }
    }
}

/// Runs every estimator on `trials` noise draws per grid point.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let scenarios = spec.scenarios()?;
    let mut rows = Vec::new();
    for (g, &v) in spec.axis.values.iter().enumerate() {
        let (cfg, noise) = grid_point(spec, v);
        let fixed_scene = match (&spec.scene, &cfg) {
            (SceneSource::Inline(s), _) => Some(s.clone()),
            (_, Some(c)) if !spec.redraw_scene => Some(generate_scene(c)?),
            _ => None,
        };
        if let Some(s) = &fixed_scene {
            s.validate()?;
        }
        let outcomes: Vec<Result<Vec<TrialOutcome>>> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let scene = match &fixed_scene {
                    Some(s) => s.clone(),
                    None => {
                        let mut c = cfg.clone().unwrap();
                        c.seed = derive_seed(c.seed, &[t as u64]);
                        generate_scene(&c)?
                    }
                };
                let mut rng = stream(spec.seed, &[g as u64, t as u64]);
                let meas = synthesize_measurements(&scene, &noise, &mut rng)?;
                Ok(scenarios
                    .iter()
                    .map(|&sc| {
                        let mut o = run_trial(&scene, sc, &meas, &spec.options);
                        if fixed_scene.is_none() {
                            o.crlb = bound(&scene, &noise, sc);
                        }
                        o
                    })
                    .collect())
            })
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        for (e, &sc) in scenarios.iter().enumerate() {
            let trials: Vec<&TrialOutcome> = outcomes.iter().map(|o| &o[e]).collect();
            let ok: Vec<&&TrialOutcome> = trials.iter().filter(|o| o.pos_err.is_some()).collect();
            let failures = trials.len() - ok.len();
            let pos: Vec<Vec<Vec<f64>>> = ok.iter().map(|o| o.pos_err.clone().unwrap()).collect();
            let pow: Vec<Vec<Vec<f64>>> = ok.iter().filter_map(|o| o.pow_err.clone()).collect();
            let ple: Vec<Vec<Vec<f64>>> = ok
                .iter()
                .filter_map(|o| o.ple_err.map(|b| vec![vec![b]]))
                .collect();
            let trial_mse_t = trials
                .iter()
                .map(|o| {
                    o.pos_err
                        .as_ref()
                        .and_then(|p| nrmse(std::slice::from_ref(p)).ok())
                        .map(|v| v * v)
                })
                .collect();
            let (ct, cp, cb) = match &fixed_scene {
                Some(s) => match bound(s, &noise, sc) {
                    Some(r) => (Some(r.crlb_t_m), r.crlb_p_dbm, r.crlb_beta),
                    None => (None, None, None),
                },
                None => {
                    let rms = |f: &dyn Fn(&crate::crlb::CrlbReport) -> Option<f64>| {
                        let v: Vec<f64> = trials
                            .iter()
                            .filter_map(|o| o.crlb.as_ref().and_then(f))
                            .collect();
                        (!v.is_empty())
                            .then(|| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt())
                    };
                    (
                        rms(&|r| Some(r.crlb_t_m)),
                        rms(&|r| r.crlb_p_dbm),
                        rms(&|r| r.crlb_beta),
                    )
                }
            };
            rows.push(SweepRow {
                axis_value: v,
                estimator: sc.label().to_string(),
                nrmse_t_m: nrmse(&pos).ok(),
                nrmse_p_dbm: nrmse(&pow).ok(),
                nrmse_beta: nrmse(&ple).ok(),
                crlb_t_m: ct,
                crlb_p_dbm: cp,
                crlb_beta: cb,
                mean_solve_time_s: trials.iter().map(|o| o.time_s).sum::<f64>() / trials.len() as f64,
                failures,
                trial_mse_t,
            });
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
    })
}
