//! Scenario files and the three-method comparison run.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "case1"
//! base = "table1"          # or "table2"; radar keys below override it
//! seed = 7
//!
//! [radar]
//! noise_power = 1.0
//!
//! [apc]
//! max_iterations = 3
//!
//! [metrics]
//! window_samples = 5
//! region_half_width_m = 1.25
//!
//! [[targets]]
//! range_m = 10.0
//! velocity_mps = 0.0
//! azimuth_deg = 0.0
//! amplitude_db = 0.0      # or rcs_dbsm
//! phase_deg = 0.0
//! ```

use ndarray::{s, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::apc::{estimate_noise_power, rmmse_baseline, rmmse_mimo, ApcResult, ApcSettings, CovarianceModel};
use crate::chain::{run_pipeline, CellDetection, CellSelector, PipelineOptions, PipelineOutput};
use crate::error::{Error, Result};
use crate::metrics::{compare, emit_report, ComparisonReport, MetricsConfig, RangeRegion};
use crate::model::{amplitude_from_db, amplitude_from_rcs, hadamard, PhaseCodeMatrix, RadarConfig, Scene, Target};
use crate::stretch::{
    build_compensation_matrix, matched_filter, windowed_matched_filter, CompensationMatrix, RangeProfile,
    WindowKind, WindowSpec,
};
use crate::synth::{synthesize_cube, DataCube, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    HannMf,
    ApcBaseline,
    ApcProposed,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::HannMf, Method::ApcBaseline, Method::ApcProposed];

    pub fn name(self) -> &'static str {
        match self {
            Method::HannMf => "hann_mf",
            Method::ApcBaseline => "apc_baseline",
            Method::ApcProposed => "apc_proposed",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown method {name:?}; expected hann_mf, apc_baseline or apc_proposed")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Base {
    #[default]
    Table1,
    Table2,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadarOverrides {
    num_tx: Option<usize>,
    num_rx: Option<usize>,
    start_freq_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    sweep_time_s: Option<f64>,
    chirp_rate_hz_per_s: Option<f64>,
    adc_rate_hz: Option<f64>,
    chirps_per_tx_in_cpi: Option<usize>,
    near_range_m: Option<f64>,
    far_range_m: Option<f64>,
    oversample_factor: Option<usize>,
    noise_power: Option<f64>,
}

impl RadarOverrides {
    fn apply(&self, mut c: RadarConfig) -> RadarConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(num_tx, num_rx, start_freq_hz, bandwidth_hz, sweep_time_s, adc_rate_hz, chirps_per_tx_in_cpi);
        set!(near_range_m, far_range_m, oversample_factor, noise_power);
        // keep the chirp rate consistent unless it is given explicitly
        c.chirp_rate_hz_per_s = self.chirp_rate_hz_per_s.unwrap_or(c.bandwidth_hz / c.sweep_time_s);
        c
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSpec {
    range_m: f64,
    #[serde(default)]
    velocity_mps: f64,
    #[serde(default)]
    azimuth_deg: f64,
    amplitude_db: Option<f64>,
    rcs_dbsm: Option<f64>,
    #[serde(default)]
    phase_deg: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApcSpec {
    max_iterations: Option<usize>,
    early_stop_rel_change: Option<f64>,
    diagonal_loading_factor: Option<f64>,
    noise_power_override: Option<f64>,
    covariance: Option<CovarianceModel>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSpec {
    window_samples: Option<usize>,
    range_bin_m: Option<f64>,
    region_half_width_m: Option<f64>,
    mainlobe_half_width_m: Option<f64>,
    regions: Option<Vec<[f64; 2]>>,
    local_neighbourhood_m: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineSpec {
    n_angle: Option<usize>,
    doppler_window: Option<WindowKind>,
    detection_scale_db: Option<f64>,
    guard_cells: Option<usize>,
    training_cells: Option<usize>,
    dominance_db: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    #[serde(default)]
    base: Base,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    radar: RadarOverrides,
    #[serde(default)]
    apc: ApcSpec,
    #[serde(default)]
    metrics: MetricsSpec,
    #[serde(default)]
    pipeline: PipelineSpec,
    #[serde(default)]
    targets: Vec<TargetSpec>,
}

/// A parsed, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub seed: u64,
    pub apc: ApcSettings,
    pub metrics: MetricsConfig,
    pub pipeline: PipelineOptions,
    /// Neighbourhood on each side of a region used for local margins, metres.
    pub local_neighbourhood_m: f64,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let base = match f.base {
            Base::Table1 => RadarConfig::table1(),
            Base::Table2 => RadarConfig::table2(),
        };
        let config = f.radar.apply(base);
        let targets = f
            .targets
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let amp = match (t.amplitude_db, t.rcs_dbsm) {
                    (Some(db), None) => amplitude_from_db(db),
                    (None, Some(rcs)) => amplitude_from_rcs(rcs, t.range_m),
                    (None, None) => 1.0,
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(format!("target {k}: give amplitude_db or rcs_dbsm, not both")))
                    }
                };
                let amplitude = Complex64::from_polar(amp, t.phase_deg.to_radians());
                Ok(Target::new(t.range_m, t.velocity_mps, t.azimuth_deg, amplitude))
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene::new(config, targets)?;

        let defaults = ApcSettings::default();
        let apc = ApcSettings {
            max_iterations: f.apc.max_iterations.unwrap_or(defaults.max_iterations),
            early_stop_rel_change: match f.apc.early_stop_rel_change {
                Some(v) if v <= 0.0 => None,
                Some(v) => Some(v),
                None => defaults.early_stop_rel_change,
            },
            diagonal_loading_factor: f.apc.diagonal_loading_factor.unwrap_or(0.0),
            noise_power_override: f.apc.noise_power_override,
            covariance: f.apc.covariance.unwrap_or_default(),
        };
        if !(1..=10).contains(&apc.max_iterations) || apc.diagonal_loading_factor < 0.0 {
            return Err(Error::Config("apc.max_iterations must be 1..=10 and loading >= 0".into()));
        }

        let m = &f.metrics;
        let half = m.region_half_width_m.unwrap_or(1.25);
        let cfg = &scene.config;
        let target_regions = match &m.regions {
            Some(r) => r.iter().map(|[a, b]| RangeRegion::new(*a, *b)).collect(),
            None => scene
                .targets
                .iter()
                .map(|t| {
                    let r = RangeRegion::around(t.range_m, half);
                    RangeRegion::new(r.start_m.max(cfg.near_range_m), r.end_m.min(cfg.far_range_m))
                })
                .collect(),
        };
        let metrics = MetricsConfig {
            window_samples: m.window_samples.unwrap_or(5),
            range_bin_m: m.range_bin_m.unwrap_or(0.325),
            target_regions,
            mainlobe_half_width_m: m.mainlobe_half_width_m.unwrap_or(2.0 * cfg.derive()?.native_resolution_m),
        };
        metrics.validate((cfg.near_range_m, cfg.far_range_m))?;

        let p = &f.pipeline;
        let mut det = CellDetection::default();
        if let Some(db) = p.detection_scale_db {
            det.ca.scale = 10f64.powf(db / 10.0);
        }
        det.ca.guard = p.guard_cells.unwrap_or(det.ca.guard);
        det.ca.train = p.training_cells.unwrap_or(det.ca.train);
        det.dominance_db = p.dominance_db.unwrap_or(det.dominance_db);
        let pipeline = PipelineOptions {
            doppler_window: p.doppler_window.unwrap_or(WindowKind::Rectangular),
            n_angle: p.n_angle.unwrap_or(64),
            selector: CellSelector::Detected(det),
            ..Default::default()
        };

        Ok(Scenario {
            name: f.name.unwrap_or_else(|| "scenario".into()),
            scene,
            seed: f.seed,
            apc,
            metrics,
            pipeline,
            local_neighbourhood_m: m.local_neighbourhood_m.unwrap_or(5.0),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn config(&self) -> &RadarConfig {
        &self.scene.config
    }

    pub fn code(&self) -> Result<PhaseCodeMatrix> {
        hadamard(self.config().num_tx)
    }

    pub fn synthesize(&self, seed: u64) -> Result<DataCube> {
        let noise = NoiseModel::new(self.config().noise_power, seed);
        synthesize_cube(&self.scene, &self.code()?, noise)
    }
}

/// Position-0 pulse of every block, averaged over blocks and receivers.
/// No doppler processing, decoding or compensation.
pub fn baseline_snapshot(cube: &DataCube) -> Result<Vec<Complex64>> {
    let nt = cube.config.num_tx;
    if nt == 0 || !cube.n_chirps().is_multiple_of(nt) {
        return Err(Error::Shape(format!("{} chirps do not form blocks of {nt}", cube.n_chirps())));
    }
    let first: Array3<Complex64> = cube.samples.slice(s![.., ..;nt, ..]).to_owned();
    let count = (first.dim().1 * first.dim().2) as f64;
    let sum = first.sum_axis(Axis(2)).sum_axis(Axis(1));
    Ok(sum.iter().map(|z| z / count).collect())
}

pub fn apc_baseline_profile(bank: &CompensationMatrix, snapshot: &[Complex64], settings: &ApcSettings) -> Result<ApcResult> {
    let noise = estimate_noise_power(&matched_filter(bank, snapshot)?);
    rmmse_baseline(bank, snapshot, noise, settings)
}

/// Sum of the per-transmitter snapshots (the full virtual-array cell sum).
pub fn total_snapshot(pipeline: &PipelineOutput) -> Vec<Complex64> {
    let n = pipeline.snapshots.first().map_or(0, |s| s.samples.len());
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for s in &pipeline.snapshots {
        for (t, v) in total.iter_mut().zip(&s.samples) {
            *t += v;
        }
    }
    total
}

pub fn hann_mf_profile(bank: &CompensationMatrix, pipeline: &PipelineOutput) -> Result<RangeProfile> {
    let s = total_snapshot(pipeline);
    windowed_matched_filter(bank, &s, WindowSpec::hanning(s.len()))
}

/// MIMO RMMSE on Hann-tapered per-transmitter snapshots.
#[derive(Debug, Clone)]
pub struct ProposedOutput {
    /// Coherent sum of the per-transmitter adaptive estimates.
    pub profile: RangeProfile,
    pub per_tx: Vec<ApcResult>,
    pub noise_power: f64,
}

pub fn apc_proposed_profile(
    bank: &CompensationMatrix,
    pipeline: &PipelineOutput,
    settings: &ApcSettings,
) -> Result<ProposedOutput> {
    let window = WindowSpec::hanning(bank.n_fast());
    let tapered_bank = bank.tapered(window)?;
    let taps = window.taps();
    let snaps: Vec<Vec<Complex64>> = pipeline
        .snapshots
        .iter()
        .map(|s| s.samples.iter().zip(&taps).map(|(z, h)| z * h).collect())
        .collect();
    let noise = match settings.noise_power_override {
        Some(v) => v,
        None => {
            let mut acc = 0.0;
            for s in &snaps {
                acc += estimate_noise_power(&matched_filter(&tapered_bank, s)?);
            }
            acc / snaps.len().max(1) as f64
        }
    };
    let per_tx = rmmse_mimo(&tapered_bank, &snaps, noise, settings)?;
    let mut values = vec![Complex64::new(0.0, 0.0); bank.n_range()];
    for r in &per_tx {
        for (v, x) in values.iter_mut().zip(&r.final_profile.values) {
            *v += x;
        }
    }
    Ok(ProposedOutput { profile: RangeProfile::new(values, bank), per_tx, noise_power: noise })
}

/// Everything one run produced, before anything is written.
#[derive(Debug)]
pub struct MethodRun {
    pub profiles: BTreeMap<Method, Result<RangeProfile>>,
    pub pipeline: Option<PipelineOutput>,
    pub proposed: Option<ProposedOutput>,
    pub baseline: Option<ApcResult>,
}

impl MethodRun {
    pub fn profile(&self, m: Method) -> Option<&RangeProfile> {
        self.profiles.get(&m).and_then(|r| r.as_ref().ok())
    }
}

/// Runs the requested methods on one cube. A failing method is recorded and
/// the others still run.
pub fn run_methods(scenario: &Scenario, cube: &DataCube, methods: &[Method], keep_intermediates: bool) -> Result<MethodRun> {
    let bank = build_compensation_matrix(&cube.config)?;
    let code = hadamard(cube.config.num_tx)?;
    let mut run = MethodRun { profiles: BTreeMap::new(), pipeline: None, proposed: None, baseline: None };

    let wants_pipeline = methods.iter().any(|m| matches!(m, Method::HannMf | Method::ApcProposed));
    let pipeline = if wants_pipeline {
        let opts = PipelineOptions { keep_intermediates, ..scenario.pipeline.clone() };
        Some(run_pipeline(cube, &code, &opts))
    } else {
        None
    };
    let pipeline_err = |e: &Error| Error::Processing(format!("pipeline failed: {e}"));

    for &m in methods {
        let result = match m {
            Method::HannMf => match &pipeline {
                Some(Ok(p)) => hann_mf_profile(&bank, p),
                Some(Err(e)) => Err(pipeline_err(e)),
                None => unreachable!(),
            },
            Method::ApcProposed => match &pipeline {
                Some(Ok(p)) => apc_proposed_profile(&bank, p, &scenario.apc).map(|out| {
                    let profile = out.profile.clone();
                    run.proposed = Some(out);
                    profile
                }),
                Some(Err(e)) => Err(pipeline_err(e)),
                None => unreachable!(),
            },
            Method::ApcBaseline => baseline_snapshot(cube)
                .and_then(|s| apc_baseline_profile(&bank, &s, &scenario.apc))
                .map(|r| {
                    let profile = r.final_profile.clone();
                    run.baseline = Some(r);
                    profile
                }),
        };
        if let Err(e) = &result {
            log::error!("method {} failed: {e}", m.name());
        }
        run.profiles.insert(m, result);
    }
    run.pipeline = pipeline.and_then(|p| p.ok());
    Ok(run)
}

pub fn profile_csv(profile: &RangeProfile) -> String {
    let mut out = String::from("range_m,power_db\n");
    for (r, p) in profile.ranges().iter().zip(profile.power_db()) {
        let _ = writeln!(out, "{r},{p}");
    }
    out
}

/// Options for one invocation of the runner.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario_path: PathBuf,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub dump_intermediates: bool,
}

impl RunSpec {
    pub fn new(scenario_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunSpec {
            scenario_path: scenario_path.into(),
            methods: Method::ALL.to_vec(),
            out_dir: out_dir.into(),
            seed: None,
            dump_intermediates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Option<ComparisonReport>,
    pub failures: BTreeMap<String, String>,
    pub written: Vec<PathBuf>,
}

pub fn run_scenario(spec: &RunSpec) -> Result<RunOutcome> {
    let scenario = Scenario::load(&spec.scenario_path)?;
    let cube = scenario.synthesize(spec.seed.unwrap_or(scenario.seed))?;
    process_cube(&scenario, &cube, &spec.methods, &spec.out_dir, spec.dump_intermediates)
}

/// Runs `methods` on `cube` and writes profiles, intermediates and the report to `out_dir`.
pub fn process_cube(
    scenario: &Scenario,
    cube: &DataCube,
    methods: &[Method],
    out_dir: &Path,
    dump_intermediates: bool,
) -> Result<RunOutcome> {
    if methods.is_empty() {
        return Err(Error::Config("at least one method must be selected".into()));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    std::fs::create_dir_all(out_dir)?;
    let run = run_methods(scenario, cube, &methods, dump_intermediates)?;

    let mut written = Vec::new();
    let mut ok = Vec::new();
    let mut failures = BTreeMap::new();
    for (m, r) in &run.profiles {
        match r {
            Ok(p) => {
                let path = out_dir.join(format!("{}.csv", m.name()));
                std::fs::write(&path, profile_csv(p))?;
                written.push(path);
                ok.push((m.name().to_string(), p.clone()));
            }
            Err(e) => {
                failures.insert(m.name().to_string(), e.to_string());
            }
        }
    }
    if dump_intermediates {
        written.extend(dump(&run, out_dir)?);
    }
    let report = if ok.is_empty() {
        None
    } else {
        let mut report = compare(&ok, Method::ApcProposed.name(), &scenario.metrics)?;
        report.failures = failures.clone();
        emit_report(&report, out_dir)?;
        written.push(out_dir.join("report.json"));
        Some(report)
    };
    Ok(RunOutcome { report, failures, written })
}

fn write(path: PathBuf, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

fn dump(run: &MethodRun, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(p) = &run.pipeline {
        if let Some(pd) = &p.pulse_doppler {
            let map = pd.power_map();
            let mut t = String::from("sample,doppler,power\n");
            for ((q, b), v) in map.indexed_iter() {
                let _ = writeln!(t, "{q},{},{v}", pd.doppler_axis[b]);
            }
            write(dir.join("doppler_power.csv"), t, &mut written)?;
        }
        if let Some(ac) = &p.angle_cube {
            let e = ac.cell_energy();
            let mut t = String::from("doppler,sin_azimuth,energy\n");
            for ((b, a), v) in e.indexed_iter() {
                let _ = writeln!(t, "{},{},{v}", ac.doppler_axis[b], ac.sin_azimuth(a));
            }
            write(dir.join("angle_energy.csv"), t, &mut written)?;
        }
        let mut t = String::from("tx,sample,re,im\n");
        for (i, s) in p.snapshots.iter().enumerate() {
            for (q, z) in s.samples.iter().enumerate() {
                let _ = writeln!(t, "{i},{q},{},{}", z.re, z.im);
            }
        }
        write(dir.join("snapshots.csv"), t, &mut written)?;
        let mut t = String::from("doppler_bin,angle_bin\n");
        for (b, a) in p.snapshots.first().map(|s| s.cells.clone()).unwrap_or_default() {
            let _ = writeln!(t, "{b},{a}");
        }
        write(dir.join("selected_cells.csv"), t, &mut written)?;
    }
    let iter_csv = |name: &str, tx: Option<usize>, r: &ApcResult, written: &mut Vec<PathBuf>| -> Result<()> {
        for (k, p) in r.iterations.iter().enumerate() {
            let file = match tx {
                Some(i) => format!("{name}_tx{i}_iter{}.csv", k + 1),
                None => format!("{name}_iter{}.csv", k + 1),
            };
            write(dir.join(file), profile_csv(p), written)?;
        }
        Ok(())
    };
    if let Some(b) = &run.baseline {
        iter_csv(Method::ApcBaseline.name(), None, b, &mut written)?;
    }
    if let Some(p) = &run.proposed {
        for (i, r) in p.per_tx.iter().enumerate() {
            iter_csv(Method::ApcProposed.name(), Some(i), r, &mut written)?;
        }
    }
    Ok(written)
}

/// Rebuilds a report from the profile CSVs left in a results directory.
pub fn report_from_dir(dir: &Path) -> Result<ComparisonReport> {
    let json = dir.join("report.json");
    let previous = if json.exists() { Some(ComparisonReport::from_json(&std::fs::read_to_string(&json)?)?) } else { None };
    let mut profiles = Vec::new();
    for m in Method::ALL {
        let path = dir.join(format!("{}.csv", m.name()));
        if path.exists() {
            profiles.push((m.name().to_string(), read_profile_csv(&path)?));
        }
    }
    if profiles.is_empty() {
        return Err(Error::Format(format!("no method profiles found in {}", dir.display())));
    }
    let mut cfg = MetricsConfig::default();
    if let Some(prev) = &previous {
        cfg.target_regions = prev.target_regions.clone();
        cfg.window_samples = prev.window_samples;
    }
    let mut report = compare(&profiles, Method::ApcProposed.name(), &cfg)?;
    if let Some(prev) = previous {
        report.failures = prev.failures;
    }
    Ok(report)
}

/// Power-only profile from a `range_m,power_db` file (phase is zero).
pub fn read_profile_csv(path: &Path) -> Result<RangeProfile> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("range_m,power_db") {
        return Err(Error::Format(format!("{}: expected header range_m,power_db", path.display())));
    }
    let mut ranges = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::Format(format!("{}: malformed line {}", path.display(), i + 2));
        let (r, p) = line.split_once(',').ok_or_else(bad)?;
        let r: f64 = r.trim().parse().map_err(|_| bad())?;
        let p: f64 = p.trim().parse().map_err(|_| bad())?;
        ranges.push(r);
        values.push(Complex64::new(10f64.powf(p / 20.0), 0.0));
    }
    if ranges.len() < 2 {
        return Err(Error::Format(format!("{}: too few rows", path.display())));
    }
    Ok(RangeProfile { values, near_range_m: ranges[0], range_bin_m: ranges[1] - ranges[0] })
}
