//! Comparison metrics: weighted amplitude differential, moving statistics,
//! PSL/SINR and the report that collects them per method.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stretch::{to_db, RangeProfile};

/// Closed range interval in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeRegion {
    pub start_m: f64,
    pub end_m: f64,
}

impl RangeRegion {
    pub fn new(start_m: f64, end_m: f64) -> Self {
        RangeRegion { start_m, end_m }
    }

    pub fn around(centre_m: f64, half_width_m: f64) -> Self {
        RangeRegion { start_m: centre_m - half_width_m, end_m: centre_m + half_width_m }
    }

    pub fn contains(&self, range_m: f64) -> bool {
        range_m >= self.start_m && range_m <= self.end_m
    }

    /// Profile bins falling inside the region.
    pub fn bins(&self, profile: &RangeProfile) -> Vec<usize> {
        profile.ranges().iter().enumerate().filter(|(_, &r)| self.contains(r)).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub window_samples: usize,
    pub range_bin_m: f64,
    pub target_regions: Vec<RangeRegion>,
    /// Half width of an excluded mainlobe for PSL, metres.
    #[serde(default = "default_mainlobe")]
    pub mainlobe_half_width_m: f64,
}

fn default_mainlobe() -> f64 {
    1.25
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window_samples: 5,
            range_bin_m: 0.325,
            target_regions: Vec::new(),
            mainlobe_half_width_m: default_mainlobe(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self, swath: (f64, f64)) -> Result<()> {
        if self.window_samples == 0 {
            return Err(Error::Config("moving-statistics window must be >= 1 sample".into()));
        }
        for r in &self.target_regions {
            check_region(r, swath)?;
        }
        Ok(())
    }
}

fn check_region(r: &RangeRegion, (lo, hi): (f64, f64)) -> Result<()> {
    if !(r.start_m <= r.end_m && r.start_m >= lo - 1e-9 && r.end_m <= hi + 1e-9) {
        return Err(Error::Config(format!(
            "region [{}, {}] m is outside the swath [{lo}, {hi}] m",
            r.start_m, r.end_m
        )));
    }
    Ok(())
}

fn swath(profile: &RangeProfile) -> (f64, f64) {
    let last = profile.len().saturating_sub(1) as f64;
    (profile.near_range_m, profile.near_range_m + last * profile.range_bin_m)
}

/// Population mean and standard deviation.
pub fn population_stats(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `sqrt|x_p^2 - mu_p^2| / sigma_p * (x_p - x_f)`, elementwise.
pub fn weighted_amp_diff(xp: &[f64], xf: &[f64], mu_p: f64, sigma_p: f64) -> Result<Vec<f64>> {
    if xp.len() != xf.len() {
        return Err(Error::Shape(format!("series lengths differ: {} vs {}", xp.len(), xf.len())));
    }
    if sigma_p == 0.0 || !sigma_p.is_finite() {
        return Err(Error::DegenerateStatistics(format!("standard deviation {sigma_p} cannot weight a differential")));
    }
    Ok(xp
        .iter()
        .zip(xf)
        .map(|(&p, &f)| (p * p - mu_p * mu_p).abs().sqrt() / sigma_p.abs() * (p - f))
        .collect())
}

fn windows(len: usize, k: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..len).map(move |n| (n + 1).saturating_sub(k)..n + 1)
}

fn check_series(x: &[f64], k: usize) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Parameter("moving statistics need a non-empty series".into()));
    }
    if k == 0 {
        return Err(Error::Parameter("moving window must hold at least one sample".into()));
    }
    Ok(())
}

/// Trailing moving average; the first `k - 1` windows average what is available.
/// Returns the series and its mean.
pub fn moving_average(x: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    check_series(x, k)?;
    let avg: Vec<f64> = windows(x.len(), k).map(|w| x[w.clone()].iter().sum::<f64>() / w.len() as f64).collect();
    let mu = avg.iter().sum::<f64>() / avg.len() as f64;
    Ok((avg, mu))
}

/// Trailing moving population standard deviation over the same windows.
pub fn moving_std(x: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    check_series(x, k)?;
    let sd: Vec<f64> = windows(x.len(), k).map(|w| population_stats(&x[w]).1).collect();
    let mu = sd.iter().sum::<f64>() / sd.len() as f64;
    Ok((sd, mu))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PslSinr {
    pub peak_db: f64,
    pub psl_db: f64,
    /// Per region: peak power over the mean power outside every region, dB.
    pub sinr_db: Vec<f64>,
    pub region_peak_db: Vec<f64>,
    pub outside_mean_db: f64,
}

/// PSL excludes `mainlobe_half_width_m` around the global peak and around
/// every region's peak.
pub fn psl_sinr(profile: &RangeProfile, regions: &[RangeRegion], mainlobe_half_width_m: f64) -> Result<PslSinr> {
    if profile.is_empty() {
        return Err(Error::Shape("empty range profile".into()));
    }
    let sw = swath(profile);
    for r in regions {
        check_region(r, sw)?;
    }
    let power = profile.power();
    let ranges = profile.ranges();
    let peak = profile.argmax();
    let mut centres = vec![ranges[peak]];
    let mut region_peak = Vec::new();
    let mut in_region = vec![false; power.len()];
    for r in regions {
        let bins = r.bins(profile);
        if bins.is_empty() {
            return Err(Error::Config(format!("region [{}, {}] m holds no range bins", r.start_m, r.end_m)));
        }
        let best = *bins.iter().max_by(|a, b| power[**a].total_cmp(&power[**b])).unwrap();
        centres.push(ranges[best]);
        region_peak.push(power[best]);
        for b in bins {
            in_region[b] = true;
        }
    }
    let half = mainlobe_half_width_m + 1e-9;
    let sidelobe = power
        .iter()
        .zip(&ranges)
        .filter(|(_, r)| centres.iter().all(|c| (*r - c).abs() > half))
        .map(|(p, _)| *p)
        .fold(0.0, f64::max);
    let outside: Vec<f64> = power.iter().zip(&in_region).filter(|(_, &i)| !i).map(|(p, _)| *p).collect();
    let outside_mean = if outside.is_empty() { 0.0 } else { outside.iter().sum::<f64>() / outside.len() as f64 };
    let peak_db = to_db(power[peak]);
    Ok(PslSinr {
        peak_db,
        psl_db: if sidelobe > 0.0 { to_db(sidelobe) - peak_db } else { -300.0 },
        sinr_db: region_peak.iter().map(|p| to_db(*p) - to_db(outside_mean)).collect(),
        region_peak_db: region_peak.iter().map(|p| to_db(*p)).collect(),
        outside_mean_db: to_db(outside_mean),
    })
}

/// Peak inside `region` over the strongest response within `neighbourhood_m`
/// metres on either side of it, dB.
pub fn local_margin_db(profile: &RangeProfile, region: RangeRegion, neighbourhood_m: f64) -> Result<f64> {
    check_region(&region, swath(profile))?;
    let mut peak: f64 = 0.0;
    let mut interference: Option<f64> = None;
    for (p, r) in profile.power().into_iter().zip(profile.ranges()) {
        if region.contains(r) {
            peak = peak.max(p);
        } else if r >= region.start_m - neighbourhood_m && r <= region.end_m + neighbourhood_m {
            interference = Some(interference.map_or(p, |m: f64| m.max(p)));
        }
    }
    let interference =
        interference.ok_or_else(|| Error::Config("local-margin neighbourhood holds no range bins".into()))?;
    Ok(to_db(peak) - to_db(interference))
}

/// Mean power, dB, of bins farther than `half_width_m` from every centre.
pub fn floor_outside_db(profile: &RangeProfile, centres_m: &[f64], half_width_m: f64) -> f64 {
    let p: Vec<f64> = profile
        .power()
        .into_iter()
        .zip(profile.ranges())
        .filter(|(_, r)| centres_m.iter().all(|c| (r - c).abs() > half_width_m))
        .map(|(p, _)| p)
        .collect();
    if p.is_empty() {
        return -300.0;
    }
    to_db(p.iter().sum::<f64>() / p.len() as f64)
}

/// Mean of a series split into region bins and the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMean {
    /// `None` when the partition holds no bins.
    pub targets: Option<f64>,
    pub other: Option<f64>,
}

fn split_mean(x: &[f64], mask: &[bool]) -> SplitMean {
    let mean = |sel: bool| {
        let v: Vec<f64> = x.iter().zip(mask).filter(|(_, &m)| m == sel).map(|(v, _)| *v).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    SplitMean { targets: mean(true), other: mean(false) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub psl_db: f64,
    pub sinr_db: Vec<f64>,
    pub moving_average: SplitMean,
    pub moving_std: SplitMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// Reference method the proposed profile is differenced against.
    pub reference: String,
    pub weighted_diff: SplitMean,
    pub series: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub proposed: String,
    pub range_m: Vec<f64>,
    pub target_regions: Vec<RangeRegion>,
    pub window_samples: usize,
    /// Profiles in dB keyed by method.
    pub profiles_db: BTreeMap<String, Vec<f64>>,
    pub methods: Vec<MethodSummary>,
    pub pairs: Vec<PairSummary>,
    /// Methods that failed, with the reason.
    #[serde(default)]
    pub failures: BTreeMap<String, String>,
}

/// Builds the report; `proposed` (if present) is differenced against every other method.
pub fn compare(profiles: &[(String, RangeProfile)], proposed: &str, cfg: &MetricsConfig) -> Result<ComparisonReport> {
    let Some((_, first)) = profiles.first() else {
        return Err(Error::Parameter("no profiles to compare".into()));
    };
    cfg.validate(swath(first))?;
    let range_m = first.ranges();
    let mut mask = vec![false; first.len()];
    for r in &cfg.target_regions {
        for b in r.bins(first) {
            mask[b] = true;
        }
    }
    let mut profiles_db = BTreeMap::new();
    let mut methods = Vec::new();
    for (name, p) in profiles {
        if p.len() != first.len() {
            return Err(Error::Shape(format!("profile {name} has {} bins, expected {}", p.len(), first.len())));
        }
        let db = p.power_db();
        let ps = psl_sinr(p, &cfg.target_regions, cfg.mainlobe_half_width_m)?;
        let (avg, _) = moving_average(&db, cfg.window_samples)?;
        let (sd, _) = moving_std(&db, cfg.window_samples)?;
        methods.push(MethodSummary {
            method: name.clone(),
            psl_db: ps.psl_db,
            sinr_db: ps.sinr_db,
            moving_average: split_mean(&avg, &mask),
            moving_std: split_mean(&sd, &mask),
        });
        profiles_db.insert(name.clone(), db);
    }
    let mut pairs = Vec::new();
    if let Some(xp) = profiles_db.get(proposed) {
        let (mu, sigma) = population_stats(xp);
        for (name, xf) in &profiles_db {
            if name == proposed {
                continue;
            }
            let series = weighted_amp_diff(xp, xf, mu, sigma)?;
            pairs.push(PairSummary { reference: name.clone(), weighted_diff: split_mean(&series, &mask), series });
        }
    }
    Ok(ComparisonReport {
        proposed: proposed.to_string(),
        range_m,
        target_regions: cfg.target_regions.clone(),
        window_samples: cfg.window_samples,
        profiles_db,
        methods,
        pairs,
        failures: BTreeMap::new(),
    })
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

type Column = fn(&MethodSummary) -> Option<f64>;

impl ComparisonReport {
    /// Weighted-differential means: one row per partition, one column per pair.
    pub fn weighted_table_csv(&self) -> String {
        let mut out = String::from("parameter");
        for p in &self.pairs {
            let _ = write!(out, ",{}-{}", self.proposed, p.reference);
        }
        out.push('\n');
        for (label, pick) in [("mu_delta_targets", true), ("mu_delta_other", false)] {
            out.push_str(label);
            for p in &self.pairs {
                let v = if pick { p.weighted_diff.targets } else { p.weighted_diff.other };
                let _ = write!(out, ",{}", opt(v));
            }
            out.push('\n');
        }
        out
    }

    /// Moving-statistics means: rows per statistic and partition, one column per method.
    pub fn moving_table_csv(&self) -> String {
        let mut out = String::from("parameter");
        for m in &self.methods {
            let _ = write!(out, ",{}", m.method);
        }
        out.push('\n');
        let rows: [(&str, Column); 4] = [
            ("mu_avg_targets", |m| m.moving_average.targets),
            ("mu_avg_other", |m| m.moving_average.other),
            ("mu_std_targets", |m| m.moving_std.targets),
            ("mu_std_other", |m| m.moving_std.other),
        ];
        for (label, f) in rows {
            out.push_str(label);
            for m in &self.methods {
                let _ = write!(out, ",{}", opt(f(m)));
            }
            out.push('\n');
        }
        out
    }

    pub fn delta_csv(&self, pair: &PairSummary) -> String {
        let mut out = String::from("range_m,delta\n");
        for (r, d) in self.range_m.iter().zip(&pair.series) {
            let _ = writeln!(out, "{},{}", num(*r), num(*d));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Writes `report.json`, `weighted_diff.csv`, `moving_stats.csv` and one
/// `delta_<proposed>_<reference>.csv` per method pair.
pub fn emit_report(report: &ComparisonReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    std::fs::write(dir.join("weighted_diff.csv"), report.weighted_table_csv())?;
    std::fs::write(dir.join("moving_stats.csv"), report.moving_table_csv())?;
    for p in &report.pairs {
        std::fs::write(dir.join(format!("delta_{}_{}.csv", report.proposed, p.reference)), report.delta_csv(p))?;
    }
    Ok(())
}
