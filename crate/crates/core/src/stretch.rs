//! Stretch-processing range compression against an oversampled bank of
//! unit-norm beat-frequency replicas.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{RadarConfig, SPEED_OF_LIGHT};

/// `N_f x L` matched-filter bank; column `l` is tuned to range `near + l * step`.
#[derive(Debug, Clone)]
pub struct CompensationMatrix {
    pub entries: DMatrix<Complex64>,
    pub near_beat_freq_hz: f64,
    pub freq_step_hz: f64,
    pub time_axis: Vec<f64>,
    pub near_range_m: f64,
    pub range_bin_m: f64,
}

impl CompensationMatrix {
    pub fn n_fast(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_range(&self) -> usize {
        self.entries.ncols()
    }

    pub fn column(&self, l: usize) -> Vec<Complex64> {
        self.entries.column(l).iter().copied().collect()
    }

    pub fn range_of_bin(&self, l: usize) -> f64 {
        self.near_range_m + l as f64 * self.range_bin_m
    }

    /// Nearest bin to a range, clamped to the grid.
    pub fn bin_of_range(&self, range_m: f64) -> usize {
        let b = ((range_m - self.near_range_m) / self.range_bin_m).round();
        b.clamp(0.0, (self.n_range() - 1) as f64) as usize
    }

    pub fn range_axis(&self) -> Vec<f64> {
        (0..self.n_range()).map(|l| self.range_of_bin(l)).collect()
    }

    /// Bank for tapered snapshots: rows scaled by the window, columns back to unit norm.
    /// A tapered echo `h .* f_l` is then a scalar multiple of column `l`.
    pub fn tapered(&self, window: WindowSpec) -> Result<CompensationMatrix> {
        check_len(self, window.length)?;
        let taps = window.taps();
        let mut entries = self.entries.clone();
        for (mut row, h) in entries.row_iter_mut().zip(&taps) {
            row *= Complex64::new(*h, 0.0);
        }
        for mut col in entries.column_iter_mut() {
            let n = col.norm();
            if n == 0.0 {
                return Err(Error::Parameter("window removes every sample".into()));
            }
            col /= Complex64::new(n, 0.0);
        }
        Ok(CompensationMatrix { entries, ..self.clone() })
    }
}

pub fn build_compensation_matrix(config: &RadarConfig) -> Result<CompensationMatrix> {
    let d = config.derive()?;
    if d.n_range < d.n_fast {
        log::warn!(
            "range grid of {} bins is coarser than the {} fast-time samples",
            d.n_range,
            d.n_fast
        );
    }
    let tau_near = 2.0 * config.near_range_m / SPEED_OF_LIGHT;
    let time_axis: Vec<f64> = (0..d.n_fast).map(|q| tau_near + q as f64 * d.sample_period_s).collect();
    let near_beat_freq_hz = config.beat_frequency_hz(config.near_range_m);
    let freq_step_hz = config.chirp_rate_hz_per_s * 2.0 * d.range_bin_m / SPEED_OF_LIGHT;
    let norm = 1.0 / (d.n_fast as f64).sqrt();
    // Columns replicate the synthesized echo phase exp(+j 2 pi f t) so that
    // F^H s peaks at the echo's own range.
    let entries = DMatrix::from_fn(d.n_fast, d.n_range, |q, l| {
        let f = near_beat_freq_hz + l as f64 * freq_step_hz;
        Complex64::from_polar(norm, 2.0 * PI * f * time_axis[q])
    });
    Ok(CompensationMatrix {
        entries,
        near_beat_freq_hz,
        freq_step_hz,
        time_axis,
        near_range_m: config.near_range_m,
        range_bin_m: d.range_bin_m,
    })
}

/// Complex estimate over the oversampled range grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub values: Vec<Complex64>,
    pub near_range_m: f64,
    pub range_bin_m: f64,
}

impl RangeProfile {
    pub fn new(values: Vec<Complex64>, bank: &CompensationMatrix) -> Self {
        RangeProfile { values, near_range_m: bank.near_range_m, range_bin_m: bank.range_bin_m }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn power_db(&self) -> Vec<f64> {
        self.values.iter().map(|z| to_db(z.norm_sqr())).collect()
    }

    pub fn ranges(&self) -> Vec<f64> {
        (0..self.len()).map(|l| self.near_range_m + l as f64 * self.range_bin_m).collect()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.power())
    }
}

/// Power in dB with a -300 dB floor for exact zeros.
pub fn to_db(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10()).max(-300.0)
    } else {
        -300.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hanning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub kind: WindowKind,
    pub length: usize,
}

impl WindowSpec {
    pub fn rectangular(length: usize) -> Self {
        WindowSpec { kind: WindowKind::Rectangular, length }
    }

    pub fn hanning(length: usize) -> Self {
        WindowSpec { kind: WindowKind::Hanning, length }
    }

    /// Symmetric taps, `0.5 * (1 - cos(2 pi n / (N - 1)))` for Hann.
    pub fn taps(&self) -> Vec<f64> {
        let n = self.length;
        match self.kind {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hanning if n <= 1 => vec![1.0; n],
            WindowKind::Hanning => (0..n)
                .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / (n - 1) as f64).cos()))
                .collect(),
        }
    }
}

fn check_len(bank: &CompensationMatrix, len: usize) -> Result<()> {
    if len != bank.n_fast() {
        return Err(Error::Shape(format!(
            "snapshot has {len} samples, compensation matrix expects {}",
            bank.n_fast()
        )));
    }
    Ok(())
}

/// `F^H s`.
pub fn matched_filter(bank: &CompensationMatrix, snapshot: &[Complex64]) -> Result<RangeProfile> {
    check_len(bank, snapshot.len())?;
    let s = DVector::from_column_slice(snapshot);
    let x = bank.entries.ad_mul(&s);
    Ok(RangeProfile::new(x.iter().copied().collect(), bank))
}

/// `F^H (h .* s)`.
pub fn windowed_matched_filter(
    bank: &CompensationMatrix,
    snapshot: &[Complex64],
    window: WindowSpec,
) -> Result<RangeProfile> {
    check_len(bank, snapshot.len())?;
    if window.length != snapshot.len() {
        return Err(Error::Shape(format!(
            "window length {} does not match snapshot length {}",
            window.length,
            snapshot.len()
        )));
    }
    let tapered = apply_window(snapshot, window);
    matched_filter(bank, &tapered)
}

pub fn apply_window(snapshot: &[Complex64], window: WindowSpec) -> Vec<Complex64> {
    snapshot.iter().zip(window.taps()).map(|(z, h)| z * h).collect()
}
