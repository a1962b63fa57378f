//! Radar configuration, point-target scenes and slow-time Hadamard codes.
//!
//! Everything here is an immutable value. [`RadarConfig::derive`] computes the
//! quantities shared by the rest of the receive chain (samples per chirp,
//! oversampled range grid, wavelength, array spacings, block duration).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Propagation speed in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    pub num_tx: usize,
    pub num_rx: usize,
    pub start_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub sweep_time_s: f64,
    pub chirp_rate_hz_per_s: f64,
    pub adc_rate_hz: f64,
    /// Chirps per transmitter sequence; the CPI holds `num_tx * chirps_per_tx_in_cpi` chirps.
    pub chirps_per_tx_in_cpi: usize,
    pub near_range_m: f64,
    pub far_range_m: f64,
    /// Range-grid oversampling relative to the native fast-time resolution.
    pub oversample_factor: usize,
    /// Per-sample complex noise power, linear.
    pub noise_power: f64,
}

/// Quantities derived from a [`RadarConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Fast-time samples per chirp.
    pub n_fast: usize,
    /// Oversampled range bins across the swath.
    pub n_range: usize,
    pub wavelength_m: f64,
    pub tx_spacing_m: f64,
    pub rx_spacing_m: f64,
    pub block_duration_s: f64,
    pub range_bin_m: f64,
    pub native_resolution_m: f64,
    pub sample_period_s: f64,
    pub total_chirps: usize,
}

impl RadarConfig {
    /// Simulation parameters: 77 GHz, 240 MHz sweep in 2.67 us, 2x4 array.
    pub fn table1() -> Self {
        let bandwidth_hz = 240e6;
        let sweep_time_s = 2.67e-6;
        RadarConfig {
            num_tx: 2,
            num_rx: 4,
            start_freq_hz: 77e9,
            bandwidth_hz,
            sweep_time_s,
            chirp_rate_hz_per_s: bandwidth_hz / sweep_time_s,
            adc_rate_hz: 80e6,
            chirps_per_tx_in_cpi: 32,
            near_range_m: 0.0,
            far_range_m: 133.0,
            oversample_factor: 3,
            noise_power: 1.0,
        }
    }

    /// Hardware parameters: 1798.92 MHz sweep in 60 us, 10 MHz ADC, 128 chirps.
    pub fn table2() -> Self {
        let bandwidth_hz = 1798.92e6;
        let sweep_time_s = 60e-6;
        RadarConfig {
            num_tx: 2,
            num_rx: 4,
            start_freq_hz: 77e9,
            bandwidth_hz,
            sweep_time_s,
            chirp_rate_hz_per_s: bandwidth_hz / sweep_time_s,
            adc_rate_hz: 10e6,
            chirps_per_tx_in_cpi: 128,
            near_range_m: 0.0,
            far_range_m: 25.6,
            oversample_factor: 3,
            noise_power: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_tx == 0 || self.num_rx == 0 {
            return bad("transmitter and receiver counts must be at least 1".into());
        }
        if self.chirps_per_tx_in_cpi == 0 || self.oversample_factor == 0 {
            return bad("chirp count and oversample factor must be at least 1".into());
        }
        for (name, v) in [
            ("start_freq_hz", self.start_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("sweep_time_s", self.sweep_time_s),
            ("chirp_rate_hz_per_s", self.chirp_rate_hz_per_s),
            ("adc_rate_hz", self.adc_rate_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let expected = self.bandwidth_hz / self.sweep_time_s;
        if ((self.chirp_rate_hz_per_s - expected) / expected).abs() > 1e-9 {
            return bad(format!(
                "chirp_rate_hz_per_s {} disagrees with bandwidth/sweep_time {}",
                self.chirp_rate_hz_per_s, expected
            ));
        }
        if !(self.near_range_m >= 0.0 && self.far_range_m > self.near_range_m) {
            return bad(format!(
                "range swath [{}, {}] must satisfy 0 <= near < far",
                self.near_range_m, self.far_range_m
            ));
        }
        if !(self.noise_power.is_finite() && self.noise_power >= 0.0) {
            return bad(format!("noise_power must be >= 0, got {}", self.noise_power));
        }
        Ok(())
    }

    /// Samples per chirp. `T_p * f_s` is floored so no sample is read past the sweep end.
    pub fn n_fast(&self) -> usize {
        // guard against 600.0 landing on 599.999...
        (self.sweep_time_s * self.adc_rate_hz + 1e-9).floor() as usize
    }

    pub fn derive(&self) -> Result<DerivedParams> {
        self.validate()?;
        let n_fast = self.n_fast();
        if n_fast < 2 {
            return Err(Error::Config(format!(
                "sweep_time_s * adc_rate_hz yields {n_fast} samples per chirp, need at least 2"
            )));
        }
        let n_range = self.oversample_factor * n_fast;
        let wavelength_m = SPEED_OF_LIGHT / self.start_freq_hz;
        Ok(DerivedParams {
            n_fast,
            n_range,
            wavelength_m,
            tx_spacing_m: self.num_rx as f64 * wavelength_m / 2.0,
            rx_spacing_m: wavelength_m / 2.0,
            block_duration_s: self.num_tx as f64 * self.sweep_time_s,
            range_bin_m: (self.far_range_m - self.near_range_m) / n_range as f64,
            native_resolution_m: SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz),
            sample_period_s: 1.0 / self.adc_rate_hz,
            total_chirps: self.num_tx * self.chirps_per_tx_in_cpi,
        })
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.start_freq_hz
    }

    /// Beat frequency of a zero-doppler echo from `range_m`.
    pub fn beat_frequency_hz(&self, range_m: f64) -> f64 {
        self.chirp_rate_hz_per_s * 2.0 * range_m / SPEED_OF_LIGHT
    }

    /// Radial velocity whose per-chirp normalized doppler lands exactly on
    /// block-rate doppler bin `bin` (signed, wrapped into the unambiguous interval).
    pub fn on_grid_velocity(&self, bin: i64) -> f64 {
        let block_cycles = bin as f64 / self.chirps_per_tx_in_cpi as f64;
        let per_chirp = block_cycles / self.num_tx as f64;
        per_chirp / self.sweep_time_s * self.wavelength_m() / 2.0
    }

    /// Block-rate doppler bin nearest to `velocity_mps` (signed).
    pub fn nearest_doppler_bin(&self, velocity_mps: f64) -> i64 {
        let per_chirp = 2.0 * velocity_mps / self.wavelength_m() * self.sweep_time_s;
        (per_chirp * self.num_tx as f64 * self.chirps_per_tx_in_cpi as f64).round() as i64
    }
}

/// A point scatterer. Velocity is radial, positive receding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub azimuth_deg: f64,
    pub amplitude: Complex64,
}

impl Target {
    pub fn new(range_m: f64, velocity_mps: f64, azimuth_deg: f64, amplitude: Complex64) -> Self {
        Target { range_m, velocity_mps, azimuth_deg, amplitude }
    }

    /// Static target at boresight with real amplitude.
    pub fn boresight(range_m: f64, amplitude: f64) -> Self {
        Target::new(range_m, 0.0, 0.0, Complex64::new(amplitude, 0.0))
    }

    pub fn sin_azimuth(&self) -> f64 {
        self.azimuth_deg.to_radians().sin()
    }

    pub fn delay_s(&self) -> f64 {
        2.0 * self.range_m / SPEED_OF_LIGHT
    }

    pub fn doppler_hz(&self, config: &RadarConfig) -> f64 {
        2.0 * self.velocity_mps / config.wavelength_m()
    }

    /// Doppler in cycles per chirp.
    pub fn normalized_doppler(&self, config: &RadarConfig) -> f64 {
        self.doppler_hz(config) * config.sweep_time_s
    }

    /// Receive-array spatial frequency, cycles per receive element.
    pub fn spatial_frequency(&self, config: &RadarConfig) -> f64 {
        self.sin_azimuth() * (config.wavelength_m() / 2.0) / config.wavelength_m()
    }

    /// Beat frequency including the doppler offset.
    pub fn beat_hz(&self, config: &RadarConfig) -> f64 {
        config.chirp_rate_hz_per_s * self.delay_s() + self.doppler_hz(config)
    }

    /// Beat frequency in cycles per fast-time sample.
    pub fn normalized_beat(&self, config: &RadarConfig) -> f64 {
        self.beat_hz(config) / config.adc_rate_hz
    }
}

/// Amplitude for a given RCS and range under a two-way `R^-4` power law,
/// up to a common scale factor.
pub fn amplitude_from_rcs(rcs_dbsm: f64, range_m: f64) -> f64 {
    10f64.powf(rcs_dbsm / 20.0) / (range_m * range_m)
}

/// Amplitude for a power level in dB relative to unit amplitude.
pub fn amplitude_from_db(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// A validated configuration plus targets inside its range swath.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: RadarConfig,
    pub targets: Vec<Target>,
}

impl Scene {
    pub fn new(config: RadarConfig, targets: Vec<Target>) -> Result<Self> {
        config.validate()?;
        for (k, t) in targets.iter().enumerate() {
            if !(t.range_m >= config.near_range_m && t.range_m <= config.far_range_m) {
                return Err(Error::Scene(format!(
                    "target {k} at {} m lies outside the swath [{}, {}] m",
                    t.range_m, config.near_range_m, config.far_range_m
                )));
            }
            let finite = t.velocity_mps.is_finite()
                && t.azimuth_deg.is_finite()
                && t.amplitude.re.is_finite()
                && t.amplitude.im.is_finite();
            if !finite {
                return Err(Error::Scene(format!("target {k} has non-finite parameters")));
            }
        }
        Ok(Scene { config, targets })
    }
}

/// Binary slow-time code: row = chirp position within a block, column = transmitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseCodeMatrix {
    order: usize,
    entries: Vec<i8>,
}

/// Sylvester-construction Hadamard matrix of the given order.
pub fn hadamard(order: usize) -> Result<PhaseCodeMatrix> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::UnsupportedOrder(order));
    }
    let mut entries = vec![1i8];
    let mut k = 1;
    while k < order {
        let mut next = vec![0i8; 4 * k * k];
        for r in 0..k {
            for c in 0..k {
                let v = entries[r * k + c];
                next[r * 2 * k + c] = v;
                next[r * 2 * k + c + k] = v;
                next[(r + k) * 2 * k + c] = v;
                next[(r + k) * 2 * k + c + k] = -v;
            }
        }
        entries = next;
        k *= 2;
    }
    Ok(PhaseCodeMatrix { order, entries })
}

impl PhaseCodeMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entry(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.order + col]
    }

    /// Code sign applied by transmitter `tx` on chirp `chirp`; repeats every `order` chirps.
    pub fn sign(&self, chirp: usize, tx: usize) -> f64 {
        f64::from(self.entry(chirp % self.order, tx))
    }

    /// Phase in radians, 0 for +1 and pi for -1.
    pub fn phase(&self, chirp: usize, tx: usize) -> f64 {
        if self.entry(chirp % self.order, tx) > 0 {
            0.0
        } else {
            PI
        }
    }

    pub fn rows(&self) -> Vec<Vec<i8>> {
        self.entries.chunks(self.order).map(|r| r.to_vec()).collect()
    }

    /// `A * A^H` in exact integer arithmetic.
    pub fn gram(&self) -> Vec<Vec<i64>> {
        let k = self.order;
        (0..k)
            .map(|r| {
                (0..k)
                    .map(|c| (0..k).map(|j| i64::from(self.entry(r, j)) * i64::from(self.entry(c, j))).sum())
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_two_matches_literal() {
        assert_eq!(hadamard(2).unwrap().rows(), vec![vec![1, 1], vec![1, -1]]);
        assert_eq!(hadamard(1).unwrap().rows(), vec![vec![1]]);
    }

    #[test]
    fn hadamard_four_is_sylvester_doubling() {
        let a4 = hadamard(4).unwrap();
        let a2 = hadamard(2).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let base = a2.entry(r % 2, c % 2);
                let sign = if r >= 2 && c >= 2 { -1 } else { 1 };
                assert_eq!(a4.entry(r, c), sign * base);
            }
        }
        let g = a4.gram();
        for (r, row) in g.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert_eq!(v, if r == c { 4 } else { 0 });
            }
        }
    }

    #[test]
    fn hadamard_rejects_non_power_of_two() {
        for k in [0, 3, 5, 6, 12] {
            assert!(matches!(hadamard(k), Err(Error::UnsupportedOrder(o)) if o == k));
        }
    }

    #[test]
    fn code_phases_follow_signs() {
        let a = hadamard(2).unwrap();
        assert_eq!(a.phase(0, 1), 0.0);
        assert_eq!(a.phase(1, 1), PI);
        assert_eq!(a.phase(3, 1), PI);
        assert_eq!(a.sign(2, 1), 1.0);
    }

    #[test]
    fn table1_derived_values() {
        let cfg = RadarConfig::table1();
        let d = cfg.derive().unwrap();
        assert_eq!(d.n_fast, 213);
        assert_eq!(d.n_range, 639);
        assert!((d.native_resolution_m - 0.625).abs() < 1e-3);
        assert!((d.block_duration_s - 2.0 * 2.67e-6).abs() < 1e-18);
        assert!((d.tx_spacing_m - 4.0 * d.rx_spacing_m).abs() < 1e-15);
        assert!((d.range_bin_m - 133.0 / 639.0).abs() < 1e-15);
        assert_eq!(d.total_chirps, 64);
    }

    #[test]
    fn table2_floor_is_exact() {
        let d = RadarConfig::table2().derive().unwrap();
        assert_eq!(d.n_fast, 600);
        assert_eq!(d.n_range, 1800);
    }

    #[test]
    fn config_errors() {
        let mut cfg = RadarConfig::table1();
        cfg.chirp_rate_hz_per_s = 90e12;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RadarConfig::table1();
        cfg.adc_rate_hz = 1.0 / cfg.sweep_time_s;
        assert!(matches!(cfg.derive(), Err(Error::Config(_))));

        let mut cfg = RadarConfig::table1();
        cfg.far_range_m = cfg.near_range_m;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derive_is_pure() {
        let cfg = RadarConfig::table1();
        assert_eq!(cfg.derive().unwrap(), cfg.derive().unwrap());
    }

    #[test]
    fn scene_rejects_out_of_swath() {
        let cfg = RadarConfig::table1();
        let err = Scene::new(cfg, vec![Target::boresight(140.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Scene(_)));
    }

    #[test]
    fn on_grid_velocity_round_trips() {
        let cfg = RadarConfig::table1();
        for bin in [-5i64, -2, 0, 3, 7] {
            let v = cfg.on_grid_velocity(bin);
            assert_eq!(cfg.nearest_doppler_bin(v), bin);
        }
        assert_eq!(cfg.nearest_doppler_bin(30.0), 3);
        assert_eq!(cfg.nearest_doppler_bin(-20.0), -2);
    }

    #[test]
    fn rcs_amplitude_power_law() {
        let a = amplitude_from_rcs(20.0, 10.0);
        let b = amplitude_from_rcs(20.0, 20.0);
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!((amplitude_from_db(-20.0) - 0.1).abs() < 1e-15);
    }
}
