//! Dechirped receive-cube synthesis for slow-time coded MIMO transmission.

use ndarray::{s, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{PhaseCodeMatrix, RadarConfig, Scene};

/// Complex receive samples indexed `[fast-time q, chirp m, receiver n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub samples: Array3<Complex64>,
    pub config: RadarConfig,
    pub rng_seed: u64,
}

impl DataCube {
    pub fn zeros(config: &RadarConfig) -> Result<Self> {
        let d = config.derive()?;
        Ok(DataCube {
            samples: Array3::zeros((d.n_fast, d.total_chirps, config.num_rx)),
            config: config.clone(),
            rng_seed: 0,
        })
    }

    pub fn n_fast(&self) -> usize {
        self.samples.dim().0
    }

    pub fn n_chirps(&self) -> usize {
        self.samples.dim().1
    }

    pub fn n_rx(&self) -> usize {
        self.samples.dim().2
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Fast-time column for one chirp and receiver.
    pub fn pulse(&self, chirp: usize, rx: usize) -> Vec<Complex64> {
        self.samples.slice(s![.., chirp, rx]).to_vec()
    }
}

/// Zero-mean circular complex white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub power: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(power: f64, seed: u64) -> Self {
        NoiseModel { power, seed }
    }

    pub fn silent() -> Self {
        NoiseModel { power: 0.0, seed: 0 }
    }

    /// Independent stream for one (chirp, receiver) pair, so cubes can be
    /// synthesized in any order and still reproduce bit-for-bit.
    fn stream(&self, chirp: usize, rx: usize, n_rx: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((chirp * n_rx + rx) as u64);
        rng
    }
}

/// Sum of all target echoes plus noise, per the discretized MIMO receive model.
pub fn synthesize_cube(scene: &Scene, code: &PhaseCodeMatrix, noise: NoiseModel) -> Result<DataCube> {
    let cfg = &scene.config;
    let d = cfg.derive()?;
    if code.order() < cfg.num_tx {
        return Err(Error::Config(format!(
            "code order {} is smaller than the transmitter count {}",
            code.order(),
            cfg.num_tx
        )));
    }
    if !(noise.power.is_finite() && noise.power >= 0.0) {
        return Err(Error::Parameter(format!("noise power must be >= 0, got {}", noise.power)));
    }
    let (n_fast, n_chirps, n_rx) = (d.n_fast, d.total_chirps, cfg.num_rx);
    let mut samples = Array3::<Complex64>::zeros((n_fast, n_chirps, n_rx));
    let tx_cycles = d.tx_spacing_m / d.wavelength_m;
    let rx_cycles = d.rx_spacing_m / d.wavelength_m;

    for t in &scene.targets {
        let beat = t.normalized_beat(cfg);
        let dop = t.normalized_doppler(cfg);
        let u = t.sin_azimuth();
        let fast: Vec<Complex64> =
            (0..n_fast).map(|q| Complex64::from_polar(1.0, 2.0 * PI * beat * q as f64)).collect();
        for m in 0..n_chirps {
            for n in 0..n_rx {
                let mut slow = Complex64::new(0.0, 0.0);
                for i in 0..cfg.num_tx {
                    let phase = 2.0 * PI * (dop * m as f64 + (i as f64 * tx_cycles + n as f64 * rx_cycles) * u);
                    slow += Complex64::from_polar(code.sign(m, i), phase);
                }
                let gain = t.amplitude * slow;
                let mut col = samples.slice_mut(s![.., m, n]);
                for (y, f) in col.iter_mut().zip(&fast) {
                    *y += gain * f;
                }
            }
        }
    }

    if noise.power > 0.0 {
        let scale = (noise.power / 2.0).sqrt();
        for m in 0..n_chirps {
            for n in 0..n_rx {
                let mut rng = noise.stream(m, n, n_rx);
                for q in 0..n_fast {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    samples[[q, m, n]] += Complex64::new(re * scale, im * scale);
                }
            }
        }
    }

    Ok(DataCube { samples, config: cfg.clone(), rng_seed: noise.seed })
}

/// Slow time regrouped into blocks of `num_tx` consecutive chirps.
///
/// `positions[k]` holds the k-th pulse of every block as `[q, block p, receiver n]`,
/// i.e. chirp `p * num_tx + k` of the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub positions: Vec<Array3<Complex64>>,
}

impl BlockSet {
    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.positions[0].dim().1
    }

    /// Pulse at position `k` of block `p`, as `[q, receiver]`.
    pub fn pulse(&self, block: usize, position: usize) -> ArrayView2<'_, Complex64> {
        self.positions[position].index_axis(Axis(1), block)
    }
}

pub fn block_pulses(cube: &DataCube, num_tx: usize) -> Result<BlockSet> {
    let n_chirps = cube.n_chirps();
    if num_tx == 0 || !n_chirps.is_multiple_of(num_tx) {
        return Err(Error::Shape(format!(
            "{n_chirps} chirps cannot be grouped into blocks of {num_tx}"
        )));
    }
    let positions = (0..num_tx)
        .map(|k| cube.samples.slice(s![.., k..;num_tx, ..]).to_owned())
        .collect();
    Ok(BlockSet { positions })
}
