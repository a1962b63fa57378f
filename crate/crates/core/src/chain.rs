//! Re-ordered slow-time processing: doppler DFT per block position, per-bin
//! doppler compensation, Hadamard decoding, virtual-array angle DFT and
//! coherent integration down to one fast-time snapshot per transmitter.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::PhaseCodeMatrix;
use crate::stretch::{WindowKind, WindowSpec};
use crate::synth::{block_pulses, BlockSet, DataCube};

/// Doppler spectra of every block position, each `[q, doppler bin, receiver]`.
///
/// Bins are in DFT order; `doppler_axis[b]` is the per-chirp normalized doppler
/// that bin `b` represents, wrapped into `[-0.5 / N_T, 0.5 / N_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseDopplerSet {
    pub positions: Vec<Array3<Complex64>>,
    pub doppler_axis: Vec<f64>,
}

impl PulseDopplerSet {
    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn n_doppler(&self) -> usize {
        self.doppler_axis.len()
    }

    /// `[q, doppler]` matrix for one block position and receiver.
    pub fn matrix(&self, position: usize, rx: usize) -> ArrayView2<'_, Complex64> {
        self.positions[position].index_axis(Axis(2), rx)
    }

    /// Largest per-chirp doppler representable on the block-rate axis.
    pub fn max_unambiguous_doppler(&self) -> f64 {
        0.5 / self.n_positions() as f64
    }

    /// Total power summed over positions and receivers, `[q, doppler]`.
    pub fn power_map(&self) -> Array2<f64> {
        let (nq, nb, _) = self.positions[0].dim();
        let mut out = Array2::zeros((nq, nb));
        for p in &self.positions {
            out += &p.map(|z| z.norm_sqr()).sum_axis(Axis(2));
        }
        out
    }
}

/// Per-chirp doppler span of a single-transmitter (chirp-rate) axis.
pub fn chirp_rate_max_doppler() -> f64 {
    0.5
}

fn wrap_half(x: f64) -> f64 {
    let w = x - x.round();
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

pub fn doppler_axis(n_blocks: usize, n_positions: usize) -> Vec<f64> {
    (0..n_blocks)
        .map(|b| {
            let block_cycles = if 2 * b >= n_blocks { b as f64 / n_blocks as f64 - 1.0 } else { b as f64 / n_blocks as f64 };
            block_cycles / n_positions as f64
        })
        .collect()
}

/// Windowed, unnormalized DFT across blocks for every fast-time sample and receiver.
pub fn doppler_process(blocks: &BlockSet, window: WindowKind) -> Result<PulseDopplerSet> {
    let n_blocks = blocks.n_blocks();
    if n_blocks < 2 {
        return Err(Error::Processing(format!("doppler processing needs at least 2 blocks, got {n_blocks}")));
    }
    let taps = WindowSpec { kind: window, length: n_blocks }.taps();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_blocks);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_blocks];
    let positions = blocks
        .positions
        .iter()
        .map(|pos| {
            let (nq, _, nr) = pos.dim();
            let mut out = Array3::zeros((nq, n_blocks, nr));
            for q in 0..nq {
                for n in 0..nr {
                    for (p, b) in buf.iter_mut().enumerate() {
                        *b = pos[[q, p, n]] * taps[p];
                    }
                    fft.process(&mut buf);
                    out.slice_mut(s![q, .., n]).assign(&ndarray::ArrayView1::from(&buf[..]));
                }
            }
            out
        })
        .collect();
    Ok(PulseDopplerSet { positions, doppler_axis: doppler_axis(n_blocks, blocks.n_positions()) })
}

/// Cell-averaging detector parameters for a 1D sweep along doppler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaParams {
    pub guard: usize,
    pub train: usize,
    /// Linear power multiplier on the local mean.
    pub scale: f64,
}

impl CaParams {
    pub fn new(guard: usize, train: usize, scale: f64) -> Self {
        CaParams { guard, train, scale }
    }
}

/// Cells exceeding `scale` times the mean of the training cells on both
/// sides (circular along the doppler axis), as `(row, doppler bin)`.
pub fn detect_doppler_bins(power: ArrayView2<'_, f64>, params: CaParams) -> Result<Vec<(usize, usize)>> {
    let (rows, nb) = power.dim();
    if params.train == 0 {
        return Err(Error::Parameter("cell-averaging needs at least one training cell".into()));
    }
    if 2 * (params.guard + params.train) + 1 > nb {
        return Err(Error::Parameter(format!(
            "guard {} and train {} do not fit in {nb} doppler bins",
            params.guard, params.train
        )));
    }
    if !(params.scale.is_finite() && params.scale > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {}", params.scale)));
    }
    let mut hits = Vec::new();
    let n_train = 2 * params.train;
    for r in 0..rows {
        let row = power.row(r);
        for b in 0..nb {
            let mut acc = 0.0;
            for k in params.guard + 1..=params.guard + params.train {
                acc += row[(b + k) % nb] + row[(b + nb - k) % nb];
            }
            let threshold = params.scale * acc / n_train as f64;
            if row[b] > threshold {
                hits.push((r, b));
            }
        }
    }
    Ok(hits)
}

/// Doppler bins to compensate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinSelection {
    All,
    Bins(Vec<usize>),
}

/// Multiplies block position `k` at bin `b` by `exp(-j 2 pi k fd(b))`.
pub fn doppler_compensate(set: &PulseDopplerSet, bins: &BinSelection) -> Result<PulseDopplerSet> {
    let nb = set.n_doppler();
    let selected: Vec<usize> = match bins {
        BinSelection::All => (0..nb).collect(),
        BinSelection::Bins(v) => {
            if let Some(&bad) = v.iter().find(|&&b| b >= nb) {
                return Err(Error::Parameter(format!("doppler bin {bad} out of range 0..{nb}")));
            }
            v.clone()
        }
    };
    let mut out = set.clone();
    for (k, pos) in out.positions.iter_mut().enumerate().skip(1) {
        for &b in &selected {
            let rot = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * set.doppler_axis[b]);
            pos.slice_mut(s![.., b, ..]).mapv_inplace(|z| z * rot);
        }
    }
    Ok(out)
}

/// Per-transmitter arrays `[q, doppler (or block), receiver]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSet {
    pub tx: Vec<Array3<Complex64>>,
}

impl DecodedSet {
    pub fn n_tx(&self) -> usize {
        self.tx.len()
    }
}

/// `S_i = (1/N_T) * sum_k A[k][i] * P_k`.
pub fn decode_positions(positions: &[Array3<Complex64>], code: &PhaseCodeMatrix) -> Result<DecodedSet> {
    let nt = positions.len();
    if code.order() != nt {
        return Err(Error::Decode(format!(
            "code order {} does not match {nt} block positions",
            code.order()
        )));
    }
    let tx = (0..nt)
        .map(|i| {
            let mut acc = Array3::<Complex64>::zeros(positions[0].dim());
            for (k, p) in positions.iter().enumerate() {
                acc.scaled_add(Complex64::new(code.sign(k, i) / nt as f64, 0.0), p);
            }
            acc
        })
        .collect();
    Ok(DecodedSet { tx })
}

pub fn decode(set: &PulseDopplerSet, code: &PhaseCodeMatrix) -> Result<DecodedSet> {
    decode_positions(&set.positions, code)
}

/// Per-transmitter contributions to the virtual-array angle spectrum,
/// each `[q, doppler, angle bin]`; their sum is the full angle cube.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleCube {
    pub tx: Vec<Array3<Complex64>>,
    pub doppler_axis: Vec<f64>,
    /// Spatial frequency per virtual element, cycles, for each angle bin.
    pub angle_axis: Vec<f64>,
}

impl AngleCube {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.tx[0].dim()
    }

    pub fn total(&self) -> Array3<Complex64> {
        let mut acc = self.tx[0].clone();
        for t in &self.tx[1..] {
            acc += t;
        }
        acc
    }

    /// Energy of each `(doppler, angle)` cell of the full cube.
    pub fn cell_energy(&self) -> Array2<f64> {
        self.total().map(|z| z.norm_sqr()).sum_axis(Axis(0))
    }

    /// Sine of azimuth for an angle bin, given half-wavelength receive spacing.
    pub fn sin_azimuth(&self, bin: usize) -> f64 {
        2.0 * self.angle_axis[bin]
    }
}

/// Zero-padded DFT of length `n_ang` across virtual channels `i * N_R + n`.
pub fn angle_process(decoded: &DecodedSet, doppler_axis: &[f64], n_ang: usize) -> Result<AngleCube> {
    let nt = decoded.n_tx();
    let (nq, nb, nr) = decoded.tx[0].dim();
    if decoded.tx.iter().any(|t| t.dim() != (nq, nb, nr)) {
        return Err(Error::Shape("decoded transmitters differ in shape".into()));
    }
    if n_ang < nt * nr {
        return Err(Error::Shape(format!(
            "angle DFT length {n_ang} is shorter than the {} virtual channels",
            nt * nr
        )));
    }
    if doppler_axis.len() != nb {
        return Err(Error::Shape(format!("doppler axis has {} bins, data has {nb}", doppler_axis.len())));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_ang);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_ang];
    let tx = decoded
        .tx
        .iter()
        .enumerate()
        .map(|(i, data)| {
            let mut out = Array3::zeros((nq, nb, n_ang));
            for q in 0..nq {
                for b in 0..nb {
                    buf.fill(Complex64::new(0.0, 0.0));
                    for n in 0..nr {
                        buf[i * nr + n] = data[[q, b, n]];
                    }
                    fft.process(&mut buf);
                    out.slice_mut(s![q, b, ..]).assign(&ndarray::ArrayView1::from(&buf[..]));
                }
            }
            out
        })
        .collect();
    let angle_axis = (0..n_ang).map(|a| wrap_half(a as f64 / n_ang as f64)).collect();
    Ok(AngleCube { tx, doppler_axis: doppler_axis.to_vec(), angle_axis })
}

/// Parameters of the detection-driven cell selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDetection {
    pub ca: CaParams,
    /// A detected cell is dropped when a cell within one doppler bin is this much stronger (dB).
    pub dominance_db: f64,
}

impl Default for CellDetection {
    fn default() -> Self {
        CellDetection { ca: CaParams::new(2, 8, 10f64.powf(1.4)), dominance_db: 10.0 }
    }
}

/// Which `(doppler, angle)` cells are summed into the snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum CellSelector {
    /// Cells whose energy is within this many dB of the strongest cell.
    WithinDb(f64),
    TopK(usize),
    Explicit(Vec<(usize, usize)>),
    /// Range-resolved cell-averaging detection along doppler, one cell per detected cluster.
    Detected(CellDetection),
}

impl Default for CellSelector {
    fn default() -> Self {
        CellSelector::WithinDb(3.0)
    }
}

/// One coherently integrated fast-time vector for a transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub samples: Vec<Complex64>,
    /// `(doppler bin, angle bin)` cells that were summed.
    pub cells: Vec<(usize, usize)>,
}

pub fn select_cells(cube: &AngleCube, selector: &CellSelector) -> Result<Vec<(usize, usize)>> {
    let (_, nb, na) = cube.dim();
    let energy = cube.cell_energy();
    let peak_cell = || {
        let mut best = (0, 0);
        for ((b, a), &e) in energy.indexed_iter() {
            if e > energy[best] {
                best = (b, a);
            }
        }
        best
    };
    let mut cells = match selector {
        CellSelector::WithinDb(db) => {
            let peak = energy[peak_cell()];
            let floor = peak * 10f64.powf(-db / 10.0);
            energy.indexed_iter().filter(|(_, &e)| e > 0.0 && e >= floor).map(|(c, _)| c).collect()
        }
        CellSelector::TopK(k) => {
            let mut all: Vec<((usize, usize), f64)> = energy.indexed_iter().map(|(c, &e)| (c, e)).collect();
            all.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            all.into_iter().take(*k).filter(|(_, e)| *e > 0.0).map(|(c, _)| c).collect()
        }
        CellSelector::Explicit(list) => {
            if let Some(&(b, a)) = list.iter().find(|&&(b, a)| b >= nb || a >= na) {
                return Err(Error::Parameter(format!("cell ({b}, {a}) outside {nb}x{na} grid")));
            }
            list.clone()
        }
        CellSelector::Detected(params) => detect_cells(cube, params)?,
    };
    if cells.is_empty() {
        let fallback = peak_cell();
        log::warn!("cell selection is empty; falling back to the peak cell {fallback:?}");
        cells.push(fallback);
    }
    Ok(cells)
}

fn detect_cells(cube: &AngleCube, params: &CellDetection) -> Result<Vec<(usize, usize)>> {
    let total = cube.total();
    let (nq, nb, na) = total.dim();
    let n_fft = nq.next_power_of_two();
    let taps = WindowSpec::hanning(nq).taps();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    // range power per (range bin, doppler) for every angle
    let mut strength = Array2::<f64>::zeros((nb, na));
    let mut hit = Array2::<bool>::from_elem((nb, na), false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for a in 0..na {
        let mut rd = Array2::<f64>::zeros((n_fft, nb));
        for b in 0..nb {
            buf.fill(Complex64::new(0.0, 0.0));
            for q in 0..nq {
                buf[q] = total[[q, b, a]] * taps[q];
            }
            fft.process(&mut buf);
            for (r, z) in buf.iter().enumerate() {
                rd[[r, b]] = z.norm_sqr();
            }
        }
        for (r, b) in detect_doppler_bins(rd.view(), params.ca)? {
            hit[[b, a]] = true;
            strength[[b, a]] = strength[[b, a]].max(rd[[r, b]]);
        }
    }

    // connected clusters of hit cells, circular in both axes
    let mut seen = Array2::<bool>::from_elem((nb, na), false);
    let mut peaks: Vec<((usize, usize), f64)> = Vec::new();
    for start in hit.indexed_iter().filter(|(_, &h)| h).map(|(c, _)| c) {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut best = start;
        while let Some((b, a)) = stack.pop() {
            if strength[[b, a]] > strength[best] {
                best = (b, a);
            }
            for db in [nb - 1, 0, 1] {
                for da in [na - 1, 0, 1] {
                    let c = ((b + db) % nb, (a + da) % na);
                    if hit[c] && !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
        }
        peaks.push((best, strength[best]));
    }

    let ratio = 10f64.powf(params.dominance_db / 10.0);
    let kept: BTreeSet<(usize, usize)> = peaks
        .iter()
        .filter(|&&((b, _), s)| {
            !peaks.iter().any(|&((b2, _), s2)| {
                let d = (b + nb - b2) % nb;
                (d <= 1 || d == nb - 1) && s2 > s * ratio
            })
        })
        .map(|&(c, _)| c)
        .collect();
    Ok(kept.into_iter().collect())
}

/// `s_i(q) = sum over selected cells of cube_i(q, b, a)`.
pub fn coherent_integrate(cube: &AngleCube, selector: &CellSelector) -> Result<Vec<Snapshot>> {
    let cells = select_cells(cube, selector)?;
    let nq = cube.dim().0;
    Ok(cube
        .tx
        .iter()
        .map(|data| {
            let mut samples = vec![Complex64::new(0.0, 0.0); nq];
            for &(b, a) in &cells {
                for (q, s) in samples.iter_mut().enumerate() {
                    *s += data[[q, b, a]];
                }
            }
            Snapshot { samples, cells: cells.clone() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub doppler_window: WindowKind,
    pub n_angle: usize,
    pub selector: CellSelector,
    pub compensation: BinSelection,
    pub keep_intermediates: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            doppler_window: WindowKind::Rectangular,
            n_angle: 64,
            selector: CellSelector::default(),
            compensation: BinSelection::All,
            keep_intermediates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub snapshots: Vec<Snapshot>,
    pub pulse_doppler: Option<PulseDopplerSet>,
    pub decoded: Option<DecodedSet>,
    pub angle_cube: Option<AngleCube>,
}

/// doppler DFT -> per-bin compensation -> decode -> angle DFT -> coherent integration.
pub fn run_pipeline(cube: &DataCube, code: &PhaseCodeMatrix, options: &PipelineOptions) -> Result<PipelineOutput> {
    let nt = cube.config.num_tx;
    if code.order() != nt {
        return Err(Error::Decode(format!(
            "pipeline decodes {nt} block positions but the code has order {}",
            code.order()
        )));
    }
    let blocks = block_pulses(cube, nt)?;
    let pd = doppler_process(&blocks, options.doppler_window)?;
    let compensated = doppler_compensate(&pd, &options.compensation)?;
    let decoded = decode(&compensated, code)?;
    let angle = angle_process(&decoded, &pd.doppler_axis, options.n_angle)?;
    let snapshots = coherent_integrate(&angle, &options.selector)?;
    if options.keep_intermediates {
        Ok(PipelineOutput { snapshots, pulse_doppler: Some(pd), decoded: Some(decoded), angle_cube: Some(angle) })
    } else {
        Ok(PipelineOutput { snapshots, pulse_doppler: None, decoded: None, angle_cube: None })
    }
}
