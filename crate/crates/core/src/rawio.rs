//! `MAPC` raw frame files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset size field
//!  0     4    magic "MAPC"
//!  4     2    version (1)
//!  6     2    sample type: 0 = c64 (f64 re, f64 im), 1 = i16 (i16 re, i16 im)
//!  8     4    N_f        fast-time samples per chirp
//! 12     4    N_chirps   chirps per frame (all transmitters)
//! 16     4    N_R        receivers
//! 20     4    N_frames
//! 24     ...  payload: frame, then receiver, then chirp, then fast time (fastest)
//! ```
//!
//! `i16` samples are scaled so that 32768 maps to 1.0.

use ndarray::Array3;
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::RadarConfig;
use crate::synth::DataCube;

pub const MAGIC: &[u8; 4] = b"MAPC";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 24;
const I16_FULL_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    C64,
    I16,
}

impl SampleType {
    fn code(self) -> u16 {
        match self {
            SampleType::C64 => 0,
            SampleType::I16 => 1,
        }
    }

    fn bytes(self) -> usize {
        match self {
            SampleType::C64 => 16,
            SampleType::I16 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub version: u16,
    pub sample_type: SampleType,
    pub n_fast: usize,
    pub n_chirps: usize,
    pub n_rx: usize,
    pub n_frames: usize,
}

impl RawHeader {
    fn frame_samples(&self) -> usize {
        self.n_fast * self.n_chirps * self.n_rx
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(MAGIC);
        h[4..6].copy_from_slice(&self.version.to_le_bytes());
        h[6..8].copy_from_slice(&self.sample_type.code().to_le_bytes());
        for (i, v) in [self.n_fast, self.n_chirps, self.n_rx, self.n_frames].into_iter().enumerate() {
            h[8 + 4 * i..12 + 4 * i].copy_from_slice(&(v as u32).to_le_bytes());
        }
        h
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("file holds {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected \"MAPC\"".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let sample_type = match u16::from_le_bytes([bytes[6], bytes[7]]) {
            0 => SampleType::C64,
            1 => SampleType::I16,
            other => return Err(Error::Format(format!("unknown sample type {other}"))),
        };
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        Ok(RawHeader { version, sample_type, n_fast: word(0), n_chirps: word(1), n_rx: word(2), n_frames: word(3) })
    }
}

/// Decoded file contents; each frame is `[q, chirp, receiver]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrameFile {
    pub header: RawHeader,
    pub frames: Vec<Array3<Complex64>>,
}

impl RawFrameFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header = RawHeader::decode(bytes)?;
        let per_frame = header.frame_samples();
        let expected = HEADER_LEN + per_frame * header.n_frames * header.sample_type.bytes();
        if bytes.len() != expected || header.n_frames == 0 {
            return Err(Error::Format(format!(
                "payload length mismatch: file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER_LEN..];
        let sz = header.sample_type.bytes();
        let sample = |i: usize| -> Complex64 {
            let b = &payload[i * sz..(i + 1) * sz];
            match header.sample_type {
                SampleType::C64 => Complex64::new(
                    f64::from_le_bytes(b[0..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..16].try_into().unwrap()),
                ),
                SampleType::I16 => Complex64::new(
                    i16::from_le_bytes([b[0], b[1]]) as f64 / I16_FULL_SCALE,
                    i16::from_le_bytes([b[2], b[3]]) as f64 / I16_FULL_SCALE,
                ),
            }
        };
        let (nq, nm, nr) = (header.n_fast, header.n_chirps, header.n_rx);
        let frames = (0..header.n_frames)
            .map(|f| {
                let base = f * per_frame;
                Array3::from_shape_fn((nq, nm, nr), |(q, m, n)| sample(base + q + nq * (m + nm * n)))
            })
            .collect();
        Ok(RawFrameFile { header, frames })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }
}

/// Serializes frames of identical shape. `i16` quantizes with rounding and saturation.
pub fn encode_frames(frames: &[&Array3<Complex64>], sample_type: SampleType) -> Result<Vec<u8>> {
    let Some(first) = frames.first() else {
        return Err(Error::Parameter("no frames to export".into()));
    };
    let (nq, nm, nr) = first.dim();
    if frames.iter().any(|f| f.dim() != (nq, nm, nr)) {
        return Err(Error::Shape("all frames must share one shape".into()));
    }
    let header = RawHeader { version: VERSION, sample_type, n_fast: nq, n_chirps: nm, n_rx: nr, n_frames: frames.len() };
    let mut out = Vec::with_capacity(HEADER_LEN + header.frame_samples() * frames.len() * sample_type.bytes());
    out.extend_from_slice(&header.encode());
    let quant = |v: f64| (v * I16_FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    for f in frames {
        for n in 0..nr {
            for m in 0..nm {
                for q in 0..nq {
                    let z = f[[q, m, n]];
                    match sample_type {
                        SampleType::C64 => {
                            out.extend_from_slice(&z.re.to_le_bytes());
                            out.extend_from_slice(&z.im.to_le_bytes());
                        }
                        SampleType::I16 => {
                            out.extend_from_slice(&quant(z.re).to_le_bytes());
                            out.extend_from_slice(&quant(z.im).to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn export_raw(cube: &DataCube, path: &Path, sample_type: SampleType) -> Result<()> {
    let bytes = encode_frames(&[&cube.samples], sample_type)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestOptions {
    pub frame: usize,
    /// Reference frame subtracted sample by sample (static background removal).
    pub subtract_frame: Option<usize>,
}

/// Loads one frame as a data cube after checking it against `config`.
pub fn ingest_raw(path: &Path, config: &RadarConfig, options: IngestOptions) -> Result<DataCube> {
    let file = RawFrameFile::read(path)?;
    cube_from_file(file, config, options)
}

pub fn cube_from_file(file: RawFrameFile, config: &RadarConfig, options: IngestOptions) -> Result<DataCube> {
    let d = config.derive()?;
    let h = file.header;
    if (h.n_fast, h.n_chirps, h.n_rx) != (d.n_fast, d.total_chirps, config.num_rx) {
        return Err(Error::Format(format!(
            "file frames are {}x{}x{} (fast x chirps x rx), configuration expects {}x{}x{}",
            h.n_fast, h.n_chirps, h.n_rx, d.n_fast, d.total_chirps, config.num_rx
        )));
    }
    let pick = |k: usize| {
        file.frames.get(k).ok_or_else(|| Error::Format(format!("frame {k} requested, file holds {}", h.n_frames)))
    };
    let mut samples = pick(options.frame)?.clone();
    if let Some(k) = options.subtract_frame {
        samples -= pick(k)?;
    }
    Ok(DataCube { samples, config: config.clone(), rng_seed: 0 })
}
