//! EEGB: little-endian binary container for labeled samples.
//!
//! ```text
//! "EEGB" | version u32 = 1 | n u32 | channels u16 | timepoints u16 | fs f32
//! n × ( labelx u8 | labely u8 | r f32 | channels·timepoints × f32 )
//! ```
//!
//! Values are channel-major and stored as `f32`, so a dataset read back from
//! disk is the canonical form: writing it again yields identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::{DualLabelSample, EegSample, N_CHANNELS, N_CLASSES, N_TIMEPOINTS, SAMPLE_FS};

pub const MAGIC: &[u8; 4] = b"EEGB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub n_samples: u32,
    pub n_channels: u16,
    pub n_timepoints: u16,
    pub fs: f32,
}

impl Header {
    pub fn record_len(&self) -> usize {
        6 + 4 * self.n_channels as usize * self.n_timepoints as usize
    }

    pub fn file_len(&self) -> usize {
        HEADER_LEN + self.n_samples as usize * self.record_len()
    }
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        format: "EEGB",
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn encode(samples: &[DualLabelSample]) -> Vec<u8> {
    let header = Header {
        n_samples: samples.len() as u32,
        n_channels: N_CHANNELS as u16,
        n_timepoints: N_TIMEPOINTS as u16,
        fs: SAMPLE_FS as f32,
    };
    let mut out = Vec::with_capacity(header.file_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header.n_samples.to_le_bytes());
    out.extend_from_slice(&header.n_channels.to_le_bytes());
    out.extend_from_slice(&header.n_timepoints.to_le_bytes());
    out.extend_from_slice(&header.fs.to_le_bytes());
    for s in samples {
        out.push(s.labelx);
        out.push(s.labely);
        out.extend_from_slice(&(s.r as f32).to_le_bytes());
        for &v in s.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let header = Header {
        n_samples: u32_at(8),
        n_channels: u16_at(12),
        n_timepoints: u16_at(14),
        fs: f32::from_le_bytes(bytes[16..20].try_into().unwrap()),
    };
    if header.n_channels as usize != N_CHANNELS {
        return Err(format_err(12, format!("{} channels, expected {N_CHANNELS}", header.n_channels)));
    }
    if header.n_timepoints as usize != N_TIMEPOINTS {
        return Err(format_err(
            14,
            format!("{} timepoints, expected {N_TIMEPOINTS}", header.n_timepoints),
        ));
    }
    if !(header.fs.is_finite() && header.fs > 0.0) {
        return Err(format_err(16, format!("sampling rate {}", header.fs)));
    }
    Ok(header)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<DualLabelSample>> {
    let header = parse_header(bytes)?;
    let want = header.file_len();
    if bytes.len() < want {
        let rec = header.record_len();
        let complete = (bytes.len() - HEADER_LEN) / rec;
        return Err(format_err(
            HEADER_LEN + complete * rec,
            format!(
                "truncated: header promises {} samples ({want} bytes), file has {} bytes",
                header.n_samples,
                bytes.len()
            ),
        ));
    }
    if bytes.len() > want {
        return Err(format_err(want, format!("{} trailing bytes", bytes.len() - want)));
    }
    let values = header.n_channels as usize * header.n_timepoints as usize;
    let mut out = Vec::with_capacity(header.n_samples as usize);
    for rec in bytes[HEADER_LEN..].chunks_exact(header.record_len()) {
        let at = HEADER_LEN + out.len() * header.record_len();
        let (labelx, labely) = (rec[0], rec[1]);
        for (o, l) in [(0, labelx), (1, labely)] {
            if l as usize >= N_CLASSES {
                return Err(format_err(at + o, format!("label {l} outside 0..{N_CLASSES}")));
            }
        }
        let r = f32::from_le_bytes(rec[2..6].try_into().unwrap());
        if !(0.0..=1.0).contains(&r) {
            return Err(format_err(at + 2, format!("mixing ratio {r} outside [0, 1]")));
        }
        if r == 0.0 && labely != labelx {
            return Err(format_err(at + 1, "single-labeled record with differing labels"));
        }
        let mut data = Vec::with_capacity(values);
        data.extend(
            rec[6..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64),
        );
        out.push(DualLabelSample::new(data, labelx, labely, r as f64)?);
    }
    Ok(out)
}

pub fn write<W: Write>(mut w: W, samples: &[DualLabelSample]) -> Result<()> {
    w.write_all(&encode(samples))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<DualLabelSample>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(path: &Path, samples: &[DualLabelSample]) -> Result<()> {
    std::fs::write(path, encode(samples))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<DualLabelSample>> {
    decode(&std::fs::read(path)?)
}

pub fn save_single(path: &Path, samples: &[EegSample]) -> Result<()> {
    let dual: Vec<DualLabelSample> = samples.iter().map(DualLabelSample::from).collect();
    save(path, &dual)
}

/// Loads a file whose records must all be single-labeled.
pub fn load_single(path: &Path) -> Result<Vec<EegSample>> {
    to_single(&load(path)?)
}

pub fn to_single(samples: &[DualLabelSample]) -> Result<Vec<EegSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.to_single()
                .ok_or_else(|| Error::input(format!("sample {i} is dual-labeled (r = {})", s.r)))
        })
        .collect()
}
