//! Sample containers shared by the preprocessing, augmentation and training stages.
//!
//! Samples are stored channel-major (`21 × 256`, channels by timepoints). The
//! `256×21` layout sometimes quoted for this data is the transpose of the same
//! block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrode count of the 10-20 montage used throughout.
pub const N_CHANNELS: usize = 21;
/// Timepoints per sample: 2 s at 128 Hz.
pub const N_TIMEPOINTS: usize = 256;
pub const SAMPLE_LEN: usize = N_CHANNELS * N_TIMEPOINTS;
pub const N_CLASSES: usize = 4;
/// Sampling rate of a finished sample.
pub const SAMPLE_FS: f64 = 128.0;

/// Electrode order of the montage.
pub const CHANNEL_NAMES: [&str; N_CHANNELS] = [
    "Fz", "Cz", "Pz", "T3", "T4", "C3", "C4", "Fp1", "Fp2", "F7", "F8", "T5", "T6", "O1", "O2",
    "F3", "F4", "P3", "P4", "A1", "A2",
];

/// Taste classes in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taste {
    Sour = 0,
    Sweet = 1,
    Bitter = 2,
    Salty = 3,
}

impl Taste {
    pub const ALL: [Taste; N_CLASSES] = [Taste::Sour, Taste::Sweet, Taste::Bitter, Taste::Salty];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Taste> {
        Taste::ALL.get(label as usize).copied()
    }
}

/// One labeled 2 s epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EegSample {
    data: Vec<f64>,
    pub label: u8,
    pub subject: u32,
    pub segment: u32,
}

impl EegSample {
    pub fn new(data: Vec<f64>, label: u8, subject: u32, segment: u32) -> Result<Self> {
        check_block(&data)?;
        check_label(label)?;
        Ok(EegSample {
            data,
            label,
            subject,
            segment,
        })
    }

    /// Channel-major values, `N_CHANNELS * N_TIMEPOINTS` long.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * N_TIMEPOINTS..(ch + 1) * N_TIMEPOINTS]
    }

    pub fn at(&self, ch: usize, t: usize) -> f64 {
        self.data[ch * N_TIMEPOINTS + t]
    }

    /// Subtracts each channel's mean and divides by its standard deviation.
    /// Flat channels are only centered.
    pub fn zscore_channels(&mut self) {
        for ch in self.data.chunks_mut(N_TIMEPOINTS) {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            for v in ch.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
    }
}

/// A training sample that may carry two labels. `r` is the weight of
/// `labely`; `labelx` carries `1 - r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLabelSample {
    data: Vec<f64>,
    pub labelx: u8,
    pub labely: u8,
    pub r: f64,
}

impl DualLabelSample {
    pub fn new(data: Vec<f64>, labelx: u8, labely: u8, r: f64) -> Result<Self> {
        check_block(&data)?;
        check_label(labelx)?;
        check_label(labely)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::input(format!("mixing weight {r} outside [0, 1]")));
        }
        Ok(DualLabelSample {
            data,
            labelx,
            labely,
            r,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, ch: usize, t: usize) -> f64 {
        self.data[ch * N_TIMEPOINTS + t]
    }

    pub fn is_single_labeled(&self) -> bool {
        self.r == 0.0 && self.labelx == self.labely
    }

    /// The sample as a plain labeled epoch, if it carries a single label.
    pub fn to_single(&self) -> Option<EegSample> {
        self.is_single_labeled().then(|| EegSample {
            data: self.data.clone(),
            label: self.labelx,
            subject: 0,
            segment: 0,
        })
    }
}

impl From<&EegSample> for DualLabelSample {
    fn from(s: &EegSample) -> Self {
        DualLabelSample {
            data: s.data.clone(),
            labelx: s.label,
            labely: s.label,
            r: 0.0,
        }
    }
}

impl From<EegSample> for DualLabelSample {
    fn from(s: EegSample) -> Self {
        DualLabelSample {
            data: s.data,
            labelx: s.label,
            labely: s.label,
            r: 0.0,
        }
    }
}

fn check_block(data: &[f64]) -> Result<()> {
    if data.len() != SAMPLE_LEN {
        return Err(Error::shape(
            "sample",
            format!(
                "expected {N_CHANNELS}x{N_TIMEPOINTS} = {SAMPLE_LEN} values, got {}",
                data.len()
            ),
        ));
    }
    Ok(())
}

fn check_label(label: u8) -> Result<()> {
    if label as usize >= N_CLASSES {
        return Err(Error::input(format!(
            "label {label} outside 0..{N_CLASSES}"
        )));
    }
    Ok(())
}
