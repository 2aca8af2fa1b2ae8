//! Synthetic labeled EEG-like data with class-specific spectral signatures.
//!
//! Each class drives a narrow band on a few channels of the lower montage
//! rows; every channel carries 1/f background noise. Recordings are built
//! per subject as back-to-back 10 s segments and cut into 2 s samples.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{epoch, ContinuousRecording, Event};
use crate::error::{Error, Result};
use crate::rng;
use crate::sample::{EegSample, CHANNEL_NAMES, N_CHANNELS, N_CLASSES, SAMPLE_FS};

pub const SEGMENT_S: f64 = 10.0;
pub const WINDOW_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub segments_per_class_per_subject: usize,
    /// RMS ratio of the class oscillation to the background on an active
    /// channel. May be infinite (noise-free templates).
    pub snr: f64,
    /// Spread of the per-subject, per-channel gain around 1, in `[0, 1]`.
    pub subject_variability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 20,
            segments_per_class_per_subject: 4,
            snr: 2.0,
            subject_variability: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr.is_nan() || self.snr < 0.0 {
            return Err(Error::input(format!("snr must be non-negative, got {}", self.snr)));
        }
        if !(0.0..=1.0).contains(&self.subject_variability) {
            return Err(Error::input(format!(
                "subject_variability must lie in [0, 1], got {}",
                self.subject_variability
            )));
        }
        Ok(())
    }

    pub fn samples_per_segment(&self) -> usize {
        (SEGMENT_S / WINDOW_S) as usize
    }

    pub fn expected_len(&self) -> usize {
        self.n_subjects * N_CLASSES * self.segments_per_class_per_subject * self.samples_per_segment()
    }

    /// Signal and noise RMS. The larger of the two is 1.
    fn amplitudes(&self) -> (f64, f64) {
        if self.snr >= 1.0 {
            (1.0, 1.0 / self.snr)
        } else {
            (self.snr, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub center_hz: f64,
    /// Components sit at the center and at ± half this width.
    pub bandwidth_hz: f64,
    pub channels: Vec<usize>,
}

impl ClassSignature {
    pub fn band(&self) -> (f64, f64) {
        (
            self.center_hz - self.bandwidth_hz / 2.0,
            self.center_hz + self.bandwidth_hz / 2.0,
        )
    }

    fn components(&self) -> [f64; 3] {
        let h = self.bandwidth_hz / 2.0;
        [self.center_hz - h, self.center_hz, self.center_hz + h]
    }
}

/// Signatures of the four classes: 6, 11, 19 and 27 Hz, five channels each
/// from indices 12..=20.
pub fn default_signatures() -> [ClassSignature; N_CLASSES] {
    let sig = |f: f64, ch: [usize; 5]| ClassSignature {
        center_hz: f,
        bandwidth_hz: 2.0,
        channels: ch.to_vec(),
    };
    [
        sig(6.0, [13, 14, 15, 17, 19]),
        sig(11.0, [12, 14, 16, 18, 20]),
        sig(19.0, [14, 15, 16, 19, 20]),
        sig(27.0, [13, 15, 17, 18, 20]),
    ]
}

/// Unit-RMS noise with a 1/f power spectrum and no DC.
pub fn pink_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    if len < 2 {
        return vec![0.0; len];
    }
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for k in 1..=len / 2 {
        let scale = 1.0 / (k as f64).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if 2 * k == len { 0.0 } else { rng.sample(StandardNormal) };
        spec[k] = Complex::new(re * scale, im * scale);
        spec[len - k] = spec[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Layout of one subject's continuous recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingLayout {
    pub fs: f64,
    /// Noise-only stretch before every segment.
    pub gap_s: f64,
    /// RMS of a 50 Hz mains component added to every channel.
    pub line_noise: f64,
}

impl RecordingLayout {
    /// Back-to-back segments at the sample rate of the model input.
    pub const COMPACT: RecordingLayout = RecordingLayout {
        fs: SAMPLE_FS,
        gap_s: 0.0,
        line_noise: 0.0,
    };

    /// A raw-looking recording at twice the model rate, with gaps and mains
    /// interference, for exercising the preprocessing chain.
    pub const RAW: RecordingLayout = RecordingLayout {
        fs: 2.0 * SAMPLE_FS,
        gap_s: 2.0,
        line_noise: 0.5,
    };
}

/// One subject's continuous recording: segments ordered by class, then
/// segment index, each preceded by `gap_s` of background.
pub fn generate_recording(cfg: &SynthConfig, subject: usize, layout: RecordingLayout) -> Result<ContinuousRecording> {
    cfg.validate()?;
    let sigs = default_signatures();
    let (sig_rms, noise_rms) = cfg.amplitudes();
    let seg_len = (SEGMENT_S * layout.fs).round() as usize;
    let gap_len = (layout.gap_s * layout.fs).round() as usize;
    let n_seg = N_CLASSES * cfg.segments_per_class_per_subject;
    let total = n_seg * (gap_len + seg_len) + gap_len;
    let subject_seed = rng::derive(cfg.seed, subject as u64);

    let mut gains = rng::stream(subject_seed, 0);
    let gain: Vec<f64> = (0..N_CHANNELS)
        .map(|_| 1.0 + cfg.subject_variability * gains.gen_range(-1.0..=1.0))
        .collect();

    let mut data: Vec<Vec<f64>> = (0..N_CHANNELS)
        .map(|ch| {
            let mut r = rng::stream(subject_seed, 1 + ch as u64);
            let mut x = pink_noise(total, &mut r);
            x.iter_mut().for_each(|v| *v *= noise_rms);
            if layout.line_noise > 0.0 {
                let phase = r.gen_range(0.0..2.0 * PI);
                let a = layout.line_noise * 2f64.sqrt();
                for (t, v) in x.iter_mut().enumerate() {
                    *v += a * (2.0 * PI * 50.0 * t as f64 / layout.fs + phase).sin();
                }
            }
            x
        })
        .collect();

    // three equal sinusoids of amplitude A have RMS A·√1.5
    let amp = sig_rms / 1.5f64.sqrt();
    let mut events = Vec::with_capacity(n_seg);
    for (class, sig) in sigs.iter().enumerate().take(N_CLASSES) {
        for k in 0..cfg.segments_per_class_per_subject {
            let idx = class * cfg.segments_per_class_per_subject + k;
            let onset = gap_len + idx * (gap_len + seg_len);
            events.push(Event {
                onset_sample: onset,
                label: class as u8,
            });
            let mut r = rng::stream(subject_seed, 1000 + idx as u64);
            for &ch in &sig.channels {
                let a = amp * gain[ch];
                for f in sig.components() {
                    let phase = r.gen_range(0.0..2.0 * PI);
                    let w = 2.0 * PI * f / layout.fs;
                    for (t, v) in data[ch][onset..onset + seg_len].iter_mut().enumerate() {
                        *v += a * (w * t as f64 + phase).sin();
                    }
                }
            }
        }
    }
    ContinuousRecording::new(
        layout.fs,
        CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        data,
        events,
        subject as u32,
    )
}

/// The full labeled dataset, subject by subject.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<EegSample>> {
    cfg.validate()?;
    let per_subject: Vec<Vec<EegSample>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| {
            let rec = generate_recording(cfg, s, RecordingLayout::COMPACT)?;
            epoch(&rec, WINDOW_S, SEGMENT_S)
        })
        .collect::<Result<_>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}

/// Mean periodogram power of `x` over the DFT bins inside `[lo, hi]` Hz.
pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut power = 0.0;
    let mut bins = 0;
    for k in 0..=n / 2 {
        let f = k as f64 * fs / n as f64;
        if f < lo || f > hi {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let a = -2.0 * PI * (k * t) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        power += (re * re + im * im) / n as f64;
        bins += 1;
    }
    if bins == 0 {
        0.0
    } else {
        power / bins as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count_and_balance() {
        let cfg = SynthConfig::default();
        let data = generate(&cfg).unwrap();
        assert_eq!(data.len(), 1600);
        assert_eq!(cfg.expected_len(), 1600);
        for c in 0..4 {
            assert_eq!(data.iter().filter(|s| s.label == c).count(), 400);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig {
            n_subjects: 2,
            segments_per_class_per_subject: 1,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn signature_constraints() {
        let sigs = default_signatures();
        for (i, a) in sigs.iter().enumerate() {
            assert!(a.band().0 >= 1.0 && a.band().1 <= 45.0);
            assert!(a.channels.iter().all(|&c| (12..=20).contains(&c)));
            for b in &sigs[i + 1..] {
                assert!((a.center_hz - b.center_hz).abs() >= 4.0);
            }
        }
    }

    #[test]
    fn pink_noise_is_unit_rms() {
        let x = pink_noise(1024, &mut rng::stream(0, 0));
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / 1024.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        assert!(x.iter().sum::<f64>().abs() < 1e-9);
        let low = band_power(&x, 128.0, 1.0, 4.0);
        let high = band_power(&x, 128.0, 40.0, 60.0);
        assert!(low > 4.0 * high);
    }

    #[test]
    fn noise_free_limit_is_silent_off_signature() {
        let cfg = SynthConfig {
            n_subjects: 1,
            segments_per_class_per_subject: 1,
            snr: f64::INFINITY,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        // channel 0 is never active
        assert!(data.iter().all(|s| s.channel(0).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { snr: -1.0, ..SynthConfig::default() }).is_err());
        assert!(generate(&SynthConfig {
            subject_variability: 1.5,
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn raw_layout_recording() {
        let cfg = SynthConfig {
            n_subjects: 1,
            segments_per_class_per_subject: 1,
            ..SynthConfig::default()
        };
        let rec = generate_recording(&cfg, 0, RecordingLayout::RAW).unwrap();
        assert_eq!(rec.fs, 256.0);
        assert_eq!(rec.events.len(), 4);
        assert_eq!(rec.events[0].onset_sample, 512);
        assert_eq!(rec.n_samples(), 4 * (512 + 2560) + 512);
    }
}
