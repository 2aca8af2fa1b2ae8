//! Preprocessing of continuous recordings into labeled 2 s samples.
//!
//! The chain is: 0.5–50 Hz FIR bandpass, 49–51 Hz FIR bandstop, decimation
//! from 256 Hz to 128 Hz, then cutting every 10 s stimulation segment into
//! five consecutive 2 s windows. Filters are linear-phase windowed-sinc
//! designs applied forward and backward, so the effective magnitude response
//! is the square of the single-pass response and there is no phase shift.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{EegSample, N_CLASSES};

/// A stimulation marker: the segment starting at `onset_sample` carries `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub onset_sample: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// One vector of microvolt values per channel, all the same length.
    pub data: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    pub subject: u32,
}

impl ContinuousRecording {
    pub fn new(
        fs: f64,
        channel_names: Vec<String>,
        data: Vec<Vec<f64>>,
        events: Vec<Event>,
        subject: u32,
    ) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::input(format!("sampling rate must be positive, got {fs}")));
        }
        if data.is_empty() || channel_names.len() != data.len() {
            return Err(Error::input(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.len()
            )));
        }
        let len = data[0].len();
        if data.iter().any(|c| c.len() != len) {
            return Err(Error::input("channels differ in length"));
        }
        for (i, e) in events.iter().enumerate() {
            if e.onset_sample >= len {
                return Err(Error::input(format!(
                    "event {i} onset {} beyond recording length {len}",
                    e.onset_sample
                )));
            }
            if e.label as usize >= N_CLASSES {
                return Err(Error::input(format!("event {i} has label {}", e.label)));
            }
        }
        Ok(ContinuousRecording {
            fs,
            channel_names,
            data,
            events,
            subject,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    fn with_data(&self, data: Vec<Vec<f64>>) -> Self {
        ContinuousRecording {
            fs: self.fs,
            channel_names: self.channel_names.clone(),
            data,
            events: self.events.clone(),
            subject: self.subject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Bandpass,
    Bandstop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    /// Odd-length, symmetric coefficients.
    pub taps: Vec<f64>,
    pub kind: FilterKind,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl FirFilter {
    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        magnitude(&self.taps, freq_hz, self.fs)
    }

    /// Single-pass magnitude response in dB.
    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|i| self.taps[i] == self.taps[n - 1 - i])
    }
}

/// Magnitude of the DTFT of `taps` at `freq_hz`.
pub fn magnitude(taps: &[f64], freq_hz: f64, fs: f64) -> f64 {
    let omega = 2.0 * PI * freq_hz / fs;
    let (re, im) = taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (n, &h)| {
            let phase = omega * n as f64;
            (re + h * phase.cos(), im - h * phase.sin())
        });
    re.hypot(im)
}

/// Windowed-sinc (Hamming) design.
///
/// A bandpass is the difference of two lowpass prototypes, each normalized to
/// unit DC gain, so its DC gain is exactly zero; it is then scaled to unit gain
/// at the band center. A bandstop is the spectral inversion of the bandpass
/// over the same band.
pub fn design_fir(
    kind: FilterKind,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    n_taps: usize,
) -> Result<FirFilter> {
    if n_taps.is_multiple_of(2) {
        return Err(Error::input(format!("filter length must be odd, got {n_taps}")));
    }
    if !(fs > 0.0 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::input(format!(
            "invalid band {low_hz}..{high_hz} Hz at fs {fs} Hz"
        )));
    }
    let hi = lowpass(high_hz, fs, n_taps);
    let lo = lowpass(low_hz, fs, n_taps);
    let mut bp: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
    let gain = magnitude(&bp, 0.5 * (low_hz + high_hz), fs);
    bp.iter_mut().for_each(|h| *h /= gain);
    let taps = match kind {
        FilterKind::Bandpass => bp,
        FilterKind::Bandstop => {
            let mid = n_taps / 2;
            bp.iter()
                .enumerate()
                .map(|(i, h)| if i == mid { 1.0 - h } else { -h })
                .collect()
        }
    };
    Ok(FirFilter {
        taps,
        kind,
        low_hz,
        high_hz,
        fs,
    })
}

/// Hamming-windowed sinc lowpass with unit DC gain, built from one half and
/// mirrored so the taps are exactly symmetric.
fn lowpass(cutoff_hz: f64, fs: f64, n_taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / fs;
    let mid = n_taps / 2;
    let mut taps = vec![0.0; n_taps];
    for n in 0..=mid {
        let m = n as f64 - mid as f64;
        let sinc = if m == 0.0 {
            2.0 * fc
        } else {
            (2.0 * PI * fc * m).sin() / (PI * m)
        };
        let window = if n_taps == 1 {
            1.0
        } else {
            0.54 - 0.46 * (2.0 * PI * n as f64 / (n_taps - 1) as f64).cos()
        };
        taps[n] = sinc * window;
        taps[n_taps - 1 - n] = taps[n];
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// Causal FIR filtering with zero initial state.
fn lfilter(taps: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let kmax = n.min(taps.len() - 1);
            (0..=kmax).map(|k| taps[k] * x[n - k]).sum()
        })
        .collect()
}

/// Zero-phase filtering of one signal: reflect-pad, filter, reverse, filter
/// again, reverse, trim. Output length equals input length.
pub fn filtfilt(taps: &[f64], x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let pad = taps.len().min(x.len() - 1);
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| x[n - 1 - i]));
    let mut y = lfilter(taps, &ext);
    y.reverse();
    let mut y = lfilter(taps, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Zero-phase filtering of every channel independently.
pub fn apply_filter(rec: &ContinuousRecording, filter: &FirFilter) -> Result<ContinuousRecording> {
    if rec.n_samples() == 0 {
        return Err(Error::input("empty recording"));
    }
    let data = rec
        .data
        .par_iter()
        .map(|ch| filtfilt(&filter.taps, ch))
        .collect();
    Ok(rec.with_data(data))
}

/// Keeps every `factor`-th sample starting at index 0. Event onsets move to
/// the first retained sample at or after the original onset.
pub fn downsample(rec: &ContinuousRecording, factor: usize) -> Result<ContinuousRecording> {
    if factor == 0 {
        return Err(Error::input("downsampling factor must be a positive integer"));
    }
    let data = rec
        .data
        .iter()
        .map(|ch| ch.iter().step_by(factor).copied().collect())
        .collect();
    let mut out = rec.with_data(data);
    out.fs = rec.fs / factor as f64;
    for e in &mut out.events {
        e.onset_sample = e.onset_sample.div_ceil(factor);
    }
    Ok(out)
}

/// Cuts each stimulation segment into consecutive non-overlapping windows.
///
/// Every event marks a segment of `segment_s` seconds; it yields
/// `floor(segment_s / window_s)` samples carrying the event label. The
/// segment index within the recording becomes the sample's segment id.
pub fn epoch(rec: &ContinuousRecording, window_s: f64, segment_s: f64) -> Result<Vec<EegSample>> {
    if window_s.is_nan() || window_s <= 0.0 {
        return Err(Error::input(format!("window length {window_s} s")));
    }
    if segment_s < window_s {
        return Err(Error::input(format!(
            "segment of {segment_s} s is shorter than one {window_s} s window"
        )));
    }
    let win = (window_s * rec.fs).round() as usize;
    let per_segment = (segment_s / window_s + 1e-9).floor() as usize;
    let len = rec.n_samples();
    let mut out = Vec::with_capacity(rec.events.len() * per_segment);
    for (j, ev) in rec.events.iter().enumerate() {
        let end = ev.onset_sample + per_segment * win;
        if end > len {
            return Err(Error::input(format!(
                "event {j} (onset sample {}, label {}) needs samples up to {end}, recording has {len}",
                ev.onset_sample, ev.label
            )));
        }
        for k in 0..per_segment {
            let start = ev.onset_sample + k * win;
            let mut data = Vec::with_capacity(rec.n_channels() * win);
            for ch in &rec.data {
                data.extend_from_slice(&ch[start..start + win]);
            }
            out.push(EegSample::new(data, ev.label, rec.subject, j as u32)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bandpass_hz: (f64, f64),
    pub notch_hz: (f64, f64),
    pub n_taps: usize,
    pub downsample: usize,
    pub window_s: f64,
    pub segment_s: f64,
    /// Per-channel z-scoring of each finished sample.
    pub zscore: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bandpass_hz: (0.5, 50.0),
            notch_hz: (49.0, 51.0),
            n_taps: 513,
            downsample: 2,
            window_s: 2.0,
            segment_s: 10.0,
            zscore: false,
        }
    }
}

/// Full chain: bandpass, notch, decimate, epoch.
pub fn preprocess(rec: &ContinuousRecording, cfg: &PreprocessConfig) -> Result<Vec<EegSample>> {
    let bp = design_fir(
        FilterKind::Bandpass,
        cfg.bandpass_hz.0,
        cfg.bandpass_hz.1,
        rec.fs,
        cfg.n_taps,
    )?;
    let notch = design_fir(
        FilterKind::Bandstop,
        cfg.notch_hz.0,
        cfg.notch_hz.1,
        rec.fs,
        cfg.n_taps,
    )?;
    let filtered = apply_filter(&apply_filter(rec, &bp)?, &notch)?;
    let decimated = downsample(&filtered, cfg.downsample)?;
    let mut samples = epoch(&decimated, cfg.window_s, cfg.segment_s)?;
    if cfg.zscore {
        samples.iter_mut().for_each(EegSample::zscore_channels);
    }
    Ok(samples)
}

/// Reads a recording from a CSV file (header of channel names, one row per
/// timepoint) and a JSON list of events.
pub fn read_recording(
    csv_path: &Path,
    events_path: &Path,
    fs: f64,
    subject: u32,
) -> Result<ContinuousRecording> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let names: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut data = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != names.len() {
            return Err(Error::Format {
                format: "recording csv",
                offset,
                msg: format!("{} fields, header has {}", record.len(), names.len()),
            });
        }
        for (ch, field) in data.iter_mut().zip(record.iter()) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                format: "recording csv",
                offset,
                msg: format!("not a number: {field:?}"),
            })?;
            ch.push(v);
        }
    }
    let events: Vec<Event> = serde_json::from_reader(BufReader::new(File::open(events_path)?))?;
    ContinuousRecording::new(fs, names, data, events, subject)
}

pub fn write_recording(rec: &ContinuousRecording, csv_path: &Path, events_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(&rec.channel_names)?;
    let mut row = Vec::with_capacity(rec.n_channels());
    for t in 0..rec.n_samples() {
        row.clear();
        row.extend(rec.data.iter().map(|ch| ch[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut ev = BufWriter::new(File::create(events_path)?);
    serde_json::to_writer_pretty(&mut ev, &rec.events)?;
    ev.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{CHANNEL_NAMES, N_CHANNELS, N_TIMEPOINTS};

    fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs + phase).sin())
            .collect()
    }

    fn recording(fs: f64, n: usize, events: Vec<Event>) -> ContinuousRecording {
        let data = (0..N_CHANNELS)
            .map(|c| sine(3.0 + c as f64, fs, n, 0.1 * c as f64))
            .collect();
        let names = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
        ContinuousRecording::new(fs, names, data, events, 7).unwrap()
    }

    #[test]
    fn designs_are_linear_phase() {
        for (kind, lo, hi, n) in [
            (FilterKind::Bandpass, 0.5, 50.0, 513),
            (FilterKind::Bandstop, 49.0, 51.0, 513),
            (FilterKind::Bandpass, 8.0, 12.0, 101),
            (FilterKind::Bandstop, 10.0, 30.0, 7),
        ] {
            let f = design_fir(kind, lo, hi, 256.0, n).unwrap();
            assert_eq!(f.taps.len(), n);
            assert!(f.is_symmetric(), "{kind:?} {lo}-{hi}");
        }
    }

    #[test]
    fn design_rejects_bad_arguments() {
        assert!(design_fir(FilterKind::Bandpass, 0.5, 50.0, 256.0, 512).is_err());
        assert!(design_fir(FilterKind::Bandpass, 50.0, 0.5, 256.0, 513).is_err());
        assert!(design_fir(FilterKind::Bandpass, 0.0, 50.0, 256.0, 513).is_err());
        assert!(design_fir(FilterKind::Bandstop, 49.0, 128.0, 256.0, 513).is_err());
    }

    #[test]
    fn bandpass_passes_25hz() {
        let f = design_fir(FilterKind::Bandpass, 0.5, 50.0, 256.0, 513).unwrap();
        assert!(f.magnitude_db(25.0).abs() <= 1.0);
        assert!(f.magnitude(0.0) < 1e-9);
    }

    #[test]
    fn bandstop_rejects_50hz() {
        let f = design_fir(FilterKind::Bandstop, 49.0, 51.0, 256.0, 513).unwrap();
        assert!(f.magnitude_db(50.0) <= -30.0);
        assert!((f.magnitude(10.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn unit_filter_is_identity() {
        let x = sine(7.0, 256.0, 300, 0.3);
        assert_eq!(filtfilt(&[1.0], &x), x);
        assert!(filtfilt(&[1.0], &[]).is_empty());
    }

    #[test]
    fn filtering_keeps_length_and_channel_order() {
        let rec = recording(256.0, 1000, vec![]);
        let f = design_fir(FilterKind::Bandpass, 0.5, 50.0, 256.0, 129).unwrap();
        let out = apply_filter(&rec, &f).unwrap();
        assert_eq!(out.n_samples(), 1000);
        assert_eq!(out.channel_names, rec.channel_names);
        for (c, ch) in out.data.iter().enumerate() {
            assert_eq!(*ch, filtfilt(&f.taps, &rec.data[c]));
        }
    }

    #[test]
    fn downsample_halves_rate() {
        let rec = recording(256.0, 512, vec![Event { onset_sample: 3, label: 1 }]);
        let d = downsample(&rec, 2).unwrap();
        assert_eq!(d.n_samples(), 256);
        assert_eq!(d.fs, 128.0);
        assert_eq!(d.events[0].onset_sample, 2);
        assert_eq!(d.data[4][10], rec.data[4][20]);
        assert!(downsample(&rec, 0).is_err());
    }

    #[test]
    fn downsampled_sine_matches_analytic() {
        let x = sine(10.0, 256.0, 2048, 0.4);
        let names = vec!["a".to_string()];
        let rec = ContinuousRecording::new(256.0, names, vec![x], vec![], 0).unwrap();
        let d = downsample(&rec, 2).unwrap();
        let want = sine(10.0, 128.0, 1024, 0.4);
        let corr = correlation(&d.data[0], &want);
        assert!(corr > 0.999);

        let names = vec!["a".to_string()];
        let flat = ContinuousRecording::new(256.0, names, vec![vec![2.5; 64]], vec![], 0).unwrap();
        assert!(downsample(&flat, 2).unwrap().data[0].iter().all(|&v| v == 2.5));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn one_segment_gives_five_samples() {
        let rec = recording(128.0, 1400, vec![Event { onset_sample: 100, label: 2 }]);
        let samples = epoch(&rec, 2.0, 10.0).unwrap();
        assert_eq!(samples.len(), 5);
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.label, 2);
            assert_eq!(s.subject, 7);
            assert_eq!(s.data().len(), N_CHANNELS * N_TIMEPOINTS);
            assert_eq!(s.at(3, 0), rec.data[3][100 + k * 256]);
            assert_eq!(s.at(20, 255), rec.data[20][100 + k * 256 + 255]);
        }
    }

    #[test]
    fn epoch_errors() {
        let rec = recording(128.0, 1400, vec![Event { onset_sample: 200, label: 0 }]);
        let err = epoch(&rec, 2.0, 10.0).unwrap_err();
        assert!(err.to_string().contains("event 0"), "{err}");
        let rec = recording(128.0, 1400, vec![Event { onset_sample: 0, label: 0 }]);
        assert!(epoch(&rec, 2.0, 1.5).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = recording(256.0, 40, vec![Event { onset_sample: 5, label: 3 }]);
        let (c, e) = (dir.path().join("r.csv"), dir.path().join("r.json"));
        write_recording(&rec, &c, &e).unwrap();
        let back = read_recording(&c, &e, 256.0, 7).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn csv_reports_bad_field_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = (dir.path().join("r.csv"), dir.path().join("r.json"));
        std::fs::write(&c, "a,b\n1,2\n3,x\n").unwrap();
        std::fs::write(&e, "[]").unwrap();
        match read_recording(&c, &e, 256.0, 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected {other:?}"),
        }
    }
}
