//! Temporal and spatial reconstruction augmentation.
//!
//! A reconstructed sample is a raw training sample (`base`, label x) in which
//! one rectangle of timepoints × channels has been overwritten by the same
//! rectangle of another raw sample (`donor`, label y). The sample keeps both
//! labels; label y is weighted by the overwritten fraction of the 256×21 grid.
//!
//! Rectangle centers and extents are drawn from Beta distributions. The
//! defaults place centers uniformly in time and toward the high channel
//! indices (the lower rows of the montage), with uniform extents.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::{DualLabelSample, EegSample, N_CHANNELS, N_TIMEPOINTS};

/// Temporal extent `W` of the reconstruction grid.
pub const GRID_W: usize = N_TIMEPOINTS;
/// Spatial extent `H` of the reconstruction grid.
pub const GRID_H: usize = N_CHANNELS;

/// One of Beta(1,1), Beta(1,2), Beta(2,1), Beta(2,2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(u8, u8)", into = "(u8, u8)")]
pub struct BetaParams {
    alpha: u8,
    beta: u8,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { alpha: 1, beta: 1 };

    pub const ALL: [BetaParams; 4] = [
        BetaParams { alpha: 1, beta: 1 },
        BetaParams { alpha: 1, beta: 2 },
        BetaParams { alpha: 2, beta: 1 },
        BetaParams { alpha: 2, beta: 2 },
    ];

    pub fn new(alpha: u8, beta: u8) -> Result<Self> {
        if (1..=2).contains(&alpha) && (1..=2).contains(&beta) {
            Ok(BetaParams { alpha, beta })
        } else {
            Err(Error::input(format!(
                "unsupported Beta({alpha},{beta}); alpha and beta must be 1 or 2"
            )))
        }
    }

    pub fn alpha(self) -> u8 {
        self.alpha
    }

    pub fn beta(self) -> u8 {
        self.beta
    }

    /// Inverse CDF at `u ∈ [0, 1]`.
    pub fn quantile(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match (self.alpha, self.beta) {
            (1, 1) => u,
            (2, 1) => u.sqrt(),
            (1, 2) => 1.0 - (1.0 - u).sqrt(),
            _ if u > 0.5 => 1.0 - self.quantile(1.0 - u),
            _ => {
                // CDF 3λ² − 2λ³ is increasing on [0, 1] and symmetric about 1/2
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while hi - lo > 1e-10 {
                    let mid = 0.5 * (lo + hi);
                    if mid * mid * (3.0 - 2.0 * mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

impl TryFrom<(u8, u8)> for BetaParams {
    type Error = Error;

    fn try_from((a, b): (u8, u8)) -> Result<Self> {
        BetaParams::new(a, b)
    }
}

impl From<BetaParams> for (u8, u8) {
    fn from(p: BetaParams) -> Self {
        (p.alpha, p.beta)
    }
}

impl std::fmt::Display for BetaParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Beta({},{})", self.alpha, self.beta)
    }
}

/// Inverse-transform draw from a supported Beta distribution.
pub fn sample_beta(alpha: u8, beta: u8, u: f64) -> Result<f64> {
    Ok(BetaParams::new(alpha, beta)?.quantile(u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Reconstructed samples generated per raw sample.
    pub multiple: usize,
    /// Distribution of the temporal center fraction.
    pub loc_p: BetaParams,
    /// Distribution of the channel center fraction.
    pub loc_q: BetaParams,
    pub size_w: BetaParams,
    pub size_h: BetaParams,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            multiple: 3,
            loc_p: BetaParams::UNIFORM,
            loc_q: BetaParams { alpha: 2, beta: 1 },
            size_w: BetaParams::UNIFORM,
            size_h: BetaParams::UNIFORM,
            seed: 0,
        }
    }
}

/// Half-open rectangle `[t0, t1) × [c0, c1)` in timepoints × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutRect {
    pub t0: usize,
    pub t1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl CutRect {
    pub const EMPTY: CutRect = CutRect {
        t0: 0,
        t1: 0,
        c0: 0,
        c1: 0,
    };

    pub const FULL: CutRect = CutRect {
        t0: 0,
        t1: GRID_W,
        c0: 0,
        c1: GRID_H,
    };

    pub fn width(&self) -> usize {
        self.t1 - self.t0
    }

    pub fn height(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, ch: usize, t: usize) -> bool {
        (self.c0..self.c1).contains(&ch) && (self.t0..self.t1).contains(&t)
    }

    /// Fraction of the full grid covered by the rectangle.
    pub fn ratio(&self) -> f64 {
        self.area() as f64 / (GRID_W * GRID_H) as f64
    }
}

/// Rectangle centered at `(⌊λp·W⌋, ⌊λq·H⌋)` with extents `⌊λw·W⌋ × ⌊λh·H⌋`,
/// clipped to the 256×21 grid.
pub fn cut_rect(lp: f64, lq: f64, lw: f64, lh: f64) -> CutRect {
    let (t0, t1) = span(lp, lw, GRID_W);
    let (c0, c1) = span(lq, lh, GRID_H);
    CutRect { t0, t1, c0, c1 }
}

fn span(center_frac: f64, size_frac: f64, extent: usize) -> (usize, usize) {
    let center = (center_frac * extent as f64).floor() as i64;
    let size = (size_frac * extent as f64).floor() as i64;
    let lo = center - size / 2;
    let hi = center + (size + 1) / 2;
    let clip = |v: i64| v.clamp(0, extent as i64) as usize;
    let (lo, hi) = (clip(lo), clip(hi));
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// Overwrites `rect` of `base` with `donor`. An empty rectangle leaves the
/// base untouched and single-labeled.
pub fn reconstruct(base: &EegSample, donor: &EegSample, rect: &CutRect) -> Result<DualLabelSample> {
    if rect.t0 > rect.t1 || rect.t1 > GRID_W || rect.c0 > rect.c1 || rect.c1 > GRID_H {
        return Err(Error::input(format!("rectangle {rect:?} outside the sample grid")));
    }
    let mut data = base.data().to_vec();
    for ch in rect.c0..rect.c1 {
        let row = ch * N_TIMEPOINTS;
        data[row + rect.t0..row + rect.t1]
            .copy_from_slice(&donor.data()[row + rect.t0..row + rect.t1]);
    }
    let labely = if rect.area() == 0 { base.label } else { donor.label };
    DualLabelSample::new(data, base.label, labely, rect.ratio())
}

/// The random choices behind one reconstructed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub base: usize,
    pub donor: usize,
    pub lambdas: [f64; 4],
    pub rect: CutRect,
}

/// Draws base, donor and rectangle for reconstruction `index` out of a pool
/// of `pool` raw samples. The donor differs from the base whenever the pool
/// has more than one sample.
pub fn plan_reconstruction(cfg: &AugmentConfig, pool: usize, index: u64) -> Reconstruction {
    assert!(pool > 0, "empty pool");
    let mut r = rng::stream(cfg.seed, index);
    let base = r.gen_range(0..pool);
    let donor = if pool > 1 {
        let d = r.gen_range(0..pool - 1);
        if d >= base {
            d + 1
        } else {
            d
        }
    } else {
        base
    };
    let lambdas = [
        cfg.loc_p.quantile(r.gen()),
        cfg.loc_q.quantile(r.gen()),
        cfg.size_w.quantile(r.gen()),
        cfg.size_h.quantile(r.gen()),
    ];
    let rect = cut_rect(lambdas[0], lambdas[1], lambdas[2], lambdas[3]);
    Reconstruction {
        base,
        donor,
        lambdas,
        rect,
    }
}

/// Raw samples (as single-labeled) followed by `multiple · |train|`
/// reconstructions. Reconstruction `k` depends only on `(seed, k)`.
pub fn augment_set(train: &[EegSample], cfg: &AugmentConfig) -> Result<Vec<DualLabelSample>> {
    if train.is_empty() {
        return Err(Error::input("cannot augment an empty training set"));
    }
    let n = train.len();
    let extra: Vec<DualLabelSample> = (0..(cfg.multiple * n) as u64)
        .into_par_iter()
        .map(|k| {
            let plan = plan_reconstruction(cfg, n, k);
            reconstruct(&train[plan.base], &train[plan.donor], &plan.rect)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<DualLabelSample> = train.iter().map(DualLabelSample::from).collect();
    out.extend(extra);
    Ok(out)
}

/// Raw samples followed by `multiple · |train|` copies with i.i.d.
/// `N(0, sigma²)` noise added to every value. Copy `k` is of raw sample
/// `k mod |train|` and uses RNG stream `k`.
pub fn gaussian_noise_baseline(
    train: &[EegSample],
    sigma: f64,
    multiple: usize,
    seed: u64,
) -> Result<Vec<DualLabelSample>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("noise standard deviation {sigma}")));
    }
    let n = train.len();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::input(e.to_string()))?;
    let extra: Vec<DualLabelSample> = (0..multiple * n)
        .into_par_iter()
        .map(|k| {
            let src = &train[k % n];
            let mut r = rng::stream(seed, k as u64);
            let data = src.data().iter().map(|v| v + normal.sample(&mut r)).collect();
            DualLabelSample::new(data, src.label, src.label, 0.0)
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<DualLabelSample> = train.iter().map(DualLabelSample::from).collect();
    out.extend(extra);
    Ok(out)
}
