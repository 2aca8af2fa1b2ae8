//! Helpers shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod checks;
pub mod grad;
pub mod oracle;

use rand::Rng;
use tsrda_core::rng::{self, StreamRng};
use tsrda_core::tensor::Tensor;
use tsrda_core::EegSample;

pub fn rng(seed: u64) -> StreamRng {
    rng::stream(0x7e57, seed)
}

pub fn uniform(r: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values at least 0.05 apart in random order, so max selections do not
/// flip under small perturbations.
pub fn distinct(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0) * 0.05 + r.gen_range(0.0..0.01))
        .collect();
    data.shuffle(r);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Magnitudes in `[0.05, 1]` with random sign, away from the ReLU kink.
pub fn off_kink(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..1.0);
            if r.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_sample(r: &mut StreamRng, label: u8) -> EegSample {
    let data = (0..tsrda_core::sample::SAMPLE_LEN)
        .map(|_| r.gen_range(-1.0..1.0))
        .collect();
    EegSample::new(data, label, 0, 0).unwrap()
}
