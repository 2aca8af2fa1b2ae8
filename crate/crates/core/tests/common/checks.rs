//! One function per acceptance criterion that can run in seconds. Each
//! returns a one-line detail on success and the reason on failure.

use rand::Rng;
use tsrda_core::dsp::{design_fir, filtfilt, FilterKind, PreprocessConfig};
use tsrda_core::metrics::ConfusionMatrix;
use tsrda_core::model::{shape_trace, ModelSpec, Tscnn};
use tsrda_core::tensor::{Graph, Tensor};
use tsrda_core::training::{dual_label_loss_value, split};
use tsrda_core::tsrda::{augment_set, plan_reconstruction, reconstruct, AugmentConfig, BetaParams, GRID_H, GRID_W};
use tsrda_core::{synth, N_CHANNELS, N_TIMEPOINTS};

use super::grad;
use super::oracle::{beta_cdf, brute_scores, ks_critical_01, ks_statistic, xcorr_peak_lag};
use super::{random_sample, rng, uniform};

pub type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn shape_fidelity() -> Outcome {
    let spec = ModelSpec::default();
    let trace = shape_trace(&spec).map_err(|e| e.to_string())?;
    ensure(trace.pre_flatten() == [256, 1, 3], || {
        format!("trace ends at {:?}", trace.pre_flatten())
    })?;
    let model = Tscnn::build(&spec, 0).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let x = g.constant(uniform(&mut rng(1), &[1, 1, N_CHANNELS, N_TIMEPOINTS], -1.0, 1.0));
    let mut seen = Vec::new();
    model
        .forward_traced(&mut g, x, &params, Some(&mut seen))
        .map_err(|e| e.to_string())?;
    ensure(seen == trace.entries, || {
        format!("forward dims {seen:?} differ from trace {:?}", trace.entries)
    })?;
    Ok(format!("{} layers, ends at 256x1x3", seen.len()))
}

pub fn gradient_suite() -> Outcome {
    let mut worst = (String::new(), 0.0_f64);
    for case in grad::cases() {
        let e = grad::check(&case, grad::INSTANCES);
        ensure(e < grad::TOLERANCE, || format!("{}: max relative error {e:.2e}", case.name))?;
        if e > worst.1 {
            worst = (case.name.to_string(), e);
        }
    }
    let net = (0..3).map(grad::network_case).fold(0.0, f64::max);
    ensure(net < grad::TOLERANCE, || format!("network: max relative error {net:.2e}"))?;
    Ok(format!(
        "{} ops x {} instances, worst {:.1e} ({}), network {:.1e}",
        grad::cases().len(),
        grad::INSTANCES,
        worst.1,
        worst.0,
        net
    ))
}

pub fn tsrda_invariants(trials: usize) -> Outcome {
    let mut r = rng(3);
    let pool: Vec<_> = (0..8).map(|i| random_sample(&mut r, (i % 4) as u8)).collect();
    let grid = (GRID_W * GRID_H) as f64;
    for trial in 0..trials {
        let pick = |r: &mut tsrda_core::rng::StreamRng| BetaParams::ALL[r.gen_range(0..4)];
        let cfg = AugmentConfig {
            multiple: 1,
            loc_p: pick(&mut r),
            loc_q: pick(&mut r),
            size_w: pick(&mut r),
            size_h: pick(&mut r),
            seed: r.gen(),
        };
        let n = r.gen_range(2..=pool.len());
        let index = r.gen_range(0..1_000_000);
        let plan = plan_reconstruction(&cfg, n, index);
        ensure(plan == plan_reconstruction(&cfg, n, index), || format!("trial {trial}: plan not deterministic"))?;
        let (base, donor) = (&pool[plan.base], &pool[plan.donor]);
        let out = reconstruct(base, donor, &plan.rect).map_err(|e| e.to_string())?;
        ensure(out == reconstruct(base, donor, &plan.rect).unwrap(), || {
            format!("trial {trial}: reconstruction not deterministic")
        })?;
        let mut inside = 0usize;
        for ch in 0..N_CHANNELS {
            for t in 0..N_TIMEPOINTS {
                let want = if plan.rect.contains(ch, t) {
                    inside += 1;
                    donor.at(ch, t)
                } else {
                    base.at(ch, t)
                };
                ensure(out.at(ch, t).to_bits() == want.to_bits(), || {
                    format!("trial {trial}: cell ({ch},{t}) {:?}", plan.rect)
                })?;
            }
        }
        // r = area / 5376 is not a dyadic fraction; scaling back lands within
        // an ulp of the integer count
        let scaled = out.r * grid;
        ensure((scaled - inside as f64).abs() <= 1e-9 && plan.rect.area() == inside, || {
            format!("trial {trial}: r*W*H = {scaled}, {inside} cells overwritten")
        })?;
        ensure(((1.0 - out.r) + out.r - 1.0).abs() <= f64::EPSILON, || {
            format!("trial {trial}: weights do not sum to 1")
        })?;
        let labely = if inside == 0 { base.label } else { donor.label };
        ensure(out.labelx == base.label && out.labely == labely, || {
            format!("trial {trial}: labels")
        })?;
    }
    Ok(format!("{trials} trials"))
}

pub fn beta_samplers(n: usize) -> Outcome {
    let crit = ks_critical_01(n);
    let mut stats = Vec::new();
    for (k, p) in BetaParams::ALL.into_iter().enumerate() {
        let mut r = tsrda_core::rng::stream(99, k as u64);
        let xs: Vec<f64> = (0..n).map(|_| p.quantile(r.gen())).collect();
        let d = ks_statistic(xs, |x| beta_cdf(p.alpha(), p.beta(), x));
        ensure(d < crit, || format!("{p}: D = {d:.4} >= {crit:.4}"))?;
        stats.push(format!("{p} D={d:.4}"));
    }
    let q = BetaParams::new(2, 1).unwrap().quantile(0.25);
    ensure((q - 0.5).abs() <= 1e-9, || format!("Beta(2,1) quantile at 0.25 is {q}"))?;
    Ok(format!("critical {crit:.4}; {}", stats.join(", ")))
}

pub fn counting_fidelity() -> Outcome {
    let all = synth::generate(&synth::SynthConfig::default()).map_err(|e| e.to_string())?;
    let (train, test) = split(&all, 0).map_err(|e| e.to_string())?;
    let aug = augment_set(&train, &AugmentConfig::default()).map_err(|e| e.to_string())?;
    let got = (all.len(), train.len(), test.len(), aug.len());
    ensure(got == (1600, 1200, 400, 4800), || format!("counts {got:?}"))?;
    Ok("1600 -> 1200/400 -> 4800".into())
}

fn reference_ce(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn loss_identities() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = r.gen_range(1..9);
        let logits = uniform(&mut r, &[n, 4], -5.0, 5.0);
        let x: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
        let y: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
        let rows: Vec<&[f64]> = logits.data().chunks(4).collect();
        for (ratio, labels) in [(0.0, &x), (1.0, &y)] {
            let got = dual_label_loss_value(&logits, &x, &y, &vec![ratio; n]).map_err(|e| e.to_string())?;
            let want = rows.iter().zip(labels).map(|(l, &c)| reference_ce(l, c)).sum::<f64>() / n as f64;
            worst = worst.max((got - want).abs());
        }
        let flat = Tensor::full(&[n, 4], r.gen_range(-3.0..3.0));
        let ratios: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let got = dual_label_loss_value(&flat, &x, &y, &ratios).map_err(|e| e.to_string())?;
        worst = worst.max((got - 4f64.ln()).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

pub fn metrics_oracle() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0_f64;
    for m in 0..100 {
        let k = r.gen_range(2..=6);
        let counts: Vec<u64> = (0..k * k)
            .map(|_| if r.gen_bool(0.2) { 0 } else { r.gen_range(0..40) })
            .collect();
        let mut counts = counts;
        if m % 10 == 0 {
            // a class absent from the truth
            counts[..k].iter_mut().for_each(|c| *c = 0);
        }
        counts[k + 1] += 1;
        let cm = ConfusionMatrix::from_counts(k, counts.clone()).map_err(|e| e.to_string())?;
        let (a, f, kap) = brute_scores(k, &counts);
        for (got, want) in [(cm.accuracy(), a), (cm.macro_f1(), f), (cm.kappa(), kap)] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.2e}"))?;
    let two = ConfusionMatrix::from_counts(2, vec![40, 10, 20, 30]).unwrap().kappa();
    ensure((two - 0.4).abs() <= 1e-12, || format!("kappa {two} on [[40,10],[20,30]]"))?;
    let truth: Vec<usize> = (0..400).map(|i| i % 4).collect();
    let constant = ConfusionMatrix::from_predictions(4, &truth, &[2; 400]).unwrap().kappa();
    ensure(constant.abs() <= 1e-12, || format!("single-class predictor kappa {constant}"))?;
    Ok(format!("100 matrices, max deviation {worst:.1e}; kappa examples exact"))
}

pub fn dsp_responses() -> Outcome {
    let cfg = PreprocessConfig::default();
    let fs = 256.0;
    let stop = design_fir(FilterKind::Bandstop, cfg.notch_hz.0, cfg.notch_hz.1, fs, cfg.n_taps)
        .map_err(|e| e.to_string())?;
    let pass = design_fir(FilterKind::Bandpass, cfg.bandpass_hz.0, cfg.bandpass_hz.1, fs, cfg.n_taps)
        .map_err(|e| e.to_string())?;
    let stop50 = stop.magnitude_db(50.0);
    ensure(stop50 <= -30.0, || format!("bandstop at 50 Hz: {stop50:.1} dB"))?;
    let pass25 = pass.magnitude_db(25.0);
    ensure(pass25.abs() <= 1.0, || format!("bandpass at 25 Hz: {pass25:.2} dB"))?;

    let n = 20 * fs as usize;
    let tone: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / fs).sin())
        .collect();
    let offset: Vec<f64> = tone.iter().map(|v| v + 1.0).collect();
    let y = filtfilt(&pass.taps, &offset);
    let mid = &y[n / 4..3 * n / 4];
    let dc = (mid.iter().sum::<f64>() / mid.len() as f64).abs();
    ensure(dc <= 0.01, || format!("DC residual {dc:.4} of unit offset"))?;

    let y = filtfilt(&pass.taps, &tone);
    let lag = xcorr_peak_lag(&tone[n / 4..3 * n / 4], &y[n / 4..3 * n / 4], 12);
    ensure(lag == 0, || format!("10 Hz tone delayed by {lag} samples"))?;
    Ok(format!(
        "stop@50 {stop50:.1} dB, pass@25 {pass25:+.3} dB, DC residual {:.2}%, lag 0",
        100.0 * dc
    ))
}
