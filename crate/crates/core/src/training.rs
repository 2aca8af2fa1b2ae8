//! Training loop, evaluation, repeated runs and the ablation suites.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Scores};
use crate::model::{argmax_rows, ModelSpec, Tscnn};
use crate::rng;
use crate::sample::{DualLabelSample, EegSample, N_CLASSES, SAMPLE_LEN};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::tsrda::{augment_set, gaussian_noise_baseline, AugmentConfig, BetaParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub train_batch: usize,
    pub eval_batch: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 5e-4,
            weight_decay: 1e-3,
            train_batch: 64,
            eval_batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::input(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::input(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return Err(Error::input("batch sizes must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Stratified split with `test_fraction` of each class (rounded) going to
/// the test side. Both sides keep the input order.
pub fn split_stratified(
    dataset: &[EegSample],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<EegSample>, Vec<EegSample>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::input(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let mut is_test = vec![false; dataset.len()];
    for class in 0..N_CLASSES as u8 {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset[i].label == class)
            .collect();
        if idx.is_empty() {
            return Err(Error::input(format!("class {class} has no samples")));
        }
        idx.shuffle(&mut rng::stream(seed, class as u64));
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = dataset
        .iter()
        .zip(&is_test)
        .partition(|(_, &t)| t);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        test.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

/// 3:1 stratified train/test split.
pub fn split(dataset: &[EegSample], seed: u64) -> Result<(Vec<EegSample>, Vec<EegSample>)> {
    split_stratified(dataset, 0.25, seed)
}

/// `(1−r)·CE(labelx) + r·CE(labely)`, averaged over the batch.
pub fn dual_label_loss(
    g: &mut Graph,
    logits: Var,
    labelx: &[usize],
    labely: &[usize],
    r: &[f64],
) -> Result<Var> {
    let k = g.shape(logits).get(1).copied().unwrap_or(0);
    if let Some(&bad) = labelx.iter().chain(labely).find(|&&l| l >= k) {
        return Err(Error::input(format!("label {bad} outside 0..{k}")));
    }
    if let Some(&bad) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("mixing ratio {bad} outside [0, 1]")));
    }
    let wx: Vec<f64> = r.iter().map(|r| 1.0 - r).collect();
    let lx = g.weighted_cross_entropy(logits, labelx, &wx)?;
    let ly = g.weighted_cross_entropy(logits, labely, r)?;
    g.add(lx, ly)
}

/// Loss value for fixed logits, outside of any training graph.
pub fn dual_label_loss_value(logits: &Tensor, labelx: &[usize], labely: &[usize], r: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = dual_label_loss(&mut g, l, labelx, labely, r)?;
    Ok(g.value(loss).data()[0])
}

fn batch_tensor<'a>(samples: impl ExactSizeIterator<Item = &'a [f64]>) -> Tensor {
    let n = samples.len();
    let mut data = Vec::with_capacity(n * SAMPLE_LEN);
    for s in samples {
        data.extend_from_slice(s);
    }
    Tensor::new(vec![n, 1, crate::N_CHANNELS, crate::N_TIMEPOINTS], data).expect("sample length is fixed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
}

/// Arg-max predictions over `testset` in batches of `batch`.
pub fn evaluate(model: &Tscnn, testset: &[EegSample], batch: usize) -> Result<Evaluation> {
    if testset.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let batch = batch.max(1);
    let mut confusion = ConfusionMatrix::new(model.spec().classes);
    for chunk in testset.chunks(batch) {
        let x = batch_tensor(chunk.iter().map(EegSample::data));
        let logits = model.logits(&x)?;
        let pred = argmax_rows(logits.data(), logits.shape()[1]);
        for (s, p) in chunk.iter().zip(pred) {
            confusion.record(s.label as usize, p)?;
        }
    }
    let scores = confusion.scores();
    Ok(Evaluation { confusion, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: Scores,
    /// Held-out validation scores when validation mode is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub history: Vec<EpochRecord>,
    pub best_accuracy: f64,
    pub best_f1: f64,
    pub best_kappa: f64,
    /// Test scores at the epoch with the highest validation accuracy (first
    /// such epoch), when validation mode is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<Scores>,
}

impl RunResult {
    fn from_history(history: Vec<EpochRecord>) -> Self {
        let best = |f: fn(&Scores) -> f64| {
            history
                .iter()
                .map(|e| f(&e.test))
                .fold(f64::NAN, f64::max)
        };
        let (best_accuracy, best_f1, best_kappa) = if history.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (best(|s| s.accuracy), best(|s| s.f1), best(|s| s.kappa))
        };
        let mut selected: Option<(f64, Scores)> = None;
        for e in &history {
            if let Some(v) = e.validation {
                if selected.is_none_or(|(acc, _)| v.accuracy > acc) {
                    selected = Some((v.accuracy, e.test));
                }
            }
        }
        RunResult {
            history,
            best_accuracy,
            best_f1,
            best_kappa,
            selected: selected.map(|(_, s)| s),
        }
    }

    /// The run's reported scores: the validation-selected epoch if there is
    /// one, else the per-metric bests.
    pub fn reported(&self) -> Scores {
        self.selected.unwrap_or(Scores {
            accuracy: self.best_accuracy,
            f1: self.best_f1,
            kappa: self.best_kappa,
        })
    }

    pub fn final_scores(&self) -> Option<Scores> {
        self.history.last().map(|e| e.test)
    }
}

/// Minibatch Adam on the dual-label loss, evaluating on `testset` after each
/// epoch. The shuffle of epoch `e` comes from stream `e` of `cfg.seed`.
pub fn train(
    model: &mut Tscnn,
    train_set: &[DualLabelSample],
    testset: &[EegSample],
    cfg: &TrainConfig,
) -> Result<RunResult> {
    train_with_validation(model, train_set, testset, None, cfg)
}

pub fn train_with_validation(
    model: &mut Tscnn,
    train_set: &[DualLabelSample],
    testset: &[EegSample],
    validation: Option<&[EegSample]>,
    cfg: &TrainConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.epochs > 0 && (train_set.is_empty() || testset.is_empty()) {
        return Err(Error::input("training and test sets must be non-empty"));
    }
    let mut adam = Adam::new(cfg.adam(), model.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.train_batch) {
            let x = batch_tensor(chunk.iter().map(|&i| train_set[i].data()));
            let lx: Vec<usize> = chunk.iter().map(|&i| train_set[i].labelx as usize).collect();
            let ly: Vec<usize> = chunk.iter().map(|&i| train_set[i].labely as usize).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| train_set[i].r).collect();

            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let input = g.constant(x);
            let logits = model.forward(&mut g, input, &params)?;
            let loss = dual_label_loss(&mut g, logits, &lx, &ly, &r)?;
            g.backward(loss)?;
            loss_sum += g.value(loss).data()[0] * chunk.len() as f64;
            let grads: Vec<&[f64]> = params
                .iter()
                .map(|&p| g.grad(p).expect("parameters require grad"))
                .collect();
            adam.step(model.params_mut(), &grads);
        }
        let test = evaluate(model, testset, cfg.eval_batch)?.scores;
        let validation = match validation {
            Some(v) => Some(evaluate(model, v, cfg.eval_batch)?.scores),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test,
            validation,
        });
    }
    Ok(RunResult::from_history(history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    None,
    Tsrda(AugmentConfig),
    GaussianNoise { sigma: f64, multiple: usize },
}

/// Everything one seeded run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub augmentation: Augmentation,
    /// Fraction of the training set held out per class for epoch selection.
    /// Off by default: bests are then taken over the test set.
    pub validation_fraction: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            augmentation: Augmentation::Tsrda(AugmentConfig::default()),
            validation_fraction: None,
        }
    }
}

/// Seeds of the model, the augmentation, the shuffle and the validation
/// split, all derived from `run_seed`.
pub fn run_seeds(run_seed: u64) -> [u64; 4] {
    [1, 2, 3, 4].map(|tag| rng::derive(run_seed, tag))
}

pub fn augment(train_raw: &[EegSample], aug: &Augmentation, seed: u64) -> Result<Vec<DualLabelSample>> {
    match aug {
        Augmentation::None => Ok(train_raw.iter().map(DualLabelSample::from).collect()),
        Augmentation::Tsrda(cfg) => augment_set(train_raw, &AugmentConfig { seed, ..cfg.clone() }),
        Augmentation::GaussianNoise { sigma, multiple } => {
            gaussian_noise_baseline(train_raw, *sigma, *multiple, seed)
        }
    }
}

/// One full run: optional validation split, augmentation, model build and
/// training, with every seed derived from `run_seed`.
pub fn run_experiment(
    train_raw: &[EegSample],
    testset: &[EegSample],
    cfg: &ExperimentConfig,
    run_seed: u64,
) -> Result<RunResult> {
    let [model_seed, aug_seed, shuffle_seed, val_seed] = run_seeds(run_seed);
    let (fit, validation) = match cfg.validation_fraction {
        Some(f) => {
            let (fit, val) = split_stratified(train_raw, f, val_seed)?;
            (fit, Some(val))
        }
        None => (train_raw.to_vec(), None),
    };
    let data = augment(&fit, &cfg.augmentation, aug_seed)?;
    let mut model = Tscnn::build(&cfg.model, model_seed)?;
    let tc = TrainConfig {
        seed: shuffle_seed,
        ..cfg.train.clone()
    };
    train_with_validation(&mut model, &data, testset, validation.as_deref(), &tc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanStd::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub kappa: MeanStd,
}

impl Summary {
    pub fn of(runs: &[RunResult]) -> Self {
        let pick = |f: fn(&Scores) -> f64| MeanStd::of(&runs.iter().map(|r| f(&r.reported())).collect::<Vec<_>>());
        Summary {
            accuracy: pick(|s| s.accuracy),
            f1: pick(|s| s.f1),
            kappa: pick(|s| s.kappa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunResult {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

pub const DEFAULT_RUNS: usize = 5;

/// Per-run seeds for `n` runs from one base seed.
pub fn multi_run_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| rng::derive(base_seed, 1000 + i)).collect()
}

/// Independent runs, one per seed, in parallel. The train/test split is
/// shared by all runs.
pub fn multi_run(
    train_raw: &[EegSample],
    testset: &[EegSample],
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<MultiRunResult> {
    if seeds.is_empty() {
        return Err(Error::input("multi_run needs at least one seed"));
    }
    let runs: Vec<RunResult> = seeds
        .par_iter()
        .map(|&s| run_experiment(train_raw, testset, cfg, s))
        .collect::<Result<_>>()?;
    Ok(MultiRunResult {
        seeds: seeds.to_vec(),
        summary: Summary::of(&runs),
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    MultipleSweep,
    LocationGrid,
    ComponentGrid,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiple_sweep" => Ok(AblationKind::MultipleSweep),
            "location_grid" => Ok(AblationKind::LocationGrid),
            "component_grid" => Ok(AblationKind::ComponentGrid),
            other => Err(Error::input(format!(
                "unknown ablation kind {other:?} (expected multiple_sweep, location_grid or component_grid)"
            ))),
        }
    }
}

/// The named experiment configurations of an ablation, derived from `base`.
/// TSRDA settings not being varied come from `base.augmentation` when it is
/// TSRDA, else from the defaults.
pub fn ablation_conditions(kind: AblationKind, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let tsrda = match &base.augmentation {
        Augmentation::Tsrda(c) => c.clone(),
        _ => AugmentConfig::default(),
    };
    let with = |aug: Augmentation, attention: bool| ExperimentConfig {
        augmentation: aug,
        model: ModelSpec {
            attention_enabled: attention,
            ..base.model.clone()
        },
        ..base.clone()
    };
    let attention = base.model.attention_enabled;
    match kind {
        AblationKind::MultipleSweep => (0..=6)
            .map(|m| {
                let aug = if m == 0 {
                    Augmentation::None
                } else {
                    Augmentation::Tsrda(AugmentConfig {
                        multiple: m,
                        ..tsrda.clone()
                    })
                };
                (format!("m={m}"), with(aug, attention))
            })
            .collect(),
        AblationKind::LocationGrid => {
            let mut out = Vec::new();
            for p in BetaParams::ALL {
                for q in BetaParams::ALL {
                    let aug = Augmentation::Tsrda(AugmentConfig {
                        multiple: 3,
                        loc_p: p,
                        loc_q: q,
                        ..tsrda.clone()
                    });
                    out.push((format!("p={p} q={q}"), with(aug, attention)));
                }
            }
            out
        }
        AblationKind::ComponentGrid => {
            let mut out = Vec::new();
            for (data, aug) in [
                ("Raw", Augmentation::None),
                ("TSRDA", Augmentation::Tsrda(tsrda.clone())),
            ] {
                for (net, attention) in [("TSCNN", false), ("TSCNN-CA", true)] {
                    out.push((format!("{data}+{net}"), with(aug.clone(), attention)));
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub result: MultiRunResult,
}

/// Runs [`multi_run`] for every condition of `kind`. Conditions run in
/// parallel; each uses the same run seeds.
pub fn ablation_suite(
    kind: AblationKind,
    train_raw: &[EegSample],
    testset: &[EegSample],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<ConditionResult>> {
    ablation_conditions(kind, base)
        .into_par_iter()
        .map(|(condition, cfg)| {
            Ok(ConditionResult {
                condition,
                result: multi_run(train_raw, testset, &cfg, seeds)?,
            })
        })
        .collect()
}

/// One row per (condition, run, epoch).
pub fn write_history_csv<W: Write>(w: W, rows: &[ConditionResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["condition", "run", "epoch", "train_loss", "acc", "f1", "kappa"])?;
    for c in rows {
        for (run, r) in c.result.runs.iter().enumerate() {
            for e in &r.history {
                out.write_record([
                    c.condition.clone(),
                    run.to_string(),
                    e.epoch.to_string(),
                    e.train_loss.to_string(),
                    e.test.accuracy.to_string(),
                    e.test.f1.to_string(),
                    e.test.kappa.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub kappa: MeanStd,
}

pub fn summary_rows(rows: &[ConditionResult]) -> Vec<SummaryRow> {
    rows.iter()
        .map(|c| SummaryRow {
            condition: c.condition.clone(),
            runs: c.result.runs.len(),
            accuracy: c.result.summary.accuracy,
            f1: c.result.summary.f1,
            kappa: c.result.summary.kappa,
        })
        .collect()
}

pub fn write_summary_json<W: Write>(w: W, rows: &[ConditionResult]) -> Result<()> {
    serde_json::to_writer_pretty(w, &summary_rows(rows))?;
    Ok(())
}
