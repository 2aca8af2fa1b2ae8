mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tsrda_core::metrics::{ConfusionMatrix, Scores};
use tsrda_core::model::Tscnn;
use tsrda_core::training::{
    self, ablation_suite, multi_run_seeds, AblationKind, Augmentation, ConditionResult, ExperimentConfig,
    MultiRunResult, Summary,
};
use tsrda_core::{dsp, eegb, synth, tsrda};

use config::{Config, ConfigError};
use manifest::{beside, RunManifest};

#[derive(Parser)]
#[command(name = "tsrda", version, about = "Taste-EEG preprocessing, augmentation and CNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config document (or a manifest from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=15`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Also write each subject's raw continuous recording (CSV + events JSON) here.
        #[arg(long)]
        recordings: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Filter, downsample and epoch continuous recordings.
    Preprocess {
        /// Recording CSV; pair each with an --events file.
        #[arg(long, required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, required = true)]
        events: Vec<PathBuf>,
        /// Sampling rate of the recordings in Hz.
        #[arg(long)]
        fs: f64,
        /// Subject id of the first recording; later ones count up.
        #[arg(long, default_value_t = 0)]
        first_subject: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stratified train/test split of a single-labeled dataset.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Append reconstructed dual-labeled samples to a training set.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model; writes checkpoint, history, results and manifest.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a single-labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Metrics JSON destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Repeated runs over the conditions of one ablation.
    Ablate {
        /// multiple_sweep, location_grid or component_grid.
        #[arg(long)]
        kind: String,
        /// Raw (unaugmented) training set.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    Ok(Config::load(common.config.as_deref(), &common.overrides)?)
}

fn read_single(path: &Path) -> Result<Vec<tsrda_core::EegSample>> {
    eegb::load_single(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Metrics {
    samples: u64,
    #[serde(flatten)]
    scores: Scores,
    confusion: ConfusionMatrix,
}

#[derive(Serialize)]
struct TrainResults {
    epochs: usize,
    best_accuracy: f64,
    best_f1: f64,
    best_kappa: f64,
    #[serde(rename = "final")]
    final_metrics: Option<Metrics>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            recordings,
            common,
        } => {
            let cfg = load_config(&common)?;
            let mut m = RunManifest::new("synth", &cfg);
            m.seed("synth", cfg.synth.seed);
            let data = synth::generate(&cfg.synth)?;
            eegb::save_single(&out, &data).with_context(|| format!("writing {}", out.display()))?;
            m.output(&out)?;
            if let Some(dir) = recordings {
                std::fs::create_dir_all(&dir)?;
                for s in 0..cfg.synth.n_subjects {
                    let rec = synth::generate_recording(&cfg.synth, s, synth::RecordingLayout::RAW)?;
                    let csv = dir.join(format!("subject_{s:02}.csv"));
                    let events = dir.join(format!("subject_{s:02}.events.json"));
                    dsp::write_recording(&rec, &csv, &events)?;
                    m.output(&csv)?;
                    m.output(&events)?;
                }
            }
            m.write(&beside(&out))?;
            eprintln!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::Preprocess {
            csv,
            events,
            fs,
            first_subject,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            if csv.len() != events.len() {
                bail!("{} --csv files but {} --events files", csv.len(), events.len());
            }
            let mut m = RunManifest::new("preprocess", &cfg);
            let mut all = Vec::new();
            for (i, (c, e)) in csv.iter().zip(&events).enumerate() {
                let rec = dsp::read_recording(c, e, fs, first_subject + i as u32)
                    .with_context(|| format!("reading {}", c.display()))?;
                all.extend(dsp::preprocess(&rec, &cfg.preprocess)?);
                m.input(c)?;
                m.input(e)?;
            }
            eegb::save_single(&out, &all)?;
            m.output(&out)?;
            m.write(&beside(&out))?;
            eprintln!("wrote {} samples to {}", all.len(), out.display());
        }
        Command::Split {
            input,
            train,
            test,
            common,
        } => {
            let cfg = load_config(&common)?;
            let data = read_single(&input)?;
            let (tr, te) = training::split_stratified(&data, cfg.split.test_fraction, cfg.split.seed)?;
            eegb::save_single(&train, &tr)?;
            eegb::save_single(&test, &te)?;
            let mut m = RunManifest::new("split", &cfg);
            m.seed("split", cfg.split.seed);
            m.input(&input)?;
            m.output(&train)?;
            m.output(&test)?;
            m.write(&beside(&train))?;
            eprintln!("split {} samples into {} train / {} test", data.len(), tr.len(), te.len());
        }
        Command::Augment { input, out, common } => {
            let cfg = load_config(&common)?;
            let data = read_single(&input)?;
            let aug = tsrda::augment_set(&data, &cfg.augment)?;
            eegb::save(&out, &aug)?;
            let mut m = RunManifest::new("augment", &cfg);
            m.seed("augment", cfg.augment.seed);
            m.input(&input)?;
            m.output(&out)?;
            m.write(&beside(&out))?;
            eprintln!("wrote {} samples to {}", aug.len(), out.display());
        }
        Command::Train {
            train,
            test,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            let train_set = eegb::load(&train).with_context(|| format!("reading {}", train.display()))?;
            let test_set = read_single(&test)?;
            let mut model = Tscnn::build(&cfg.model, cfg.model_seed)?;
            let result = training::train(&mut model, &train_set, &test_set, &cfg.train)?;
            std::fs::create_dir_all(&out_dir)?;
            let ckpt = out_dir.join("model.tsnn");
            model.save(&ckpt)?;
            let final_metrics = if result.history.is_empty() {
                None
            } else {
                let e = training::evaluate(&model, &test_set, cfg.train.eval_batch)?;
                Some(Metrics {
                    samples: e.confusion.total(),
                    scores: e.scores,
                    confusion: e.confusion,
                })
            };
            let history = out_dir.join("history.csv");
            let rows = [ConditionResult {
                condition: "train".into(),
                result: MultiRunResult {
                    seeds: vec![cfg.train.seed],
                    summary: Summary::of(std::slice::from_ref(&result)),
                    runs: vec![result.clone()],
                },
            }];
            training::write_history_csv(std::fs::File::create(&history)?, &rows)?;
            let results = out_dir.join("results.json");
            write_json(
                &results,
                &TrainResults {
                    epochs: result.history.len(),
                    best_accuracy: result.best_accuracy,
                    best_f1: result.best_f1,
                    best_kappa: result.best_kappa,
                    final_metrics,
                },
            )?;
            let mut m = RunManifest::new("train", &cfg);
            m.seed("model", cfg.model_seed);
            m.seed("shuffle", cfg.train.seed);
            m.input(&train)?;
            m.input(&test)?;
            for p in [&ckpt, &history, &results] {
                m.output(p)?;
            }
            m.write(&out_dir.join("manifest.json"))?;
            eprintln!(
                "trained {} epochs; best accuracy {:.4}",
                result.history.len(),
                result.best_accuracy
            );
        }
        Command::Eval {
            checkpoint,
            test,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let model = Tscnn::load(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let test_set = read_single(&test)?;
            let e = training::evaluate(&model, &test_set, cfg.train.eval_batch)?;
            let metrics = Metrics {
                samples: e.confusion.total(),
                scores: e.scores,
                confusion: e.confusion,
            };
            match out {
                Some(path) => {
                    write_json(&path, &metrics)?;
                    let mut m = RunManifest::new("eval", &cfg);
                    m.input(&checkpoint)?;
                    m.input(&test)?;
                    m.output(&path)?;
                    m.write(&beside(&path))?;
                }
                None => println!("{}", serde_json::to_string_pretty(&metrics)?),
            }
        }
        Command::Ablate {
            kind,
            train,
            test,
            out_dir,
            common,
        } => {
            let cfg = load_config(&common)?;
            let kind: AblationKind = kind.parse()?;
            let train_set = read_single(&train)?;
            let test_set = read_single(&test)?;
            let base = ExperimentConfig {
                model: cfg.model.clone(),
                train: cfg.train.clone(),
                augmentation: Augmentation::Tsrda(cfg.augment.clone()),
                validation_fraction: cfg.ablation.validation_fraction,
            };
            let seeds = multi_run_seeds(cfg.ablation.seed, cfg.ablation.runs);
            let rows = ablation_suite(kind, &train_set, &test_set, &base, &seeds)?;
            std::fs::create_dir_all(&out_dir)?;
            let history = out_dir.join("history.csv");
            training::write_history_csv(std::fs::File::create(&history)?, &rows)?;
            let summary = out_dir.join("summary.json");
            training::write_summary_json(std::fs::File::create(&summary)?, &rows)?;
            let mut m = RunManifest::new("ablate", &cfg);
            m.seed("ablation", cfg.ablation.seed);
            m.input(&train)?;
            m.input(&test)?;
            m.output(&history)?;
            m.output(&summary)?;
            m.write(&out_dir.join("manifest.json"))?;
            for r in training::summary_rows(&rows) {
                eprintln!(
                    "{:<24} acc {:.4} ± {:.4}  f1 {:.4} ± {:.4}  kappa {:.4} ± {:.4}",
                    r.condition, r.accuracy.mean, r.accuracy.std, r.f1.mean, r.f1.std, r.kappa.mean, r.kappa.std
                );
            }
        }
    }
    Ok(())
}

/// 2: bad config, 3: malformed EEGB file, 4: shape violation, 1: anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<tsrda_core::Error>() {
            return match e {
                tsrda_core::Error::Format { format: "EEGB", .. } => 3,
                tsrda_core::Error::Shape { .. } => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tsrda_core::tensor::retain_large_buffers();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
