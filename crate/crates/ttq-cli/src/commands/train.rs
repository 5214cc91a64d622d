use std::path::{Path, PathBuf};

use serde::Deserialize;
use ttq_core::io::{save_ttrnn, TtRnnFile};
use ttq_core::pipeline::load_dataset;
use ttq_core::tensor::Real;
use ttq_core::ttrnn::{
    fit, history_to_jsonl, init_model, CellKind, FeatureSequence, FitOptions, OptimizerKind,
    TTRnnConfig,
};

use crate::{sidecar, Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Feature dataset directory (manifest + sequences).
    #[arg(long)]
    pub features: PathBuf,

    /// Held-out dataset directory; evaluation falls back to the training
    /// set when omitted.
    #[arg(long)]
    pub valid: Option<PathBuf>,

    /// Classifier definition (TOML).
    #[arg(long)]
    pub rnn_config: PathBuf,

    /// Where to store the trained model.
    #[arg(long)]
    pub out: PathBuf,

    /// Training-history JSONL path; defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

/// TOML schema for a classifier + its training section.
#[derive(Debug, Deserialize)]
struct RnnConfigFile {
    cell: String,
    input_modes: Vec<usize>,
    hidden_modes: Vec<usize>,
    ranks_ih: Vec<usize>,
    ranks_hh: Vec<usize>,
    #[serde(default)]
    dropout: f64,
    classes: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct TrainSection {
    epochs: usize,
    lr: f64,
    batch: usize,
    optimizer: String,
    momentum: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 50,
            lr: 1e-3,
            batch: 16,
            optimizer: "adam".to_string(),
            momentum: 0.9,
        }
    }
}

pub fn load_rnn_config(path: &Path, seed_override: u64) -> Result<(TTRnnConfig, FitOptions), CliError> {
    let text = std::fs::read_to_string(path)?;
    let file: RnnConfigFile = toml::from_str(&text)
        .map_err(|e| CliError::new("BAD_CONFIG", anyhow::anyhow!("{}: {e}", path.display())))?;
    let cell = match file.cell.as_str() {
        "plain_rnn" => CellKind::PlainRnn,
        "lstm" => CellKind::Lstm,
        other => {
            return Err(CliError::new(
                "BAD_CONFIG",
                anyhow::anyhow!("unknown cell {other:?} (expected plain_rnn or lstm)"),
            ))
        }
    };
    let optimizer = match file.train.optimizer.as_str() {
        "adam" => OptimizerKind::default(),
        "sgd" => OptimizerKind::SgdMomentum {
            momentum: file.train.momentum,
        },
        other => {
            return Err(CliError::new(
                "BAD_CONFIG",
                anyhow::anyhow!("unknown optimizer {other:?} (expected adam or sgd)"),
            ))
        }
    };
    let seed = if seed_override != 0 { seed_override } else { file.seed };
    let config = TTRnnConfig {
        cell,
        input_modes: file.input_modes,
        hidden_modes: file.hidden_modes,
        ranks_ih: file.ranks_ih,
        ranks_hh: file.ranks_hh,
        dropout_p: file.dropout,
        classes: file.classes,
        seed,
    };
    config.validate()?;
    let opts = FitOptions {
        epochs: file.train.epochs,
        lr: file.train.lr,
        batch_size: file.train.batch,
        optimizer,
        seed,
    };
    Ok((config, opts))
}

fn train_typed<T: Real>(
    config: TTRnnConfig,
    opts: &FitOptions,
    train_set: &[FeatureSequence<f32>],
    valid_set: &[FeatureSequence<f32>],
) -> Result<(ttq_core::ttrnn::TTRnnModel<T>, Vec<ttq_core::ttrnn::EpochRecord>), CliError> {
    let train_t: Vec<FeatureSequence<T>> = train_set.iter().map(|s| s.cast()).collect();
    let valid_t: Vec<FeatureSequence<T>> = valid_set.iter().map(|s| s.cast()).collect();
    let mut model = init_model::<T>(config)?;
    println!(
        "training {:?} cell: {} TT parameters, {} total trainable",
        model.config.cell,
        model.tt_param_count(),
        model.total_param_count()
    );
    let history = fit(&mut model, &train_t, &valid_t, opts)?;
    Ok((model, history))
}

pub fn run(cli: &Cli, args: &Args) -> Result<(), CliError> {
    let (manifest, train_set) = load_dataset(&args.features)?;
    let valid_set = match &args.valid {
        Some(dir) => load_dataset(dir)?.1,
        None => train_set.clone(),
    };
    let (config, opts) = load_rnn_config(&args.rnn_config, cli.seed)?;
    let expected: usize = config.input_modes.iter().product();
    let got: usize = manifest.input_modes.iter().product();
    if expected != got {
        return Err(CliError::new(
            "SHAPE",
            anyhow::anyhow!(
                "dataset stores {got}-element features ({:?}), model wants {expected} ({:?})",
                manifest.input_modes,
                config.input_modes
            ),
        ));
    }
    // reshape stored frames to the model's input modes when they differ
    let reshape = |set: Vec<FeatureSequence<f32>>| -> Result<Vec<FeatureSequence<f32>>, CliError> {
        let shape = ttq_core::tensor::Shape::new(config.input_modes.clone())
            .map_err(|e| CliError::new("SHAPE", anyhow::anyhow!("{e}")))?;
        set.into_iter()
            .map(|seq| {
                Ok(FeatureSequence {
                    frames: seq
                        .frames
                        .into_iter()
                        .map(|f| {
                            f.into_reshape(shape.clone())
                                .map_err(|e| CliError::new("SHAPE", anyhow::anyhow!("{e}")))
                        })
                        .collect::<Result<_, CliError>>()?,
                    label: seq.label,
                })
            })
            .collect()
    };
    let train_set = reshape(train_set)?;
    let valid_set = reshape(valid_set)?;

    let (file_model, history) = match cli.precision.as_str() {
        "f32" => {
            let (model, history) = train_typed::<f32>(config, &opts, &train_set, &valid_set)?;
            (TtRnnFile::F32(model), history)
        }
        _ => {
            let (model, history) = train_typed::<f64>(config, &opts, &train_set, &valid_set)?;
            (TtRnnFile::F64(model), history)
        }
    };

    for rec in &history {
        println!(
            "epoch {:>3}  loss {:.4}  train_acc {:.3}  valid_acc {:.3}  {:.2}s",
            rec.epoch, rec.loss, rec.train_acc, rec.valid_acc, rec.seconds
        );
    }

    save_ttrnn(&args.out, &file_model)?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.jsonl"));
    std::fs::write(&history_path, history_to_jsonl(&history))?;
    sidecar::record_run(&args.out, "train", cli.seed, &cli.precision)?;
    println!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(())
}
