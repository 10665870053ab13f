//! `train` and `synth` drivers.

use std::io::Write;
use std::path::Path;

use crate::config::{CalibrationSplit, RunConfig};
use crate::data::{load_embeddings, load_tsv_with, split, synth_generate, Dataset, TsvOptions};
use crate::engine::{calibrate_thresholds, train_branchy, BranchyModel, TrainConfig, TrainingLog};
use crate::error::{Error, Result};
use crate::models::{init_parameters, Architecture, ModelKind};
use crate::persist::{save_model, SavedModel};

/// Train/dev/test partitions for a run. `test` is empty when dev comes from
/// a separate file.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

pub fn load_splits(config: &RunConfig) -> Result<Splits> {
    let seed = config.require_seed()?;
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no training data given (set data=PATH)".into()))?;
    let full = load_tsv_with(
        path,
        TsvOptions {
            min_count: config.min_count,
            ..Default::default()
        },
    )?;
    let mut splits = match &config.dev_data {
        Some(dev_path) => {
            let dev = load_tsv_with(
                dev_path,
                TsvOptions {
                    vocab: Some(&full.vocab),
                    labels: Some(&full.label_names),
                    min_count: config.min_count,
                },
            )?;
            let test = Dataset {
                examples: Vec::new(),
                skipped_empty: 0,
                ..dev.clone()
            };
            Splits { train: full, dev, test }
        }
        None => {
            let (train, dev, test) = split(&full, config.split, seed)?;
            Splits { train, dev, test }
        }
    };
    if config.model == ModelKind::StackedLstm {
        for d in [&mut splits.train, &mut splits.dev, &mut splits.test] {
            d.max_len = Some(config.max_len);
        }
    }
    Ok(splits)
}

pub fn architecture(config: &RunConfig, train: &Dataset) -> Architecture {
    Architecture {
        kind: config.model,
        vocab_size: train.vocab.len(),
        embed_dim: config.embed_dim,
        hidden_sizes: config.hidden_sizes.clone(),
        num_classes: train.num_classes(),
        trainable_embeddings: config.trainable_embeddings,
    }
}

/// A freshly initialized (untrained, uncalibrated) model for `train`'s schema.
pub fn build_model(config: &RunConfig, train: &Dataset) -> Result<BranchyModel> {
    let seed = config.require_seed()?;
    let mut network = init_parameters(&architecture(config, train), seed)?;
    if let Some(path) = &config.embeddings {
        let id = network.embedding.weights;
        load_embeddings(path, &train.vocab, network.params.get_mut(id))?;
    }
    BranchyModel::new(network, config.r_l, config.r_u, config.alpha_mode, config.max_len)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub saved: SavedModel,
    pub log: TrainingLog,
    pub splits: Splits,
}

/// Builds, trains and calibrates a model; per-epoch lines go to `progress`.
pub fn train_from_config(config: &RunConfig, progress: &mut dyn Write) -> Result<TrainOutcome> {
    config.validate_training()?;
    let seed = config.require_seed()?;
    let splits = load_splits(config)?;
    let mut model = build_model(config, &splits.train)?;
    let log = train_branchy(
        &mut model,
        &splits.train,
        &splits.dev,
        &TrainConfig {
            lr: config.lr,
            epochs: config.epochs,
            batch_size: config.batch_size,
            seed,
        },
    )?;
    for e in &log.epochs {
        let exits: Vec<String> = e.dev_exit_accuracy.iter().map(|a| format!("{a:.4}")).collect();
        // Progress output is best effort; a closed stdout must not fail training.
        let _ = writeln!(
            progress,
            "epoch {:>3}  loss {:.6}  dev_accuracy {:.4}  exits [{}]",
            e.epoch,
            e.mean_loss,
            e.dev_accuracy,
            exits.join(", ")
        );
    }
    let calibration = match config.calibration_split {
        CalibrationSplit::Train => &splits.train,
        CalibrationSplit::Dev => &splits.dev,
    };
    model.thresholds = Some(calibrate_thresholds(&model, calibration)?);
    let _ = writeln!(
        progress,
        "kept epoch {}; thresholds {:?}",
        log.best_epoch,
        model.thresholds.as_ref().expect("just set").values()
    );
    let saved = SavedModel {
        model,
        vocab: splits.train.vocab.clone(),
        labels: splits.train.label_names.clone(),
        config: config.clone(),
    };
    Ok(TrainOutcome { saved, log, splits })
}

pub fn run_train(config: &RunConfig, out: impl AsRef<Path>, progress: &mut dyn Write) -> Result<TrainOutcome> {
    let outcome = train_from_config(config, progress)?;
    save_model(&outcome.saved, out)?;
    Ok(outcome)
}

pub fn run_synth(config: &RunConfig, out: impl AsRef<Path>) -> Result<Dataset> {
    let data = synth_generate(
        config.classes,
        config.n_per_class,
        config.vocab_per_class,
        config.noise,
        config.require_seed()?,
    )?;
    data.write_tsv(out)?;
    Ok(data)
}
