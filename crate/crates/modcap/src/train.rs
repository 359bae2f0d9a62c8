//! The training loop: teacher forcing over reference captions, summed
//! per-item gradients, Adam with a linear learning-rate anneal, a joint
//! detector phase that ends by freezing the detectors, per-epoch
//! checkpointing, and exact resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Tape};
use crate::error::{Error, Result};
use crate::loss::{caption_loss, LossValues};
use crate::model::{forward_caption, scene_context, Ablation, Model};
use crate::optim::{adam_step, clip_global_norm, AdamState};
use crate::scene::Scene;
use crate::supervision::CaptionExample;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate_initial: f64,
    pub learning_rate_final: f64,
    /// First epoch (1-indexed) of the linear anneal toward the final rate.
    pub anneal_start_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// The detector losses participate for this many leading epochs, after
    /// which the detector parameters freeze.
    pub mil_joint_epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Optional hard cap on optimizer steps.
    pub max_iterations: Option<usize>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate_initial: 5e-4,
            learning_rate_final: 2.5e-4,
            anneal_start_epoch: 20,
            beta1: 0.8,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 30,
            mil_joint_epochs: 5,
            grad_clip: 5.0,
            seed: 0,
            precision: Precision::F64,
            max_iterations: None,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 50,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate_final > 0.0
            && self.learning_rate_final <= self.learning_rate_initial)
        {
            return Err(Error::Config(
                "need 0 < learning_rate_final <= learning_rate_initial".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for a 1-indexed epoch: flat before the anneal start,
    /// then linear down to the final rate at the last epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.anneal_start_epoch || self.epochs < self.anneal_start_epoch {
            return self.learning_rate_initial;
        }
        let span = (self.epochs - self.anneal_start_epoch + 1) as f64;
        let done = (epoch - self.anneal_start_epoch + 1) as f64;
        self.learning_rate_initial
            + (self.learning_rate_final - self.learning_rate_initial) * (done / span)
    }
}

/// One optimizer step's logged state.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub learning_rate: f64,
    pub losses: LossValues,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub iterations: usize,
    pub final_losses: LossValues,
    pub history: Vec<IterationRecord>,
}

/// Where training artifacts go. With an output directory set, each epoch
/// writes `checkpoint.bin` and `optimizer.bin` and appends to
/// `train_log.csv`.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from `checkpoint.bin` / `optimizer.bin` in `out_dir`.
    pub resume: bool,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

pub fn optimizer_path(dir: &Path) -> PathBuf {
    dir.join("optimizer.bin")
}

pub fn train_log_path(dir: &Path) -> PathBuf {
    dir.join("train_log.csv")
}

const LOG_HEADER: &str = "epoch,iteration,learning_rate,sentence_visual,sentence_language,mil_noisy_or,mil_attention,attribute_modules,composition,total";

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Gradients and loss values for one batch item.
fn item_pass(
    model: &Model,
    ablation: Ablation,
    precision: Precision,
    scene: &Scene,
    example: &CaptionExample,
    include_mil: bool,
) -> Result<(BTreeMap<String, Vec<f64>>, LossValues)> {
    let mut tape = Tape::with_precision(precision);
    let bound = model.bind(&mut tape)?;
    let ctx = scene_context(&mut tape, &bound, &model.config, ablation, scene)?;
    let steps = forward_caption(
        &mut tape,
        &bound,
        &model.config,
        ablation,
        &ctx,
        &example.token_ids,
    )?;
    let terms = caption_loss(&mut tape, ablation, &ctx, &steps, example, include_mil)?;
    let values = terms.values(&tape);
    let grads = tape.backward(terms.total)?;
    Ok((bound.gradients_by_name(&grads), values))
}

/// Persisted optimizer state: Adam moments plus progress counters, stored in
/// the same container format as parameter checkpoints.
fn save_optimizer(state: &AdamState, completed_epochs: usize, path: &Path) -> Result<()> {
    let mut store = ParamStore::new();
    store.insert(
        "meta",
        Tensor::new(
            vec![state.step_count as f64, completed_epochs as f64],
            vec![2],
        )?,
    );
    let names: Vec<String> = state
        .moments_names()
        .map(|s| s.to_string())
        .collect();
    for name in names {
        let (m, v) = state.moments(&name).unwrap();
        store.insert(format!("m.{name}"), Tensor::new(m.to_vec(), vec![m.len()])?);
        store.insert(format!("v.{name}"), Tensor::new(v.to_vec(), vec![v.len()])?);
    }
    save_checkpoint(&store, path)
}

fn load_optimizer(state: &mut AdamState, path: &Path) -> Result<usize> {
    let store = load_checkpoint(path)?;
    let meta = store.get("meta")?;
    state.step_count = meta.values()[0] as u64;
    let completed_epochs = meta.values()[1] as usize;
    for (name, tensor) in store.iter() {
        if let Some(param) = name.strip_prefix("m.") {
            let second = store.get(&format!("v.{param}"))?;
            state.restore_moments(param, tensor.values().to_vec(), second.values().to_vec());
        }
    }
    Ok(completed_epochs)
}

/// Trains `model` in place on the first reference caption of every scene.
pub fn train(
    model: &mut Model,
    scenes: &[Scene],
    ablation: Ablation,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }

    let examples: Vec<CaptionExample> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| CaptionExample::from_scene(i, s, 0, &model.vocab, &model.lexicon))
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(
        config.beta1,
        config.beta2,
        config.epsilon,
        config.learning_rate_initial,
    );
    let mut start_epoch = 1usize;
    if options.resume {
        let dir = options
            .out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("resume requires an output directory".into()))?;
        model.params = load_checkpoint(&checkpoint_path(dir))?;
        start_epoch = load_optimizer(&mut adam, &optimizer_path(dir))? + 1;
    }

    let mut log: Option<BufWriter<File>> = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = train_log_path(dir);
            if options.resume && path.exists() {
                Some(BufWriter::new(
                    OpenOptions::new().append(true).open(&path)?,
                ))
            } else {
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "{LOG_HEADER}")?;
                Some(w)
            }
        }
        None => None,
    };

    let mut history = Vec::new();
    let mut iteration = (start_epoch - 1).saturating_mul(scenes.len().div_ceil(config.batch_size));
    let mut final_losses = LossValues::default();
    let mut epochs_run = 0usize;
    let mut stop = false;

    for epoch in start_epoch..=config.epochs {
        if stop {
            break;
        }
        let include_mil = epoch <= config.mil_joint_epochs && !ablation.no_mil;
        if epoch > config.mil_joint_epochs {
            model.params.freeze_matching("det.region.");
            model.params.freeze_matching("det.att.");
        }
        adam.learning_rate = config.learning_rate_at(epoch);

        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch));

        let mut epoch_losses = LossValues::default();
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let items: Vec<Result<(BTreeMap<String, Vec<f64>>, LossValues)>> = chunk
                .par_iter()
                .map(|&i| {
                    item_pass(
                        model,
                        ablation,
                        config.precision,
                        &scenes[i],
                        &examples[i],
                        include_mil,
                    )
                })
                .collect();

            let scale = 1.0 / chunk.len() as f64;
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut losses = LossValues::default();
            for item in items {
                let (item_grads, item_losses) = item?;
                losses.add(&item_losses);
                for (name, g) in item_grads {
                    let acc = grads.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                    for (a, x) in acc.iter_mut().zip(&g) {
                        *a += x;
                    }
                }
            }
            losses.scale(scale);
            for g in grads.values_mut() {
                for x in g.iter_mut() {
                    *x *= scale;
                }
            }

            iteration += 1;
            for (term, value) in losses.named() {
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        term: term.to_string(),
                        epoch,
                        iteration,
                    });
                }
            }

            clip_global_norm(&mut grads, config.grad_clip);
            adam_step(&mut model.params, &grads, &mut adam)?;

            let record = IterationRecord {
                epoch,
                iteration,
                learning_rate: adam.learning_rate,
                losses,
            };
            if let Some(w) = log.as_mut() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    record.epoch,
                    record.iteration,
                    record.learning_rate,
                    losses.sentence_visual,
                    losses.sentence_language,
                    losses.mil_noisy_or,
                    losses.mil_attention,
                    losses.attribute_modules,
                    losses.composition,
                    losses.total
                )?;
            }
            history.push(record);
            epoch_losses.add(&losses);
            epoch_batches += 1;

            if let Some(max) = config.max_iterations {
                if iteration >= max {
                    stop = true;
                    break;
                }
            }
        }

        if epoch_batches > 0 {
            epoch_losses.scale(1.0 / epoch_batches as f64);
            final_losses = epoch_losses;
        }
        epochs_run = epoch - start_epoch + 1;

        if let Some(dir) = &options.out_dir {
            save_checkpoint(&model.params, &checkpoint_path(dir))?;
            save_optimizer(&adam, epoch, &optimizer_path(dir))?;
        }
    }

    if let Some(w) = log.as_mut() {
        w.flush()?;
    }

    Ok(TrainReport {
        epochs_run,
        iterations: iteration,
        final_losses,
        history,
    })
}
