//! The optimization loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{save_checkpoint, Model};
use crate::data::{augment, random_patch, AugmentConfig, Batch, Sample};
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::kv::KvMap;
use crate::tensor::{Element, Tensor, TensorError};

use super::config::TrainConfig;
use super::loss::deep_sup_loss;
use super::optim::{clip_grad_norm, poly_lr, sgd_nesterov_step};

pub const HISTORY: &str = "history.csv";
pub const HISTORY_HEADER: &str = "epoch,lr,loss_total,loss_dice,loss_ce,train_dice";

/// Means over one epoch's steps, plus full-resolution training Dice after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_dice: f64,
    pub loss_ce: f64,
    pub train_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_train_dice: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss_total, r.loss_dice, r.loss_ce, r.train_dice
        );
    }
    s
}

fn diverged(epoch: usize, step: usize, e: TensorError) -> Error {
    match e {
        TensorError::NonFinite { .. } => Error::Diverged {
            epoch,
            step,
            loss: f64::NAN,
        },
        e => e.into(),
    }
}

/// Trains `model` in place on already normalized samples.
///
/// One epoch visits every sample once in a seeded shuffled order, in
/// `ceil(n / batch_size)` steps. With `out`, writes `history.csv` after every
/// epoch and checkpoints to `out/final` and `out/best`.
pub fn train<E: Element>(
    model: &mut Model<E>,
    train: &[Sample],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with(model, train, cfg, out, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<E: Element>(
    model: &mut Model<E>,
    train: &[Sample],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate_for(model.config().size_divisor())?;
    if train.is_empty() {
        return Err(Error::data("empty training set"));
    }
    if let Some(s) = train
        .iter()
        .find(|s| s.height() < cfg.patch_size || s.width() < cfg.patch_size)
    {
        return Err(Error::config(format!(
            "{}: {}x{} is smaller than patch_size {}",
            s.id,
            s.height(),
            s.width(),
            cfg.patch_size
        )));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let aug = AugmentConfig::default();
    let mask = model.config().angle_channel_mask;
    let mut velocity: Vec<Tensor<E>> = model
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_dice) = (0, f64::NEG_INFINITY);
    let ps = cfg.patch_size;

    for epoch in 0..cfg.epochs {
        let lr = poly_lr(epoch, cfg.epochs, cfg.lr0, cfg.poly_exponent);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_dice, mut sum_ce) = (0.0, 0.0, 0.0);
        let steps = order.len().div_ceil(cfg.batch_size);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let patches: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let p = random_patch(&train[i], ps, ps, &mut rng);
                    if cfg.augment {
                        augment(&p, &aug, &mut rng)
                    } else {
                        p
                    }
                })
                .collect();
            let refs: Vec<&Sample> = patches.iter().collect();
            let batch = Batch::<E>::from_samples(&refs, &mask)?;
            let mut tape = model.bind();
            let a = tape.constant(batch.angles);
            let p = tape.constant(batch.phase);
            let fv = model.forward(&mut tape, a, p).map_err(|e| match e {
                Error::Tensor(t) => diverged(epoch, step, t),
                e => e,
            })?;
            let parts = deep_sup_loss(&mut tape, &fv.heads, &batch.target, cfg.dice_eps)
                .map_err(|e| diverged(epoch, step, e))?;
            let loss = tape.value(parts.total).item().to_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            tape.backward(parts.total).map_err(|e| diverged(epoch, step, e))?;
            let mut grads = model.params().grads(&tape);
            drop(tape);
            let norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: norm });
            }
            sgd_nesterov_step(model.params_mut().tensors_mut(), &grads, &mut velocity, lr, cfg.momentum);
            sum_total += loss;
            sum_dice += parts.dice;
            sum_ce += parts.ce;
        }
        let train_dice = predict::evaluate_normalized(model, train)?.mean_dice;
        let k = steps as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            loss_total: sum_total / k,
            loss_dice: sum_dice / k,
            loss_ce: sum_ce / k,
            train_dice,
        };
        on_epoch(&rec);
        history.push(rec);
        let improved = train_dice > best_dice;
        if improved {
            best_dice = train_dice;
            best_epoch = epoch;
        }
        if let Some(dir) = out {
            let path = dir.join(HISTORY);
            fs::write(&path, history_csv(&history)).map_err(|e| Error::io(&path, e))?;
            let mut meta = KvMap::new();
            meta.insert("epoch", epoch);
            meta.insert("train_dice", train_dice);
            meta.insert("train_config_hash", cfg.hash());
            if improved {
                save_checkpoint(model, &dir.join("best"), &meta)?;
            }
            if epoch + 1 == cfg.epochs {
                save_checkpoint(model, &dir.join("final"), &meta)?;
            }
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_train_dice: best_dice,
    })
}
