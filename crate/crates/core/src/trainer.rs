//! Deterministic training loop for the uncertainty head over a cache.
//!
//! The loop owns shuffling, intra-batch pairing, loss and gradient
//! accumulation, optimizer stepping, and checkpointing. Everything that
//! consumes randomness draws from a labeled sub-stream of the run seed, so a
//! run is bitwise-reproducible from (cache, config, initial head). The cache
//! is read-only throughout: embeddings, labels, and any classifier are
//! byte-identical before and after training.

use std::io::{Read, Seek};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::CacheReader;
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::head::UncertaintyHead;
use crate::losses::{l2_losspred, l2_losspred_grad, ranking_loss, task_cross_entropy, LossVariant};
use crate::optim::{CosineSchedule, Optimizer, OptimizerKind};
use crate::seeding::derive_seed;

/// Default training batch size. The published recipe does not state one for
/// head training; 256 is a convention of this implementation.
pub const DEFAULT_BATCH_SIZE: usize = 256;

/// Where per-sample task losses come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSource {
    /// Use the task losses stored in the cache.
    StoredLosses,
    /// Recompute cross-entropy from the cache's stored logits and labels.
    /// Matches [`StoredLosses`](LossSource::StoredLosses) bitwise when the
    /// cache was built with both tensors, because stored losses are defined
    /// as the cross-entropy of the stored logits.
    FromLogits,
}

/// Full description of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss_variant: LossVariant,
    pub loss_source: LossSource,
    /// Samples per optimizer step; must be even for the ranking objective.
    pub batch_size: usize,
    /// Optimizer steps to run; must equal `schedule.total_steps`.
    pub total_steps: usize,
    pub optimizer: OptimizerKind,
    pub schedule: CosineSchedule,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    /// Requires a checkpoint directory when nonzero.
    pub checkpoint_every: usize,
}

/// One optimizer step as recorded in the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    /// Zero-based step index; the learning rate below is the schedule at
    /// exactly this index.
    pub step: usize,
    pub lr: f64,
    /// Mean objective over the batch's pairs (ranking) or samples (L2).
    pub mean_loss: f64,
    /// Fraction of hinge pairs with a nonzero loss; for L2 the fraction of
    /// samples with a nonzero residual.
    pub active_fraction: f64,
}

/// Step-by-step record of a training run plus where checkpoints went.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Intermediate checkpoints as (step, path), in step order.
    pub checkpoints: Vec<(usize, PathBuf)>,
    /// The final head checkpoint, when a checkpoint directory was given.
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainLog {
    /// One line per step: `step lr mean_loss active_fraction`, floats in
    /// shortest-roundtrip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# step lr mean_loss active_fraction\n");
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {}\n",
                r.step, r.lr, r.mean_loss, r.active_fraction
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }
}

/// Pairs up `indices` for the ranking objective: a seeded permutation of the
/// slice is split in half and pair `k` is `(first_half[k], second_half[k])`,
/// so every index lands in exactly one pair.
pub fn make_pairs(indices: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if indices.len() < 2 || indices.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "pairing needs an even batch of at least 2, got {}",
            indices.len()
        )));
    }
    let mut permuted = indices.to_vec();
    permuted.shuffle(rng);
    let half = permuted.len() / 2;
    Ok((0..half).map(|k| (permuted[k], permuted[k + half])).collect())
}

/// One cached augmented view with its per-sample task losses resolved.
struct EpochView {
    embeddings: crate::matrix::Matrix<f32>,
    losses: Vec<f32>,
}

fn load_views<R: Read + Seek>(
    cache: &mut CacheReader<R>,
    source: LossSource,
) -> Result<Vec<EpochView>> {
    let header = *cache.header();
    match source {
        LossSource::StoredLosses if !header.has_losses => {
            return Err(Error::invalid(
                "cache stores no task losses; build it with losses or train from logits",
            ));
        }
        LossSource::FromLogits if !header.has_logits => {
            return Err(Error::invalid(
                "cache stores no logits; build it with logits or train from stored losses",
            ));
        }
        _ => {}
    }
    let n = cache.n_samples();
    let mut views = Vec::with_capacity(header.n_epochs as usize);
    for epoch in 0..header.n_epochs {
        let embeddings = cache.epoch_embeddings(epoch)?;
        let losses = match source {
            LossSource::StoredLosses => cache.epoch_losses(epoch)?,
            LossSource::FromLogits => {
                let logits = cache.epoch_logits(epoch)?;
                let labels = cache.epoch_labels(epoch)?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    out.push(task_cross_entropy(logits.row(i), labels[i] as usize)?);
                }
                out
            }
        };
        views.push(EpochView { embeddings, losses });
    }
    Ok(views)
}

fn validate_config<R: Read + Seek>(
    cache: &CacheReader<R>,
    head: &UncertaintyHead<f32>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<()> {
    match config.loss_variant {
        LossVariant::JointVanilla => {
            return Err(Error::invalid(
                "the joint objective needs task gradients into a live backbone; \
                 cached embeddings leave it nothing to train",
            ));
        }
        LossVariant::RankingMargin { margin, leeway } => {
            if !(margin.is_finite() && margin >= 0.0) {
                return Err(Error::invalid("ranking margin must be finite and >= 0"));
            }
            if !(leeway.is_finite() && leeway >= 0.0) {
                return Err(Error::invalid("ranking leeway must be finite and >= 0"));
            }
            if config.batch_size % 2 != 0 {
                return Err(Error::invalid(format!(
                    "ranking batches pair samples two at a time; batch_size {} is odd",
                    config.batch_size
                )));
            }
        }
        LossVariant::L2Regression => {}
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if config.batch_size > cache.n_samples() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds the cache's {} samples",
            config.batch_size,
            cache.n_samples()
        )));
    }
    if config.total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if config.total_steps != config.schedule.total_steps {
        return Err(Error::invalid(format!(
            "total_steps {} disagrees with the schedule's {}",
            config.total_steps, config.schedule.total_steps
        )));
    }
    if head.input_dim() != cache.embed_dim() {
        return Err(Error::ShapeMismatch {
            what: "head input dimension vs cache embeddings",
            expected: cache.embed_dim(),
            got: head.input_dim(),
        });
    }
    if config.checkpoint_every > 0 && checkpoint_dir.is_none() {
        return Err(Error::invalid(
            "checkpoint_every is set but no checkpoint directory was given",
        ));
    }
    Ok(())
}

/// Trains `head` in place over the cache and returns the step log.
///
/// Each epoch draws a fresh permutation of the sample indices from the
/// `"epoch-shuffle"` sub-stream of the seed and walks it in batches,
/// dropping the trailing partial batch; the epoch index selects which cached
/// augmented view supplies embeddings and losses, cycling when training runs
/// longer than the cache has views. Ranking batches are paired through the
/// `"pairing"` sub-stream, keyed by step. A non-finite batch loss or gradient
/// aborts with the offending step index; nothing is skipped or clamped, so
/// two runs with equal inputs produce bitwise-equal parameters and logs.
///
/// When `checkpoint_dir` is given, the final head is saved there as
/// `head_final.txt`, plus `head_step{N}.txt` every `checkpoint_every` steps.
pub fn train_head<R: Read + Seek>(
    cache: &mut CacheReader<R>,
    head: &mut UncertaintyHead<f32>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    validate_config(cache, head, config, checkpoint_dir)?;
    let views = load_views(cache, config.loss_source)?;
    let n = cache.n_samples();
    let batches_per_epoch = n / config.batch_size;

    let mut optimizer = Optimizer::new(config.optimizer);
    let mut log = TrainLog::default();
    let positions: Vec<usize> = (0..config.batch_size).collect();
    let mut step = 0usize;
    let mut epoch = 0u64;

    'training: loop {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "epoch-shuffle", epoch));
        order.shuffle(&mut shuffle_rng);
        let view = &views[(epoch % views.len() as u64) as usize];

        for b in 0..batches_per_epoch {
            if step == config.total_steps {
                break 'training;
            }
            let batch = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let lr = config.schedule.lr_at(step)?;
            let input = view.embeddings.select_rows(batch)?;
            let trace = head.forward(&input)?;
            let u = trace.uncertainties();

            let mut output_grad = vec![0.0f32; config.batch_size];
            let mut loss_sum = 0.0f64;
            let mut active = 0usize;
            let units;
            match config.loss_variant {
                LossVariant::RankingMargin { margin, leeway } => {
                    let mut pair_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        config.seed,
                        "pairing",
                        step as u64,
                    ));
                    let pairs = make_pairs(&positions, &mut pair_rng)?;
                    units = pairs.len();
                    let scale = 1.0 / units as f32;
                    for &(a, b) in &pairs {
                        let (loss, g1, g2) = ranking_loss(
                            u[a],
                            u[b],
                            view.losses[batch[a]],
                            view.losses[batch[b]],
                            margin,
                            leeway,
                        );
                        if loss > 0.0 {
                            active += 1;
                        }
                        loss_sum += loss as f64;
                        output_grad[a] += g1 * scale;
                        output_grad[b] += g2 * scale;
                    }
                }
                LossVariant::L2Regression => {
                    units = config.batch_size;
                    let scale = 1.0 / units as f32;
                    for (pos, &sample) in batch.iter().enumerate() {
                        let loss = l2_losspred(u[pos], view.losses[sample]);
                        if loss != 0.0 {
                            active += 1;
                        }
                        loss_sum += loss as f64;
                        output_grad[pos] = l2_losspred_grad(u[pos], view.losses[sample]) * scale;
                    }
                }
                LossVariant::JointVanilla => unreachable!("rejected by validate_config"),
            }

            let mean_loss = loss_sum / units as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let grads = head.backward(&trace, &output_grad)?;
            if grads.any_non_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let b3 = [grads.b3];
            let grad_tensors: [&[f32]; 6] = [
                grads.w1.as_slice(),
                &grads.b1,
                grads.w2.as_slice(),
                &grads.b2,
                &grads.w3,
                &b3,
            ];
            optimizer.step(&mut head.parameter_tensors_mut(), &grad_tensors, lr as f32)?;

            log.records.push(TrainRecord {
                step,
                lr,
                mean_loss,
                active_fraction: active as f64 / units as f64,
            });
            step += 1;

            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                let dir = checkpoint_dir.expect("validated above");
                let path = dir.join(format!("head_step{step}.txt"));
                head.save(&path)?;
                log.checkpoints.push((step, path));
            }
        }
        epoch += 1;
    }

    if let Some(dir) = checkpoint_dir {
        let path = dir.join("head_final.txt");
        head.save(&path)?;
        log.final_checkpoint = Some(path);
    }
    Ok(log)
}
