//! Epoch loop: shuffled center-slice windows, boundary-weighted loss,
//! optimizer steps, validation and early stopping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use voxelseg_core::data::extract_window;
use voxelseg_core::loss::{weight_map, weighted_cross_entropy, LossParams};
use voxelseg_core::net::{NetworkConfig, NetworkParams};
use voxelseg_core::ops::Mode;
use voxelseg_core::optim::Optimizer;
use voxelseg_core::{rng, Real};

use crate::config::TrainConfig;
use crate::evalkit::{segment, SegmentOptions};
use crate::format::checkpoint::{layout_diff, load_checkpoint, load_state, save_checkpoint, save_state, TrainState};
use crate::source::ScanSource;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STATE_FILE: &str = "train.state";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_HEADER: &str = "epoch\ttrain_loss_sum\ttrain_loss_mean\tval_loss\tval_dice\tseconds\tcheckpoint";

const SHUFFLE_STREAM: u64 = 0x5ff1e;
const DROPOUT_STREAM: u64 = 0xd209;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Weighted loss summed over every pixel of every window.
    pub train_loss_sum: f64,
    /// Mean over windows of the per-pixel weighted loss.
    pub train_loss_mean: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    pub seconds: f64,
    /// Relative to the output directory.
    pub checkpoint: PathBuf,
}

impl EpochRecord {
    fn tsv_fields(&self, timed: bool) -> String {
        let seconds = if timed { format!("{:.3}", self.seconds) } else { "-".into() };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.train_loss_sum,
            self.train_loss_mean,
            self.val_loss,
            self.val_dice,
            seconds,
            self.checkpoint.display()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch of the lowest validation loss.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        self.render(true)
    }

    /// The log with the wall-clock column blanked; equal across runs with
    /// the same config and seed.
    pub fn to_tsv_untimed(&self) -> String {
        self.render(false)
    }

    fn render(&self, timed: bool) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", r.tsv_fields(timed));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            bail!("training log does not start with the expected header");
        }
        let mut log = TrainLog::default();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                bail!("training log line {}: {} fields, expected 7", n + 2, f.len());
            }
            let num = |i: usize| -> Result<f64> {
                f[i].parse::<f64>()
                    .with_context(|| format!("training log line {}: field {}", n + 2, i + 1))
            };
            log.records.push(EpochRecord {
                epoch: f[0].parse().with_context(|| format!("training log line {}", n + 2))?,
                train_loss_sum: num(1)?,
                train_loss_mean: num(2)?,
                val_loss: num(3)?,
                val_dice: num(4)?,
                seconds: if f[5] == "-" { 0.0 } else { num(5)? },
                checkpoint: PathBuf::from(f[6]),
            });
        }
        log.best_epoch = best_of(&log.records);
        Ok(log)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e)
    }
}

/// First epoch with the strictly lowest validation loss.
fn best_of(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records {
        if best.map_or(true, |b| r.val_loss < b.val_loss) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetDice,
}

pub struct TrainOutcome<T> {
    pub best: NetworkParams<T>,
    pub log: TrainLog,
    pub stop: StopReason,
}

pub struct TrainSetup<'a> {
    pub network: &'a NetworkConfig,
    pub train: &'a TrainConfig,
    pub loss: &'a LossParams,
    pub seed: u64,
    pub output_dir: &'a Path,
    /// Continue from the last completed epoch recorded in `output_dir`.
    pub resume: bool,
}

struct WindowResult<T> {
    loss_sum: f64,
    loss_mean: f64,
    grads: Vec<(usize, Vec<T>)>,
    stats: Vec<(usize, Vec<T>)>,
}

fn checkpoint_name(epoch: usize) -> PathBuf {
    Path::new(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Mean weighted loss and mean volumetric Dice of `scans` in inference mode.
pub fn validate<T: Real>(params: &NetworkParams<T>, scans: &dyn ScanSource, loss: &LossParams) -> Result<(f64, f64)> {
    if scans.is_empty() {
        bail!(voxelseg_core::Error::Config("validation needs at least one scan".into()));
    }
    let options = SegmentOptions {
        crf: None,
        loss: Some(*loss),
    };
    let mut loss_total = 0.0;
    let mut dice_total = 0.0;
    for i in 0..scans.len() {
        let scan = scans.get(i)?;
        let seg = segment(params, &scan.record, &options)?;
        loss_total += seg.loss.expect("loss requested");
        dice_total += seg.report.dice_pre;
    }
    let n = scans.len() as f64;
    Ok((loss_total / n, dice_total / n))
}

fn stop_reason(log: &TrainLog, cfg: &TrainConfig, stale: usize) -> Option<StopReason> {
    let last = log.records.last()?;
    if cfg.target_dice.is_some_and(|t| last.val_dice >= t) {
        Some(StopReason::TargetDice)
    } else if stale >= cfg.patience {
        Some(StopReason::Patience)
    } else if last.epoch >= cfg.max_epochs {
        Some(StopReason::MaxEpochs)
    } else {
        None
    }
}

/// Trains from the seed (or resumes) and returns the parameters of the
/// epoch with the lowest validation loss.
///
/// Every slice of every training scan is the center of one window per
/// epoch, in an order shuffled from the seed and epoch. Windows of a batch
/// are evaluated in parallel; gradients and normalization statistics are
/// then applied in batch order, so results do not depend on thread count.
pub fn train<T: Real>(
    setup: &TrainSetup,
    train_set: &dyn ScanSource,
    validation: &dyn ScanSource,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let cfg = setup.train;
    cfg.validate()?;
    setup.loss.validate()?;
    if train_set.is_empty() {
        bail!(voxelseg_core::Error::Config("training needs at least one scan".into()));
    }
    if validation.is_empty() {
        bail!(voxelseg_core::Error::Config("validation needs at least one scan".into()));
    }
    let out = setup.output_dir;
    std::fs::create_dir_all(out.join(CHECKPOINT_DIR)).with_context(|| format!("cannot create {}", out.display()))?;

    let mut params = NetworkParams::<T>::build(setup.network, setup.seed)?;
    let mut optimizer = Optimizer::<T>::new(cfg.optimizer)?;
    let mut log = TrainLog::default();
    let mut best_params = None;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;

    let state_path = out.join(STATE_FILE);
    if setup.resume && state_path.exists() {
        let state: TrainState<T> = load_state(&state_path).context("reading training state")?;
        let epoch = state.epoch as usize;
        let ckpt = out.join(checkpoint_name(epoch));
        params = load_checkpoint(&ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        if params.config() != setup.network {
            let diff = layout_diff(setup.network, params.config())?;
            bail!("checkpoint {} was written for a different network:\n{}", ckpt.display(), diff.join("\n"));
        }
        let text = std::fs::read_to_string(out.join(LOG_FILE)).context("reading training log")?;
        log = TrainLog::parse_tsv(&text)?;
        log.records.retain(|r| r.epoch <= epoch);
        if log.records.len() != epoch {
            bail!("training log holds {} epochs but the state records {epoch}", log.records.len());
        }
        log.best_epoch = (state.best_epoch > 0).then_some(state.best_epoch as usize);
        best_loss = state.best_val_loss;
        stale = state.stale_epochs as usize;
        best_params = Some(load_checkpoint(&out.join(BEST_CHECKPOINT)).context("reading best checkpoint")?);
        optimizer = Optimizer::with_state(cfg.optimizer, state.optimizer)?;
        log::info!("resuming after epoch {epoch}");
    } else if setup.resume {
        log::info!("no training state in {}; starting from scratch", out.display());
    }

    let samples: Vec<(usize, usize)> = (0..train_set.len())
        .flat_map(|s| (0..train_set.depth(s)).map(move |z| (s, z)))
        .collect();
    let depth = setup.network.input_depth;
    let pixels = (setup.network.input_height * setup.network.input_width) as f64;

    let mut stop = stop_reason(&log, cfg, stale);
    while stop.is_none() {
        let epoch = log.records.len() + 1;
        let start = Instant::now();
        let mut order = samples.clone();
        order.shuffle(&mut rng::rng(setup.seed, &[SHUFFLE_STREAM, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut loss_mean = 0.0;
        let mut position = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let scale = T::from_f64(1.0 / (pixels * batch.len() as f64));
            let first = position;
            let results: Vec<WindowResult<T>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &(s, z))| -> Result<WindowResult<T>> {
                    let scan = train_set.get(s)?;
                    let window = extract_window::<T>(&scan.normalized, z, depth)?;
                    let seed = rng::derive(setup.seed, &[DROPOUT_STREAM, epoch as u64, (first + k) as u64]);
                    let mut pass = params.forward(&window, Mode::Train, seed)?;
                    let target = scan.record.mask.slice(z);
                    let wmap = weight_map(&target, setup.loss)?;
                    let loss = weighted_cross_entropy(&pass.output.probs, &target, &wmap)?;
                    if !loss.sum.is_finite() {
                        bail!(
                            "divergence at step {}: loss is {} on {} slice {z}",
                            optimizer.state().steps + 1,
                            loss.sum,
                            train_set.id(s)
                        );
                    }
                    let grad = loss.grad_logits.map(|g| g * scale);
                    let (grads, _) = params.backward_grads(&pass.cache, &grad)?;
                    Ok(WindowResult {
                        loss_sum: loss.sum,
                        loss_mean: loss.mean,
                        grads,
                        stats: pass.take_batch_stats(),
                    })
                })
                .collect::<Result<_>>()?;
            for r in &results {
                loss_sum += r.loss_sum;
                loss_mean += r.loss_mean;
                params.accumulate_grads(&r.grads)?;
                params.apply_batch_stats(&r.stats);
            }
            optimizer.step(&mut params)?;
            position += batch.len();
        }
        let (val_loss, val_dice) = validate(&params, validation, setup.loss)?;
        if !val_loss.is_finite() {
            bail!("divergence at step {}: validation loss is {val_loss}", optimizer.state().steps);
        }

        let rel = checkpoint_name(epoch);
        save_checkpoint(&params, &out.join(&rel))?;
        if val_loss < best_loss {
            best_loss = val_loss;
            stale = 0;
            log.best_epoch = Some(epoch);
            save_checkpoint(&params, &out.join(BEST_CHECKPOINT))?;
            best_params = Some(params.clone());
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss_sum: loss_sum,
            train_loss_mean: loss_mean / samples.len() as f64,
            val_loss,
            val_dice,
            seconds: start.elapsed().as_secs_f64(),
            checkpoint: rel,
        };
        on_epoch(&record);
        log.records.push(record);
        crate::format::write_file(&out.join(LOG_FILE), log.to_tsv().as_bytes())?;
        save_state(
            &TrainState {
                epoch: epoch as u32,
                best_epoch: log.best_epoch.unwrap_or(0) as u32,
                best_val_loss: best_loss,
                stale_epochs: stale as u32,
                optimizer: optimizer.state().clone(),
            },
            &state_path,
        )?;
        stop = stop_reason(&log, cfg, stale);
    }
    let best = best_params.expect("at least one epoch recorded");
    Ok(TrainOutcome {
        best,
        log,
        stop: stop.expect("loop ends with a reason"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, val_loss: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss_sum: 1.5,
            train_loss_mean: 0.1,
            val_loss,
            val_dice: 0.5,
            seconds: 2.25,
            checkpoint: checkpoint_name(epoch),
        }
    }

    #[test]
    fn log_round_trip() {
        let log = TrainLog {
            records: vec![record(1, 0.3), record(2, 0.1 + 0.2), record(3, 0.2)],
            best_epoch: Some(3),
        };
        let back = TrainLog::parse_tsv(&log.to_tsv()).unwrap();
        assert_eq!(back, log);
        assert!(log.to_tsv_untimed().lines().nth(1).unwrap().contains("\t-\t"));
    }

    #[test]
    fn best_is_first_minimum() {
        assert_eq!(best_of(&[record(1, 0.5), record(2, 0.2), record(3, 0.2)]), Some(2));
        assert_eq!(best_of(&[]), None);
    }

    #[test]
    fn stop_rules() {
        let cfg = TrainConfig {
            patience: 1,
            max_epochs: 3,
            ..Default::default()
        };
        let mut log = TrainLog::default();
        assert_eq!(stop_reason(&log, &cfg, 0), None);
        log.records.push(record(1, 0.5));
        assert_eq!(stop_reason(&log, &cfg, 0), None);
        assert_eq!(stop_reason(&log, &cfg, 1), Some(StopReason::Patience));
        log.records.push(record(2, 0.4));
        log.records.push(record(3, 0.3));
        assert_eq!(stop_reason(&log, &cfg, 0), Some(StopReason::MaxEpochs));
        let target = TrainConfig {
            target_dice: Some(0.5),
            ..cfg
        };
        assert_eq!(stop_reason(&log, &target, 0), Some(StopReason::TargetDice));
    }
}
