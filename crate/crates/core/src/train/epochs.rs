//! Minibatch training with per-epoch validation and best-checkpoint tracking.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, EarlyStopper, Loss};
use crate::autograd::{ForwardCtx, Mode};
use crate::data_io::{batch, Sample};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub threshold: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Fill the `seconds` column; off by default so logs are reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            batch_size: 5,
            patience: EarlyStopper::DEFAULT_PATIENCE,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs_max and batch_size must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_iou: f64,
    pub val_f1: f64,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_iou: Option<f64>,
    pub stopped_early: bool,
    /// Epoch whose loss or gradients became non-finite.
    pub diverged_at: Option<usize>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_iou,val_f1,seconds\n");
        for r in &self.records {
            let secs = r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{secs}\n",
                r.epoch, r.train_loss, r.val_iou, r.val_f1
            ));
        }
        out
    }
}

pub struct TrainOutcome<T: Scalar> {
    pub log: TrainingLog,
    /// Parameters from the epoch with the best validation IoU.
    pub best: Model<T>,
}

/// Probability maps for `samples` in eval mode, `batch_size` at a time.
pub fn predict_all<T: Scalar>(model: &Model<T>, samples: &[Sample<T>], batch_size: usize) -> Result<Vec<Tensor4<T>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let (x, _) = batch(&refs)?;
        let p = model.predict(&x)?;
        for i in 0..chunk.len() {
            out.push(p.slice_batch(i..i + 1)?);
        }
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample<T>],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    let preds = predict_all(model, samples, batch_size)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let masks: Vec<Tensor4<T>> = samples.iter().map(|s| s.mask.clone()).collect();
    MetricsReport::evaluate(&ids, &preds, &masks, threshold)
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::Diverged { .. }
    )
}

/// One forward/backward/update on a batch; returns the batch loss.
fn step<T: Scalar>(model: &mut Model<T>, samples: &[&Sample<T>], loss: &Loss, adam: &mut AdamState) -> Result<f64> {
    let (x, y) = batch(samples)?;
    let (value, grads, updates) = {
        let mut ctx = ForwardCtx::new(&model.store, Mode::Train);
        let pred = model.forward(&mut ctx, &x)?;
        let l = loss.record(&mut ctx.tape, pred, &y)?;
        let value = ctx.value(l)?.data()[0].as_f64();
        let g = ctx.tape.backward(l)?;
        (value, ctx.param_grads(&g)?, ctx.take_bn_updates())
    };
    if !value.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    for (name, g) in &grads {
        model.store.accumulate_grad(name, g)?;
    }
    adam_step(&mut model.store, adam)?;
    for u in &updates {
        model.store.apply_bn_update(u)?;
    }
    Ok(value)
}

/// Trains `model` in place. `on_epoch` sees every record as it is made.
#[allow(clippy::too_many_arguments)]
pub fn train_loop<T: Scalar>(
    model: &mut Model<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    loss: &Loss,
    adam: &AdamConfig,
    mut stopper: EarlyStopper,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    loss.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    for s in train.iter().chain(val) {
        model.check_input(&s.image)?;
    }
    let mut adam = AdamState::new(*adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::default();
    let mut best = model.clone();

    for epoch in 1..=cfg.epochs_max {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut diverged = false;
        for idx in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample<T>> = idx.iter().map(|&i| &train[i]).collect();
            match step(model, &samples, loss, &mut adam) {
                Ok(v) => total += v * samples.len() as f64,
                Err(e) if is_divergence(&e) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if diverged {
            log.diverged_at = Some(epoch);
            break;
        }
        let report = match evaluate(model, val, cfg.batch_size, cfg.threshold) {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                log.diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_iou: report.mean_iou,
            val_f1: report.mean_f1,
            seconds: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        let decision = stopper.observe(record.val_iou);
        if decision.improved {
            best = model.clone();
            log.best_epoch = Some(epoch);
            log.best_val_iou = Some(record.val_iou);
        }
        on_epoch(&record);
        log.records.push(record);
        if decision.stop {
            log.stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { log, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{gen_synthetic, SynthConfig};
    use crate::models::{build_caggnet, Arch, ModelConfig};

    fn data(count: usize) -> Vec<Sample<f32>> {
        gen_synthetic(&SynthConfig {
            count,
            size: 8,
            radius_min: 1.0,
            radius_max: 3.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn one_epoch_smoke() {
        let d = data(2);
        let mut m = build_caggnet::<f32>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
        let before = m.store.clone();
        let cfg = TrainConfig {
            epochs_max: 1,
            batch_size: 2,
            ..Default::default()
        };
        let out = train_loop(
            &mut m,
            &d,
            &d,
            &Loss::default(),
            &AdamConfig::default(),
            EarlyStopper::default(),
            &cfg,
            |_| {},
        )
        .unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert!(out.log.records[0].train_loss.is_finite());
        assert!(!m.store.same_weights(&before));
        let csv = out.log.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn empty_split_rejected() {
        let d = data(2);
        let mut m = build_caggnet::<f32>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
        let r = train_loop(
            &mut m,
            &[],
            &d,
            &Loss::default(),
            &AdamConfig::default(),
            EarlyStopper::default(),
            &TrainConfig::default(),
            |_| {},
        );
        assert!(matches!(r, Err(Error::Dataset(_))));
    }

    #[test]
    fn huge_lr_reports_divergence_or_finishes() {
        let d = data(2);
        let mut m = build_caggnet::<f32>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
        let adam = AdamConfig {
            lr: 1e30,
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs_max: 5,
            batch_size: 1,
            ..Default::default()
        };
        let out = train_loop(
            &mut m,
            &d,
            &d,
            &Loss::bce(),
            &adam,
            EarlyStopper::default(),
            &cfg,
            |_| {},
        )
        .unwrap();
        if let Some(e) = out.log.diverged_at {
            assert_eq!(out.log.records.len(), e - 1);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let d = data(4);
        let run = || {
            let mut m = build_caggnet::<f32>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
            let cfg = TrainConfig {
                epochs_max: 3,
                batch_size: 2,
                ..Default::default()
            };
            let out = train_loop(
                &mut m,
                &d,
                &d,
                &Loss::default(),
                &AdamConfig::default(),
                EarlyStopper::default(),
                &cfg,
                |_| {},
            )
            .unwrap();
            (m.store, out.log.to_csv())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert!(a.same_weights(&b));
        assert_eq!(la, lb);
    }
}
