use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, lr_at_epoch, AdamState, SumModel};
use crate::data::Sample;
use crate::error::{Result, SumError};
use crate::metrics::{aggregate, evaluate_sample, f_score, MetricSummary, RunMetrics};
use crate::objective::{composite_var, LossBreakdown};
use crate::tensor::{derive_seed, Binder, ParamStore, SplitMix64, Var};

/// Composite loss of one sample on `b`'s tape.
pub fn sample_loss(model: &SumModel, b: &mut Binder, sample: &Sample) -> Result<(Var, LossBreakdown)> {
    let s = model.config.input_size;
    let img = b.tape.leaf(&sample.image);
    let pred = model.forward(b, img, sample.label)?;
    let gt = b.tape.constant(&[s, s], sample.map.clone())?;
    let fix = b.tape.constant(&[s, s], sample.fixations.clone())?;
    composite_var(
        &mut b.tape,
        gt,
        fix,
        pred,
        &model.config.loss_weights,
        model.config.kl_orientation,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss components over the epoch's training samples.
    pub train: LossBreakdown,
    pub val: Option<MetricSummary>,
    /// F-score of this epoch among all epochs evaluated so far.
    pub val_f_score: Option<f64>,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// Mean batch loss after every optimizer step.
    pub step_losses: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingReport {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    /// The newest epoch is now the best one.
    pub improved: bool,
    pub stop: bool,
}

/// Early stopping on the validation F-score. Every new epoch rescores the
/// whole history, because min-max scaling depends on the set of runs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    history: Vec<RunMetrics>,
    best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            history: Vec::new(),
            best: 0,
        }
    }

    pub fn observe(&mut self, m: RunMetrics) -> StopDecision {
        self.history.push(m);
        let scores = f_score(&self.history);
        // first maximum wins ties
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.f_score > scores[best].f_score {
                best = i;
            }
        }
        self.best = best;
        let last = self.history.len() - 1;
        StopDecision {
            improved: best == last,
            stop: last - best >= self.patience,
        }
    }

    /// F-scores of all observed epochs under the current scaling.
    pub fn scores(&self) -> Vec<f64> {
        f_score(&self.history).iter().map(|s| s.f_score).collect()
    }

    pub fn best_index(&self) -> usize {
        self.best
    }
}

/// Undefined validation means (every sample excluded) fall back to chance
/// level for CC, SIM and NSS, and to the worst KL seen so far.
fn run_metrics(summary: &MetricSummary, worst_kl: f64) -> RunMetrics {
    let or = |v: f64, d: f64| if v.is_finite() { v } else { d };
    RunMetrics {
        cc: or(summary.cc.mean, 0.0),
        sim: or(summary.sim.mean, 0.0),
        nss: or(summary.nss.mean, 0.0),
        kl: or(summary.kld.mean, worst_kl),
    }
}

/// Validation metrics of the current parameters.
pub fn validate(model: &SumModel, val: &[Sample]) -> Result<MetricSummary> {
    let reports = val
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.image, s.label)?;
            evaluate_sample(&s.id, pred.data(), &s.map, &s.fixations)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&reports))
}

type SampleGrad = (Vec<Option<Vec<f64>>>, LossBreakdown);

fn sample_grads(model: &SumModel, sample: &Sample) -> Result<SampleGrad> {
    let mut b = Binder::new(&model.store);
    let (loss, parts) = sample_loss(model, &mut b, sample)?;
    Ok((b.param_grads(loss)?, parts))
}

fn is_numeric_failure(e: &SumError) -> bool {
    matches!(e, SumError::NonFinite { .. } | SumError::Domain { .. })
}

/// Mini-batch Adam with seeded shuffling, step decay and early stopping on
/// the validation F-score. With an empty `val` set every epoch runs and the
/// final parameters are kept. Otherwise the model ends up holding the
/// parameters of the most recent epoch that ranked first when it was
/// evaluated.
pub fn train(
    model: &mut SumModel,
    train_set: &[Sample],
    val: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingReport> {
    if train_set.is_empty() {
        return Err(SumError::Config("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let mut adam = AdamState::new(&model.store);
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut report = TrainingReport::default();
    let mut best_store: Option<ParamStore> = None;
    let mut worst_kl: f64 = 0.0;

    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg.lr, cfg.decay_factor, cfg.decay_every, epoch);
        rng.shuffle(&mut order);
        let mut sums = [0.0; 6];
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let nan = || SumError::NanLoss { epoch, batch };
            let results: Vec<Result<SampleGrad>> =
                chunk.par_iter().map(|&i| sample_grads(model, &train_set[i])).collect();
            let mut total: Vec<Option<Vec<f64>>> = vec![None; model.store.len()];
            let mut batch_loss = 0.0;
            for r in results {
                let (grads, parts) = r.map_err(|e| if is_numeric_failure(&e) { nan() } else { e })?;
                if !parts.total.is_finite() {
                    return Err(nan());
                }
                batch_loss += parts.total;
                let p = [parts.kl, parts.cc, parts.sim, parts.nss, parts.mse, parts.total];
                for (acc, v) in sums.iter_mut().zip(p) {
                    *acc += v;
                }
                for (acc, g) in total.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                        None => *acc = Some(g),
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in total.iter_mut().flatten() {
                g.iter_mut().for_each(|v| *v *= scale);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(nan());
                }
            }
            adam_step(&mut model.store, &total, &mut adam, lr)?;
            report.step_losses.push(batch_loss * scale);
        }

        let n = train_set.len() as f64;
        let train = LossBreakdown {
            kl: sums[0] / n,
            cc: sums[1] / n,
            sim: sums[2] / n,
            nss: sums[3] / n,
            mse: sums[4] / n,
            total: sums[5] / n,
        };
        let mut record = EpochRecord {
            epoch,
            lr,
            train,
            val: None,
            val_f_score: None,
            improved: true,
        };
        let mut stop = false;
        if val.is_empty() {
            report.best_epoch = epoch;
        } else {
            let summary = validate(model, val)?;
            if summary.kld.mean.is_finite() {
                worst_kl = worst_kl.max(summary.kld.mean);
            }
            let decision = stopper.observe(run_metrics(&summary, worst_kl));
            record.val = Some(summary);
            record.val_f_score = stopper.scores().last().copied();
            record.improved = decision.improved;
            if decision.improved {
                best_store = Some(model.store.clone());
                report.best_epoch = epoch;
            }
            stop = decision.stop;
        }
        on_epoch(&record);
        report.epochs.push(record);
        if stop {
            report.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if let Some(best) = best_store {
        model.store = best;
    }
    Ok(report)
}
