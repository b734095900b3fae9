//! Mini-batch training of the backbones and shared encoder.
//!
//! Every epoch draws its batch order from stream `epoch` of the run seed, so
//! a run resumed from a checkpoint only needs the epoch counter to continue
//! exactly where it stopped.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use std::time::Instant;

use crate::config::{KvConfig, KvMap};
use crate::data::{batch_iter, SplitConfig, TupleDataset};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, schedule_weight, LossBreakdown, LossWeights, DEFAULT_TAU};
use crate::model::{BoundParams, ModelConfig, ModelParams};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    /// Regularizer weights at epoch 0; both grow to 1 by the last epoch.
    pub alpha0: f64,
    pub beta0: f64,
    /// Train on the contrastive term alone (regularizer weights fixed at 0).
    pub mim_only: bool,
    pub include_positive_in_denominator: bool,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub split: SplitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            tau: DEFAULT_TAU,
            alpha0: 1e-4,
            beta0: 1e-4,
            mim_only: false,
            include_positive_in_denominator: false,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            split: SplitConfig::default(),
        }
    }
}

impl KvConfig for TrainConfig {
    fn apply(&mut self, kv: &mut KvMap) -> Result<()> {
        kv.take("epochs", &mut self.epochs)?;
        kv.take("batch_size", &mut self.batch_size)?;
        kv.take("learning_rate", &mut self.adam.learning_rate)?;
        kv.take("tau", &mut self.tau)?;
        kv.take("alpha0", &mut self.alpha0)?;
        kv.take("beta0", &mut self.beta0)?;
        kv.take("mim_only", &mut self.mim_only)?;
        kv.take(
            "include_positive_in_denominator",
            &mut self.include_positive_in_denominator,
        )?;
        kv.take("adam_beta1", &mut self.adam.beta1)?;
        kv.take("adam_beta2", &mut self.adam.beta2)?;
        kv.take("adam_epsilon", &mut self.adam.epsilon)?;
        kv.take("seed", &mut self.seed)?;
        kv.take("checkpoint_every", &mut self.checkpoint_every)?;
        self.split.apply(kv, "")?;
        Ok(())
    }

    fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("learning_rate", self.adam.learning_rate);
        kv.insert("tau", self.tau);
        kv.insert("alpha0", self.alpha0);
        kv.insert("beta0", self.beta0);
        kv.insert("mim_only", self.mim_only);
        kv.insert(
            "include_positive_in_denominator",
            self.include_positive_in_denominator,
        );
        kv.insert("adam_beta1", self.adam.beta1);
        kv.insert("adam_beta2", self.adam.beta2);
        kv.insert("adam_epsilon", self.adam.epsilon);
        kv.insert("seed", self.seed);
        kv.insert("checkpoint_every", self.checkpoint_every);
        self.split.write(&mut kv, "");
        kv
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        let lr = self.adam.learning_rate;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive"));
        }
        for (key, w) in [("alpha0", self.alpha0), ("beta0", self.beta0)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::config(key, "must lie in (0, 1]"));
            }
        }
        for (key, b) in [
            ("adam_beta1", self.adam.beta1),
            ("adam_beta2", self.adam.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return Err(Error::config("adam_epsilon", "must be positive"));
        }
        let f = self.split.fractions;
        if f.iter().any(|x| x.is_nan() || *x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                "fractions must be positive and sum to 1",
            ));
        }
        Ok(())
    }
}

impl TrainConfig {
    /// Loss weights in effect during `epoch`.
    pub fn weights_at(&self, epoch: usize) -> Result<LossWeights> {
        let (alpha, beta) = if self.mim_only {
            (0.0, 0.0)
        } else {
            (
                schedule_weight(epoch, self.epochs, self.alpha0)?,
                schedule_weight(epoch, self.epochs, self.beta0)?,
            )
        };
        Ok(LossWeights {
            alpha,
            beta,
            tau: self.tau,
            include_positive_in_denominator: self.include_positive_in_denominator,
        })
    }

    /// Fixed weights for validation loss, comparable across epochs.
    pub fn validation_weights(&self) -> LossWeights {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            tau: self.tau,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Batch-averaged training losses.
    pub train: LossBreakdown,
    pub val_total: Option<f64>,
    /// Wall time; not known for epochs restored from a checkpoint.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

pub const REPORT_HEADER: &str = "epoch,mim,mde,msp,total,alpha,beta,val_total,seconds";

impl TrainReport {
    /// CSV with one row per epoch. Timings vary between runs, so the
    /// `seconds` column is left empty unless `with_timing` is set.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for e in &self.epochs {
            let t = &e.train;
            let val = e.val_total.map(|v| v.to_string()).unwrap_or_default();
            let secs = match (with_timing, e.seconds) {
                (true, Some(s)) => format!("{s:.6}"),
                _ => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{val},{secs}\n",
                e.epoch, t.mim, t.mde, t.msp, t.total, t.alpha, t.beta
            ));
        }
        out
    }

    /// Loss values only, ignoring timings.
    pub fn same_losses(&self, other: &Self) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch && a.train == b.train && a.val_total == b.val_total
            })
    }
}

/// Parameters, optimizer state and progress of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Number of completed epochs; the next epoch to run.
    pub epoch: usize,
    pub history: TrainReport,
}

impl TrainState {
    pub fn fresh(params: ModelParams) -> Self {
        let adam = AdamState::zeros_like(&params.tensors());
        Self {
            params,
            adam,
            epoch: 0,
            history: TrainReport::default(),
        }
    }
}

/// Combined objective on one batch, averaged over every modality pair.
///
/// Returns the scalar loss var, its breakdown and the bound parameters.
pub fn batch_objective(
    tape: &mut Tape,
    params: &ModelParams,
    ds: &TupleDataset,
    batch: &[usize],
    weights: &LossWeights,
    requires_grad: bool,
) -> Result<(Var, LossBreakdown, BoundParams)> {
    let bound = params.bind(tape, requires_grad);
    let n = ds.num_modalities();
    let mut ys = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for j in 0..n {
        let x = tape.constant(ds.modality_matrix(batch, j)?);
        let y = bound.backbone(tape, j, x)?;
        zs.push(bound.encoder(tape, y)?);
        ys.push(y);
    }
    let mut total: Option<Var> = None;
    let mut sum = LossBreakdown::default();
    let mut pairs = 0usize;
    for j in 0..n {
        for k in j + 1..n {
            let (vars, b) = combined_loss(tape, zs[j], zs[k], ys[j], ys[k], weights)?;
            total = Some(match total {
                Some(t) => tape.add(t, vars.total)?,
                None => vars.total,
            });
            sum.mim += b.mim;
            sum.mde += b.mde;
            sum.msp += b.msp;
            sum.total += b.total;
            pairs += 1;
        }
    }
    let total = total.expect("at least two modalities");
    let p = pairs as f64;
    let (loss, breakdown) = if pairs == 1 {
        (
            total,
            LossBreakdown {
                alpha: weights.alpha,
                beta: weights.beta,
                ..sum
            },
        )
    } else {
        let loss = tape.div_scalar(total, p);
        let b = LossBreakdown {
            mim: sum.mim / p,
            mde: sum.mde / p,
            msp: sum.msp / p,
            total: tape.scalar(loss)?,
            alpha: weights.alpha,
            beta: weights.beta,
        };
        (loss, b)
    };
    Ok((loss, breakdown, bound))
}

fn check_compatible(ds: &TupleDataset, cfg: &ModelConfig, what: &str) -> Result<()> {
    if ds.dims() != cfg.input_dims.as_slice() {
        return Err(Error::contract(format!(
            "{what} set has modality widths {:?}, model expects {:?}",
            ds.dims(),
            cfg.input_dims
        )));
    }
    Ok(())
}

fn average(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len() as f64;
    let mut acc = LossBreakdown::default();
    for b in items {
        acc.mim += b.mim;
        acc.mde += b.mde;
        acc.msp += b.msp;
        acc.total += b.total;
    }
    LossBreakdown {
        mim: acc.mim / n,
        mde: acc.mde / n,
        msp: acc.msp / n,
        total: acc.total / n,
        alpha: items[0].alpha,
        beta: items[0].beta,
    }
}

/// Mean total loss over fixed-order validation batches.
pub fn validation_loss(params: &ModelParams, ds: &TupleDataset, cfg: &TrainConfig) -> Result<f64> {
    let order: Vec<usize> = (0..ds.len()).collect();
    let weights = cfg.validation_weights();
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
        let mut tape = Tape::new();
        let (_, b, _) = batch_objective(&mut tape, params, ds, batch, &weights, false)?;
        sum += b.total;
        count += 1;
    }
    if count == 0 {
        return Err(Error::contract("validation set needs at least 2 tuples"));
    }
    Ok(sum / count as f64)
}

/// Runs the remaining epochs of `state`, calling `after_epoch` once each
/// epoch completes.
pub fn train_from(
    mut state: TrainState,
    ds_train: &TupleDataset,
    ds_val: Option<&TupleDataset>,
    cfg: &TrainConfig,
    mut after_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let model_cfg = state.params.config().clone();
    check_compatible(ds_train, &model_cfg, "training")?;
    if let Some(v) = ds_val {
        check_compatible(v, &model_cfg, "validation")?;
    }
    if ds_train.len() < 2 {
        return Err(Error::contract("training set needs at least 2 tuples"));
    }
    if state.epoch > cfg.epochs {
        return Err(Error::contract(format!(
            "state has {} completed epochs, config asks for {}",
            state.epoch, cfg.epochs
        )));
    }

    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let started = Instant::now();
        let weights = cfg.weights_at(epoch)?;
        let batches = batch_iter(ds_train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut logged = Vec::with_capacity(batches.len());
        for (bi, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let (loss, breakdown, bound) =
                batch_objective(&mut tape, &state.params, ds_train, batch, &weights, true)
                    .map_err(|e| match e {
                        Error::Degenerate { op } => Error::NonFinite {
                            epoch,
                            batch: bi,
                            detail: format!("degenerate vector in {op}"),
                        },
                        other => other,
                    })?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!(
                        "mim={} mde={} msp={}",
                        breakdown.mim, breakdown.mde, breakdown.msp
                    ),
                });
            }
            let grads = tape.backward(loss)?;
            let vars = bound.vars();
            let grad_refs: Vec<_> = vars.iter().map(|&v| grads.wrt(v)).collect();
            if let Some(i) = grad_refs.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("gradient of parameter {i} is not finite"),
                });
            }
            let updated = adam_step(
                &state.params.tensors(),
                &grad_refs,
                &mut state.adam,
                &cfg.adam,
            )?;
            state.params = state
                .params
                .with_tensors(updated)
                .map_err(|_| Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: "parameters became non-finite after the update".into(),
                })?;
            logged.push(breakdown);
        }
        let val_total = match ds_val {
            Some(v) => Some(validation_loss(&state.params, v, cfg)?),
            None => None,
        };
        state.history.epochs.push(EpochReport {
            epoch,
            train: average(&logged),
            val_total,
            seconds: Some(started.elapsed().as_secs_f64()),
        });
        state.epoch += 1;
        after_epoch(&state)?;
    }
    Ok(state)
}

/// Trains freshly initialized parameters for `cfg.epochs` epochs.
pub fn train(
    ds_train: &TupleDataset,
    ds_val: Option<&TupleDataset>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let state = TrainState::fresh(ModelParams::init(model_cfg)?);
    let done = train_from(state, ds_train, ds_val, cfg, |_| Ok(()))?;
    Ok((done.params, done.history))
}
