use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::network::{Mode, Network};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 300,
            seed: 0,
            l2: 0.0,
            patience: Some(20),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::InvalidConfig("l2 must be non-negative".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.learning_rate, self.l2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose parameters were kept (the best validation epoch when
    /// validating, otherwise the last).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Running minimum of the validation loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.validation_loss
            .iter()
            .scan(f64::INFINITY, |best, &v| {
                *best = best.min(v);
                Some(*best)
            })
            .collect()
    }
}

/// Shuffled mini-batches of `0..n`. A trailing batch of one sample is folded
/// into its predecessor so batch statistics stay defined.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("checked");
        batches.last_mut().expect("checked").extend(tail);
    }
    batches
}

/// Evaluates the loss in inference mode over the whole set, in chunks.
pub fn evaluate_loss(
    net: &Network,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    loss: LossKind,
) -> Result<f64> {
    let n = x.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let chunk = 1024;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let pass = net.infer(x.slice(ndarray::s![start..end, ..]))?;
        let out = loss.evaluate(pass.logits.view(), y.slice(ndarray::s![start..end, ..]));
        total += out.loss * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Mini-batch training with optional validation-driven early stopping. When
/// early stopping is active the best validation epoch's parameters are
/// restored. The network is left in inference mode.
pub fn train(
    net: &mut Network,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    loss: LossKind,
    config: &TrainConfig,
    validation: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
) -> Result<TrainReport> {
    config.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    if y.ncols() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            actual: y.ncols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = config.optimizer();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Network)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        net.set_mode(Mode::Training);
        let mut epoch_loss = 0.0;
        for batch in epoch_batches(x.nrows(), config.batch_size, &mut rng) {
            let bx: Array2<f64> = x.select(Axis(0), &batch);
            let by: Array2<f64> = y.select(Axis(0), &batch);
            let pass = net.forward(bx.view())?;
            let out = loss.evaluate(pass.logits.view(), by.view());
            if !out.loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            net.backward(out.grad.view())?;
            optimizer.step(net);
            epoch_loss += out.loss * batch.len() as f64;
        }
        let epoch_loss = epoch_loss / x.nrows().max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        report.train_loss.push(epoch_loss);

        if let Some((vx, vy)) = validation {
            net.set_mode(Mode::Inference);
            let v = evaluate_loss(net, vx, vy, loss)?;
            if !v.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            report.validation_loss.push(v);
            if config.patience.is_some() {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    let mut snapshot = net.clone();
                    snapshot.clear_caches();
                    best = Some((v, snapshot));
                    report.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if config.patience.is_some_and(|p| since_best >= p) {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        *net = snapshot;
    } else if !report.train_loss.is_empty() {
        report.best_epoch = Some(report.train_loss.len() - 1);
    }
    net.clear_caches();
    net.set_mode(Mode::Inference);
    Ok(report)
}
