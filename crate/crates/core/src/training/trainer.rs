use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, mase, mse, persistence_scale, LossKind, LossValue};
use super::optim::{AdamConfig, OptimState};
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, NetworkParams};
use crate::numcore::{Real, Rng, Tensor};
use crate::tasks::flipflop::set_accuracy;
use crate::tasks::{Dataset, Targets};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_metric,lr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Warmup length as a fraction of `epochs`.
    pub warmup: f64,
    /// Defaults from the targets: `ce` for classes, `mse` for flip-flop sets,
    /// `mase` for real values.
    pub loss: Option<LossKind>,
    pub seed: u64,
    pub eval_batch: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 0.004,
            warmup: 0.5,
            loss: None,
            seed: 0,
            eval_batch: 256,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config(
                "epochs, batch_size and eval_batch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.lr, self.epochs, self.warmup)
    }

    pub fn loss_for(&self, targets: &Targets) -> LossKind {
        self.loss.unwrap_or(match targets {
            Targets::Classes(_) | Targets::StepClasses(_) => LossKind::Ce,
            Targets::FlipFlop { .. } => LossKind::Mse,
            Targets::Values(_) => LossKind::Mase,
        })
    }
}

/// Metric reported for a dataset: accuracy for class and flip-flop
/// targets (higher is better), MASE for real values (lower is better).
pub fn metric_name(targets: &Targets) -> &'static str {
    match targets {
        Targets::Classes(_) | Targets::StepClasses(_) => "accuracy",
        Targets::FlipFlop { .. } => "set_accuracy",
        Targets::Values(_) => "mase",
    }
}

pub fn higher_is_better(targets: &Targets) -> bool {
    !matches!(targets, Targets::Values(_))
}

/// Check that the network's head and width can be scored against `targets`.
pub fn check_compatible<F: Real>(
    params: &NetworkParams<F>,
    data: &Dataset,
    loss: LossKind,
) -> Result<()> {
    let cfg = &params.config;
    if cfg.input_dim != data.input_dim() {
        return Err(Error::Data(format!(
            "network expects {} input channels, data has {}",
            cfg.input_dim,
            data.input_dim()
        )));
    }
    let per_step = cfg.head.per_step();
    let ok = match (&data.targets, loss) {
        (Targets::Classes(_), LossKind::Ce) => cfg.head.is_classification() && !per_step,
        (Targets::StepClasses(_), LossKind::Ce) => cfg.head.is_classification() && per_step,
        (Targets::FlipFlop { .. }, LossKind::Mse) => per_step && cfg.output_dim == 5,
        (Targets::FlipFlop { .. }, LossKind::Ce) => {
            cfg.head.is_classification() && per_step && cfg.output_dim == 4
        }
        (Targets::Values(v), LossKind::Mse | LossKind::Mase) => {
            !cfg.head.is_classification() && per_step && cfg.output_dim == v.dim(2)
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "head {:?} with {} outputs cannot be trained with {loss:?} on {} targets",
            cfg.head,
            cfg.output_dim,
            data.targets.kind()
        )))
    }
}

/// Loss of `out` (network output for rows `idx`) against those rows.
pub fn batch_loss<F: Real>(
    out: &Tensor<F>,
    data: &Dataset,
    idx: &[usize],
    loss: LossKind,
    scale: Option<f64>,
) -> Result<LossValue<F>> {
    let t = data.seq_len();
    let steps = |v: &[usize]| -> Vec<usize> {
        idx.iter()
            .flat_map(|&i| v[i * t..(i + 1) * t].iter().copied())
            .collect()
    };
    match (&data.targets, loss) {
        (Targets::Classes(c), LossKind::Ce) => {
            cross_entropy(out, &idx.iter().map(|&i| c[i]).collect::<Vec<_>>())
        }
        (Targets::StepClasses(c), LossKind::Ce) => cross_entropy(out, &steps(c)),
        (Targets::FlipFlop { sets, .. }, LossKind::Ce) => {
            let s: Vec<usize> = sets.iter().map(|&v| v as usize).collect();
            cross_entropy(out, &steps(&s))
        }
        (Targets::FlipFlop { multi_hot, .. }, LossKind::Mse) => {
            mse(out, &multi_hot.gather_rows(idx).cast())
        }
        (Targets::Values(v), LossKind::Mse) => mse(out, &v.gather_rows(idx).cast()),
        (Targets::Values(v), LossKind::Mase) => {
            let scale = scale.ok_or_else(|| Error::invalid("MASE needs a persistence scale"))?;
            mase(out, &v.gather_rows(idx).cast(), scale)
        }
        (t, l) => Err(Error::Data(format!(
            "{l:?} loss does not apply to {} targets",
            t.kind()
        ))),
    }
}

/// Persistence scale of a dataset's value targets, `None` for other targets.
pub fn target_scale(data: &Dataset) -> Result<Option<f64>> {
    match &data.targets {
        Targets::Values(v) => persistence_scale(v).map(Some),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
    /// Accuracy on read positions, flip-flop only.
    pub read_accuracy: Option<f64>,
}

/// Mean loss and metric of `params` over all of `data`, in batches of `batch`.
pub fn evaluate<F: Real>(
    params: &NetworkParams<F>,
    data: &Dataset,
    loss: LossKind,
    batch: usize,
) -> Result<Evaluation> {
    check_compatible(params, data, loss)?;
    let scale = target_scale(data)?;
    let n = data.len();
    let (mut total, mut hits, mut count) = (0.0, 0.0, 0usize);
    let (mut abs_err, mut elems) = (0.0, 0usize);
    let (mut reads, mut read_hits) = (0usize, 0.0);
    for start in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let (out, _) = params.forward(&data.batch_inputs(&idx))?;
        total += batch_loss(&out, data, &idx, loss, scale)?.value * idx.len() as f64;
        count += idx.len();
        let t = data.seq_len();
        match &data.targets {
            Targets::Classes(c) => {
                hits += class_hits(&out, &idx.iter().map(|&i| c[i]).collect::<Vec<_>>())
            }
            Targets::StepClasses(c) => {
                let s: Vec<usize> = idx
                    .iter()
                    .flat_map(|&i| c[i * t..(i + 1) * t].iter().copied())
                    .collect();
                hits += class_hits(&out, &s);
            }
            Targets::FlipFlop { sets, .. } => {
                let s: Vec<u8> = idx
                    .iter()
                    .flat_map(|&i| sets[i * t..(i + 1) * t].iter().copied())
                    .collect();
                let (acc, r_acc) = set_accuracy(&out, &s)?;
                hits += acc * idx.len() as f64;
                let r_n = s.iter().filter(|&&v| v >= 2).count();
                reads += r_n;
                read_hits += r_acc * r_n as f64;
            }
            Targets::Values(v) => {
                let y = v.gather_rows(&idx);
                abs_err += out
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(a, b)| (a.f64() - *b as f64).abs())
                    .sum::<f64>();
                elems += y.len();
            }
        }
    }
    let metric = match &data.targets {
        Targets::Values(_) => abs_err / elems as f64 / scale.unwrap_or(1.0),
        Targets::StepClasses(_) => hits / (count * data.seq_len()) as f64,
        _ => hits / count as f64,
    };
    let read_accuracy = match &data.targets {
        Targets::FlipFlop { .. } => Some(if reads == 0 {
            1.0
        } else {
            read_hits / reads as f64
        }),
        _ => None,
    };
    Ok(Evaluation {
        loss: total / count as f64,
        metric,
        read_accuracy,
    })
}

fn class_hits<F: Real>(out: &Tensor<F>, classes: &[usize]) -> f64 {
    let c = out.last_dim();
    out.data()
        .chunks(c)
        .zip(classes)
        .filter(|(row, &y)| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == y
        })
        .count() as f64
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    /// Wall time of the epoch; kept out of the CSV so logs stay byte-stable.
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_loss, self.val_metric, self.lr
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    epochs_done: usize,
    best_epoch: usize,
    best_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Real> {
    pub params: NetworkParams<F>,
    pub best: NetworkParams<F>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Records of the epochs run in this call.
    pub history: Vec<EpochRecord>,
}

/// Mini-batch training with per-epoch validation.
///
/// Batch order comes from `seed` and the epoch number only, so a resumed
/// run sees the same batches as an uninterrupted one.
pub struct Trainer<'a, F: Real> {
    pub config: TrainConfig,
    params: NetworkParams<F>,
    optim: OptimState,
    train: &'a Dataset,
    val: &'a Dataset,
    out_dir: Option<PathBuf>,
    progress: Progress,
    best: NetworkParams<F>,
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(
        params: NetworkParams<F>,
        config: TrainConfig,
        train: &'a Dataset,
        val: &'a Dataset,
    ) -> Result<Self> {
        config.validate()?;
        let loss = config.loss_for(&train.targets);
        check_compatible(&params, train, loss)?;
        check_compatible(&params, val, loss)?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data(
                "training and validation sets must be nonempty".into(),
            ));
        }
        let optim = OptimState::new(&params, config.adam);
        Ok(Self {
            config,
            best: params.clone(),
            params,
            optim,
            train,
            val,
            out_dir: None,
            progress: Progress {
                epochs_done: 0,
                best_epoch: 0,
                best_metric: None,
            },
        })
    }

    /// Write `metrics.csv`, `best.ckpt` and `last.ckpt` under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Continue from `dir/last.ckpt`. `config.epochs` may extend the run.
    pub fn resume(
        dir: &Path,
        epochs: Option<usize>,
        train: &'a Dataset,
        val: &'a Dataset,
    ) -> Result<Self> {
        let ck = Checkpoint::load(&dir.join(LAST_CHECKPOINT))?;
        let mut config: TrainConfig = ck.json("train_config")?;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let params = ck.network::<F>()?;
        let mut t = Self::new(params, config, train, val)?.with_output(dir)?;
        t.optim = OptimState::load(&t.params, &ck)?;
        t.progress = ck.json("progress")?;
        let best = dir.join(BEST_CHECKPOINT);
        if best.exists() {
            t.best = Checkpoint::load(&best)?.network()?;
        }
        Ok(t)
    }

    pub fn params(&self) -> &NetworkParams<F> {
        &self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.progress.epochs_done
    }

    fn improved(&self, metric: f64) -> bool {
        match self.progress.best_metric {
            None => true,
            Some(b) if higher_is_better(&self.val.targets) => metric > b,
            Some(b) => metric < b,
        }
    }

    fn save(&self, name: &str) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let mut ck = Checkpoint::new();
        ck.put_network(&self.params)?;
        ck.put_json("train_config", &self.config)?;
        ck.put_json("progress", &self.progress)?;
        if name == LAST_CHECKPOINT {
            self.optim.save(&self.params, &mut ck)?;
        }
        ck.save(&dir.join(name))
    }

    fn log(&self, rec: &EpochRecord) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let path = dir.join(METRICS_FILE);
        let fresh = rec.epoch == 1 || !path.exists();
        let mut f = if fresh {
            let mut f = fs::File::create(&path)?;
            writeln!(f, "{METRICS_HEADER}")?;
            f
        } else {
            fs::OpenOptions::new().append(true).open(&path)?
        };
        writeln!(f, "{}", rec.csv_row())?;
        Ok(())
    }

    /// One pass over the training set; returns the mean batch loss and the
    /// last learning rate.
    fn epoch(&mut self, epoch: usize) -> Result<(f64, f64)> {
        let loss = self.config.loss_for(&self.train.targets);
        let scale = target_scale(self.train)?;
        let schedule = self.config.schedule();
        let order = Rng::with_stream(self.config.seed, 0x5EED)
            .split(epoch as u64)
            .permutation(self.train.len());
        let batches: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        let (mut total, mut lr) = (0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let at = |e: Error| match e {
                Error::NonFinite { op } => Error::Numerical(format!(
                    "non-finite value in {op} at epoch {} batch {b}",
                    epoch + 1
                )),
                Error::Numerical(msg) => {
                    Error::Numerical(format!("{msg} at epoch {} batch {b}", epoch + 1))
                }
                other => other,
            };
            let (out, cache) = self
                .params
                .forward(&self.train.batch_inputs(idx))
                .map_err(at)?;
            let l = batch_loss(&out, self.train, idx, loss, scale).map_err(at)?;
            if !l.value.is_finite() {
                return Err(at(Error::Numerical("non-finite loss".into())));
            }
            let grads = self.params.backward(&cache, &l.grad).map_err(at)?;
            lr = schedule.lr(epoch as f64 + (b as f64 + 0.5) / batches.len() as f64);
            self.optim.step(&mut self.params, &grads, lr).map_err(at)?;
            total += l.value;
        }
        Ok((total / batches.len() as f64, lr))
    }

    /// Train until `config.epochs` or until `hook` returns [`Control::Stop`].
    pub fn run(
        mut self,
        mut hook: impl FnMut(&EpochRecord, &NetworkParams<F>) -> Result<Control>,
    ) -> Result<TrainOutcome<F>> {
        let loss = self.config.loss_for(&self.train.targets);
        let mut history = Vec::new();
        while self.progress.epochs_done < self.config.epochs {
            let e = self.progress.epochs_done;
            let start = Instant::now();
            let (train_loss, lr) = self.epoch(e)?;
            let ev = evaluate(&self.params, self.val, loss, self.config.eval_batch)?;
            let rec = EpochRecord {
                epoch: e + 1,
                train_loss,
                val_loss: ev.loss,
                val_metric: ev.metric,
                lr,
                seconds: start.elapsed().as_secs_f64(),
            };
            self.progress.epochs_done = e + 1;
            if self.improved(ev.metric) {
                self.progress.best_metric = Some(ev.metric);
                self.progress.best_epoch = e + 1;
                self.best = self.params.clone();
                self.save(BEST_CHECKPOINT)?;
            }
            self.save(LAST_CHECKPOINT)?;
            self.log(&rec)?;
            history.push(rec.clone());
            if hook(&rec, &self.params)? == Control::Stop {
                break;
            }
        }
        Ok(TrainOutcome {
            params: self.params,
            best: self.best,
            best_epoch: self.progress.best_epoch,
            best_metric: self.progress.best_metric.unwrap_or(f64::NAN),
            history,
        })
    }
}

/// Parse a metrics CSV back into `(epoch, train_loss, val_loss, val_metric, lr)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<[f64; 5]>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingPath(path.to_path_buf()))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Data(format!(
            "{} lacks the metrics header",
            path.display()
        )));
    }
    lines
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| {
                    x.parse()
                        .map_err(|_| Error::Data(format!("bad metrics row `{l}`")))
                })
                .collect::<Result<_>>()?;
            v.try_into()
                .map_err(|_| Error::Data(format!("bad metrics row `{l}`")))
        })
        .collect()
}
