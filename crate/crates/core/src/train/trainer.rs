use serde::{Deserialize, Serialize};

use super::loss::{argmax_rows, check_labels, cross_entropy};
use super::optim::{RmsProp, RmsPropParams};
use super::schedule::LrSchedule;
use super::EpochRecord;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model};
use crate::tensor::{Rng, Tensor};

/// Indexed labelled images, delivered in batches of `N×C×H×W`.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    fn batch(&self, indices: &[usize]) -> Result<Tensor>;

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Images held in one tensor.
#[derive(Clone, Debug)]
pub struct InMemoryDataset {
    images: Tensor,
    labels: Vec<usize>,
}

impl InMemoryDataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, _, _, _) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::Dimension(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        check_labels(&labels)?;
        Ok(InMemoryDataset { images, labels })
    }

    /// Materializes any dataset.
    pub fn collect(source: &dyn Dataset) -> Result<Self> {
        let all: Vec<usize> = (0..source.len()).collect();
        Self::new(source.batch(&all)?, source.labels())
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items = indices
            .iter()
            .map(|&i| self.images.sample(i))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub rmsprop: RmsPropParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 32,
            schedule: LrSchedule::default(),
            rmsprop: RmsPropParams::default(),
        }
    }
}

/// Per-epoch history plus the selected best epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Epoch with the highest validation accuracy (ties: lower loss).
    pub best_epoch: usize,
}

impl TrainReport {
    /// Comma-separated table, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.learning_rate
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub last: Checkpoint,
    pub best: Checkpoint,
}

/// Splits a permutation into batches of `batch_size`; a trailing single
/// sample joins the previous batch so batch norm always sees ≥ 2.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Inference-mode loss and accuracy over a whole dataset.
pub fn evaluate_loss(model: &Model, data: &dyn Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty dataset".into()));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in order.chunks(batch_size.max(1)) {
        let x = data.batch(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        let probs = model.predict_proba(&x)?;
        let (l, _) = cross_entropy(&probs, &labels)?;
        loss += l * chunk.len() as f64;
        correct += argmax_rows(&probs)?
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch RMSProp training with a step-decayed learning rate.
///
/// Epoch `e` shuffles with `rng.child(e)`, which also supplies that epoch's
/// dropout masks, so the run is a pure function of the model, the data and
/// the seed.
pub fn train_epochs(
    mut model: Model,
    train: &dyn Dataset,
    val: &dyn Dataset,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<TrainOutcome> {
    if cfg.batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size {} < 2; batch norm needs at least two samples",
            cfg.batch_size
        )));
    }
    cfg.schedule.validate()?;
    if train.len() < 2 {
        return Err(Error::Domain(format!(
            "training set has {} samples, need at least 2",
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::Domain("validation set is empty".into()));
    }
    check_labels(&train.labels())?;
    check_labels(&val.labels())?;

    let mut opt = RmsProp::new(cfg.rmsprop, &model.params());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at_epoch(epoch);
        let mut erng = rng.child(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        erng.shuffle(&mut order);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in batches(&order, cfg.batch_size) {
            let x = train.batch(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train.label(i)).collect();
            let pass = model.forward_train(&x, &mut erng)?;
            let (loss, grad) = cross_entropy(pass.probs(), &labels)?;
            let grads = model.backward(&pass, &grad)?;
            opt.step(model.params_mut(), &grads, lr)?;
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(pass.probs())?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        let (val_loss, val_accuracy) = evaluate_loss(&model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            record.train_loss,
            record.train_accuracy,
            val_loss,
            val_accuracy
        );
        records.push(record);

        let improved = match &best {
            None => true,
            Some((_, acc, loss, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss)
            }
        };
        if improved {
            let ckpt = snapshot(&model, &opt, epoch + 1, &records);
            best = Some((epoch, val_accuracy, val_loss, ckpt));
        }
    }

    let last = snapshot(&model, &opt, cfg.epochs, &records);
    let (best_epoch, best) = match best {
        Some((e, _, _, c)) => (e, c),
        None => (0, last.clone()),
    };
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            records,
            best_epoch,
        },
        last,
        best,
    })
}

fn snapshot(model: &Model, opt: &RmsProp, epoch: usize, history: &[EpochRecord]) -> Checkpoint {
    let mut c = Checkpoint::from_model(model);
    c.optimizer = opt.accumulators.clone();
    c.epoch = epoch;
    c.history = history.to_vec();
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig::blocks([1, 8, 8], &[4, 4], 2, 0.1, 8, 0.1, 3)
    }

    /// Class k has a bright 3×3 square in a class-specific corner.
    fn separable(n_per_class: usize, rng: &mut Rng) -> InMemoryDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..3 {
            for _ in 0..n_per_class {
                let mut img = Tensor::uniform([1, 8, 8], 0.0, 0.2, rng).into_data();
                let (oy, ox) = [(0, 0), (0, 5), (5, 2)][k];
                for y in oy..oy + 3 {
                    for x in ox..ox + 3 {
                        img[y * 8 + x] = 0.8 + 0.2 * rng.uniform();
                    }
                }
                images.push(Tensor::new([1, 8, 8], img).unwrap());
                labels.push(k);
            }
        }
        InMemoryDataset::new(Tensor::stack(&images).unwrap(), labels).unwrap()
    }

    #[test]
    fn batching_never_leaves_a_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = Rng::new(1);
        let data = separable(2, &mut rng);
        let model = Model::build(&tiny(), &mut rng).unwrap();
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(
            train_epochs(model.clone(), &data, &data, &cfg, &rng),
            Err(Error::Config(_))
        ));
        let empty = InMemoryDataset { images: Tensor::zeros([1, 1, 8, 8]), labels: vec![] };
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(
            train_epochs(model, &data, &empty, &cfg, &rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = Rng::new(2);
        let data = separable(2, &mut rng);
        let model = Model::build(&tiny(), &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
        let a = train_epochs(model.clone(), &data, &data, &cfg, &Rng::new(9)).unwrap();
        let b = train_epochs(model, &data, &data, &cfg, &Rng::new(9)).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
    }

    #[test]
    fn report_tracks_schedule_and_best() {
        let mut rng = Rng::new(3);
        let data = separable(6, &mut rng);
        let model = Model::build(&tiny(), &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 6,
            schedule: LrSchedule { initial: 1e-2, ..Default::default() },
            ..Default::default()
        };
        let out = train_epochs(model, &data, &data, &cfg, &Rng::new(4)).unwrap();
        assert_eq!(out.report.records.len(), 12);
        for (e, r) in out.report.records.iter().enumerate() {
            assert_eq!(r.epoch, e);
            assert_eq!(r.learning_rate, cfg.schedule.lr_at_epoch(e));
        }
        let best = &out.report.records[out.report.best_epoch];
        assert!(out.report.records.iter().all(|r| r.val_accuracy < best.val_accuracy
            || (r.val_accuracy == best.val_accuracy && r.val_loss >= best.val_loss)));
        assert_eq!(out.best.epoch, out.report.best_epoch + 1);
        assert_eq!(out.last.epoch, 12);
        assert!(best.val_accuracy > 0.9, "{:?}", out.report.records);
        let csv = out.report.to_csv();
        assert_eq!(csv.lines().count(), 13);
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let mut rng = Rng::new(5);
        let mut ok = 0;
        let trials = 20;
        for t in 0..trials {
            let data = separable(2, &mut rng);
            let mut model = Model::build(&tiny(), &mut rng).unwrap();
            let idx: Vec<usize> = (0..data.len()).collect();
            let x = data.batch(&idx).unwrap();
            let labels = data.labels();
            let batch_loss = |m: &mut Model| {
                let pass = m.forward_train(&x, &mut Rng::new(100 + t)).unwrap();
                cross_entropy(pass.probs(), &labels).unwrap()
            };
            let pass = model.forward_train(&x, &mut Rng::new(100 + t)).unwrap();
            let (before, grad) = cross_entropy(pass.probs(), &labels).unwrap();
            let grads = model.backward(&pass, &grad).unwrap();
            let mut opt = RmsProp::new(RmsPropParams::default(), &model.params());
            opt.step(model.params_mut(), &grads, 1e-4).unwrap();
            let (after, _) = batch_loss(&mut model);
            if after <= before {
                ok += 1;
            }
        }
        assert!(ok * 100 >= trials * 95, "{ok}/{trials} steps decreased the loss");
    }
}
