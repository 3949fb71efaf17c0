//! Mini-batch training with best-validation checkpoint selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::nn::{scores_from_output, Model, OutputKind};
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Over a single sigmoid output.
    BinaryCrossEntropy,
    /// Sparse categorical cross-entropy over a two-unit softmax output.
    CategoricalCrossEntropy,
}

impl LossKind {
    pub fn output_kind(self) -> OutputKind {
        match self {
            LossKind::BinaryCrossEntropy => OutputKind::Sigmoid,
            LossKind::CategoricalCrossEntropy => OutputKind::Softmax,
        }
    }
}

/// Which validation quantity picks the checkpoint epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    ValLoss,
    ValError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub validation_fraction: f64,
    pub adam: AdamConfig,
    pub selection: Selection,
    /// Decision threshold used for the accuracy columns.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            seed: 42,
            loss: LossKind::BinaryCrossEntropy,
            validation_fraction: 0.10,
            adam: AdamConfig::default(),
            selection: Selection::ValLoss,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "validation fraction {} must lie strictly between 0 and 1",
                self.validation_fraction
            )));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// First index of the minimum; NaN never wins.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v < values[b]) => {}
            _ if v.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy);
        }
        out
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.val_loss).collect()
    }
}

fn loss_on(g: &mut Graph, out: Var, labels: &[u8], kind: LossKind) -> Result<Var, TensorError> {
    match kind {
        LossKind::BinaryCrossEntropy => {
            let y: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
            g.binary_cross_entropy(out, &y)
        }
        LossKind::CategoricalCrossEntropy => {
            let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            g.categorical_cross_entropy(out, &y)
        }
    }
}

fn correct(scores: &[f32], labels: &[u8], threshold: f64) -> usize {
    scores.iter().zip(labels).filter(|(&s, &y)| ((s as f64 >= threshold) as u8) == y).count()
}

/// Mean loss and accuracy over `set`, in fixed batch order.
pub fn evaluate(model: &Model, set: &Dataset, config: &TrainConfig) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let mut loss_sum = 0f64;
    let mut hits = 0usize;
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(config.batch_size) {
        let (batch, labels) = set.batch(chunk)?;
        let mut g = Graph::new();
        let params = model.bind(&mut g, false);
        let out = model.forward_on(&mut g, &params, &batch)?;
        let loss = loss_on(&mut g, out, &labels, config.loss)?;
        loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
        hits += correct(&scores_from_output(g.value(out), model.spec().output), &labels, config.threshold);
    }
    Ok((loss_sum / set.len() as f64, hits as f64 / set.len() as f64))
}

/// Trains `model` in place. The returned checkpoint holds the weights of the
/// best validation epoch, which need not be the final one.
pub fn train(model: &mut Model, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<(TrainHistory, Checkpoint), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if model.spec().output != config.loss.output_kind() {
        return Err(TrainError::Config(format!(
            "loss {:?} needs a {:?} output, model has {:?}",
            config.loss,
            config.loss.output_kind(),
            model.spec().output
        )));
    }

    let mut adam = AdamState::new(config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, BTreeMap<String, Tensor>)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut hits = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (batch, labels) = train_set.batch(chunk)?;
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let out = model.forward_on(&mut g, &vars, &batch)?;
            let loss = loss_on(&mut g, out, &labels, config.loss)?;
            loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
            hits += correct(&scores_from_output(g.value(out), model.spec().output), &labels, config.threshold);

            let mut grads = g.backward(loss)?;
            let named = vars
                .iter()
                .map(|(name, &v)| (name.clone(), grads.take(v).expect("every parameter has a gradient")))
                .collect();
            adam.step(model.params_mut(), &named)?;
        }
        let (val_loss, val_accuracy) = evaluate(model, val_set, config)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
        let criterion = match config.selection {
            Selection::ValLoss => val_loss,
            Selection::ValError => 1.0 - val_accuracy,
        };
        if best.as_ref().is_none_or(|(_, c, _)| criterion < *c) {
            best = Some((epoch, criterion, model.params().clone()));
        }
    }

    let (best_epoch, _, params) = best.expect("at least one epoch");
    let history = TrainHistory { best_epoch, epochs: records };
    let best_val_loss = history.epochs[best_epoch].val_loss;
    let checkpoint = Checkpoint {
        spec: model.spec().clone(),
        params,
        seed: config.seed,
        best_epoch: best_epoch as u32,
        best_val_loss,
    };
    Ok((history, checkpoint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::nn::{build_model, InputShape, ModelSpec};

    fn tiny_spec() -> ModelSpec {
        ModelSpec::mini_densenet(InputShape {
            channels: 1,
            height: 6,
            width: 6,
        })
    }

    #[test]
    fn argmin_takes_first_tie() {
        assert_eq!(argmin_first(&[3.0, 1.0, 2.0, 1.0]), Some(1));
        assert_eq!(argmin_first(&[f64::NAN, 2.0]), Some(1));
        assert_eq!(argmin_first(&[]), None);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn one_epoch_checkpoint_is_final_weights() {
        let data = synthetic::dataset(24, 1, 6, 6, 5);
        let (tr, va) = data.samples.split_at(16);
        let (tr, va) = (Dataset { samples: tr.to_vec() }, Dataset { samples: va.to_vec() });
        let mut model = build_model(&tiny_spec(), 1).unwrap();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let (hist, ckpt) = train(&mut model, &tr, &va, &config).unwrap();
        assert_eq!(hist.best_epoch, 0);
        assert_eq!(hist.epochs.len(), 1);
        assert_eq!(&ckpt.params, model.params());
    }

    #[test]
    fn rejects_empty_sets_and_loss_mismatch() {
        let data = synthetic::dataset(8, 1, 6, 6, 5);
        let mut model = build_model(&tiny_spec(), 1).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut model, &Dataset::default(), &data, &cfg),
            Err(TrainError::EmptySet("train"))
        ));
        assert!(matches!(
            train(&mut model, &data, &Dataset::default(), &cfg),
            Err(TrainError::EmptySet("validation"))
        ));
        let cfg = TrainConfig {
            loss: LossKind::CategoricalCrossEntropy,
            ..cfg
        };
        assert!(matches!(train(&mut model, &data, &data, &cfg), Err(TrainError::Config(_))));
    }
}
