use serde::{Deserialize, Serialize};

use super::{clip_gradients, embedding_freeze_mask, lr_at_epoch, Adamax, RowMask};
use crate::eval::{accuracy, predict_groups, EvalError};
use crate::featurize::{make_batches, FeaturizedGroup};
use crate::model::{Model, ModelError};
use crate::tensor::{EngineRng, ParamStore, Scalar, Tape, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss diverged ({loss}) in {stage} epoch {epoch}, batch {batch}")]
    Divergence {
        stage: Stage,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("training batch {batch} has an unlabeled example")]
    MissingLabel { batch: usize },
    #[error("invalid training plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainStage {
    pub epochs: usize,
}

impl Default for PretrainStage {
    fn default() -> Self {
        Self { epochs: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub lr_halving_epochs: Vec<usize>,
    /// Number of most frequent word embeddings left trainable.
    pub tune_top_k: usize,
    pub seed: u64,
    pub pretrain: PretrainStage,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 2e-3,
            clip_norm: 10.0,
            lr_halving_epochs: vec![10, 15],
            tune_top_k: 10,
            seed: 1,
            pretrain: PretrainStage::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Plan("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(TrainError::Plan("lr and clip_norm must be positive".into()));
        }
        if self.lr_halving_epochs.windows(2).any(|w| w[0] > w[1]) {
            return Err(TrainError::Plan("lr_halving_epochs must be sorted".into()));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.lr, &self.lr_halving_epochs, epoch)
    }
}

/// One line of the metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

pub struct TrainData<'a> {
    pub train: &'a [FeaturizedGroup],
    pub dev: &'a [FeaturizedGroup],
    /// Auxiliary corpus for the first stage; `None` skips it.
    pub pretrain: Option<&'a [FeaturizedGroup]>,
    /// Word-embedding rows allowed to change.
    pub tunable_rows: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the best fine-tuning epoch by dev accuracy (the last
    /// epoch without a dev set; the starting point when no epoch ran).
    pub best: ParamStore<T>,
    pub best_epoch: Option<usize>,
    pub best_dev_accuracy: Option<f64>,
    pub trace: Vec<EpochRecord>,
}

struct StageRun<'a, F> {
    stage: Stage,
    groups: &'a [FeaturizedGroup],
    epochs: usize,
    on_epoch: &'a mut F,
}

/// Runs the optional pretraining stage and then fine-tuning. Each stage
/// starts a fresh optimizer and learning-rate schedule. `on_epoch` sees
/// every trace record as it is produced.
pub fn train<T: Scalar, F: FnMut(&EpochRecord)>(
    plan: &TrainPlan,
    model: &mut Model<T>,
    data: TrainData<'_>,
    rng: &mut EngineRng,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>, TrainError> {
    plan.validate()?;
    let word_table = model
        .params()
        .id("embed.word")
        .ok_or_else(|| ModelError::MissingParam("embed.word".into()))?;
    let freeze = embedding_freeze_mask(model.params(), word_table, data.tunable_rows);
    let mut trace = Vec::new();

    if let Some(groups) = data.pretrain {
        let run = StageRun {
            stage: Stage::Pretrain,
            groups,
            epochs: plan.pretrain.epochs,
            on_epoch: &mut on_epoch,
        };
        run_stage(plan, model, run, data.dev, &freeze, rng, &mut trace, |_, _, _| {})?;
    }

    let mut best = model.params().cast::<T>();
    let mut best_epoch = None;
    let mut best_dev_accuracy: Option<f64> = None;
    let run = StageRun {
        stage: Stage::Finetune,
        groups: data.train,
        epochs: plan.epochs,
        on_epoch: &mut on_epoch,
    };
    run_stage(
        plan,
        model,
        run,
        data.dev,
        &freeze,
        rng,
        &mut trace,
        |model, epoch, dev| {
            let improved = match (dev, best_dev_accuracy) {
                (Some(acc), Some(b)) => acc > b,
                (Some(_), None) => true,
                (None, _) => true,
            };
            if improved {
                best = model.params().cast::<T>();
                best_epoch = Some(epoch);
                best_dev_accuracy = dev;
            }
        },
    )?;

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev_accuracy,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stage<T: Scalar, F: FnMut(&EpochRecord)>(
    plan: &TrainPlan,
    model: &mut Model<T>,
    run: StageRun<'_, F>,
    dev: &[FeaturizedGroup],
    freeze: &RowMask,
    rng: &mut EngineRng,
    trace: &mut Vec<EpochRecord>,
    mut after_epoch: impl FnMut(&Model<T>, usize, Option<f64>),
) -> Result<(), TrainError> {
    let mut optimizer = Adamax::<T>::new();
    let frozen = std::slice::from_ref(freeze);
    for epoch in 1..=run.epochs {
        let lr = plan.lr_at_epoch(epoch);
        let batches = make_batches(run.groups, plan.batch_size, Some(rng));
        let mut total_loss = 0.0;
        let mut examples = 0usize;
        for (index, batch) in batches.iter().enumerate() {
            let labels = batch
                .label_vec()
                .ok_or(TrainError::MissingLabel { batch: index })?;
            model.params_mut().zero_grad();
            let mut tape = Tape::new();
            let y = model.forward(&mut tape, batch, Some(rng))?;
            let loss = tape.bce_loss(y, &labels)?;
            let value = tape.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                return Err(TrainError::Divergence {
                    stage: run.stage,
                    epoch,
                    batch: index,
                    loss: value,
                });
            }
            tape.backward(loss, model.params_mut())?;
            freeze.apply(model.params_mut());
            clip_gradients(model.params_mut(), plan.clip_norm);
            optimizer.step(model.params_mut(), lr, frozen);
            total_loss += value * batch.size() as f64;
            examples += batch.size();
        }
        let dev_accuracy = if dev.is_empty() {
            None
        } else {
            accuracy(&predict_groups(model, dev, plan.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            stage: run.stage,
            lr,
            train_loss: if examples == 0 {
                0.0
            } else {
                total_loss / examples as f64
            },
            dev_accuracy,
        };
        log::info!(
            "{} epoch {epoch}: lr {lr:.2e} loss {:.4} dev {:?}",
            run.stage,
            record.train_loss,
            dev_accuracy
        );
        (run.on_epoch)(&record);
        trace.push(record);
        after_epoch(model, epoch, dev_accuracy);
    }
    Ok(())
}
