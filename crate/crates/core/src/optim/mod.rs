//! Loss, Adamax, global-norm clipping, the step schedule, partial
//! embedding freezing and the epoch loop.

mod train;

pub use train::{train, EpochRecord, PretrainStage, Stage, TrainData, TrainError, TrainOutcome, TrainPlan};

use crate::tensor::{ParamId, ParamStore, Result as TensorResult, Scalar, Tape, Var};

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, labels: &[u8]) -> TensorResult<Var> {
    tape.bce_loss(y, labels)
}

/// Global L2 norm over every gradient in the store.
pub fn global_grad_norm<T: Scalar>(store: &ParamStore<T>) -> f64 {
    store
        .iter()
        .filter_map(|(_, _, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|&v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients jointly so their global norm is at most
/// `max_norm`. Returns the factor applied (1.0 when untouched).
pub fn clip_gradients<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(store);
    if !(norm > max_norm) {
        return 1.0;
    }
    let scale = max_norm / norm;
    let factor = T::of(scale);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if let Some(g) = store.get_mut(id).grad_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
    scale
}

/// Step-wise learning rate: `base` halved once for every boundary epoch
/// strictly before `epoch` (epochs are 1-based).
pub fn lr_at_epoch(base: f64, halving_epochs: &[usize], epoch: usize) -> f64 {
    let halvings = halving_epochs.iter().filter(|&&h| h < epoch).count();
    base * 0.5f64.powi(halvings as i32)
}

/// Rows of the word-embedding table that may change during training.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMask {
    pub param: ParamId,
    pub width: usize,
    pub trainable: Vec<bool>,
}

impl RowMask {
    pub fn is_trainable(&self, row: usize) -> bool {
        self.trainable.get(row).copied().unwrap_or(false)
    }

    /// Zeroes gradient rows outside the trainable set.
    pub fn apply<T: Scalar>(&self, store: &mut ParamStore<T>) {
        if let Some(g) = store.get_mut(self.param).grad_mut() {
            for (row, chunk) in g.chunks_mut(self.width).enumerate() {
                if !self.is_trainable(row) {
                    chunk.iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.iter().filter(|&&t| t).count()
    }
}

/// Mask letting only `tunable_rows` of the `[rows × width]` table `param` train.
pub fn embedding_freeze_mask<T: Scalar>(store: &ParamStore<T>, param: ParamId, tunable_rows: &[usize]) -> RowMask {
    let shape = store.get(param).shape();
    let (rows, width) = (shape[0], shape[1]);
    let mut trainable = vec![false; rows];
    for &r in tunable_rows {
        if r < rows {
            trainable[r] = true;
        }
    }
    RowMask {
        param,
        width,
        trainable,
    }
}

/// Adamax state: first moment and exponentially weighted infinity norm per
/// parameter, with a shared step counter.
#[derive(Debug, Clone)]
pub struct Adamax<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Option<Vec<T>>>,
    inf_norm: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Adamax<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Adamax<T> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            inf_norm: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[T], &[T])> {
        let m = self.first_moment.get(id.index())?.as_deref()?;
        let u = self.inf_norm.get(id.index())?.as_deref()?;
        Some((m, u))
    }

    /// One update of every parameter holding a gradient:
    /// `m ← β1·m + (1−β1)·g`, `u ← max(β2·u, |g|)`,
    /// `θ ← θ − lr/(1−β1^t) · m/(u+ε)`. Coordinates in frozen rows are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, frozen: &[RowMask]) {
        self.step += 1;
        if self.first_moment.len() < store.len() {
            self.first_moment.resize_with(store.len(), || None);
            self.inf_norm.resize_with(store.len(), || None);
        }
        let (b1, b2, eps) = (T::of(self.beta1), T::of(self.beta2), T::of(self.eps));
        let one = T::one();
        let step_size = T::of(lr / (1.0 - self.beta1.powi(self.step as i32)));
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            if !param.requires_grad() {
                continue;
            }
            let Some(grad) = param.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let n = grad.len();
            let mask = frozen.iter().find(|m| m.param == id);
            let m = self.first_moment[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let u = self.inf_norm[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let data = param.data_mut();
            for i in 0..n {
                if let Some(mask) = mask {
                    if !mask.is_trainable(i / mask.width) {
                        continue;
                    }
                }
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                u[i] = (b2 * u[i]).max(g.abs());
                data[i] -= step_size * m[i] / (u[i] + eps);
            }
        }
    }
}
