//! Central finite-difference verification of tape gradients.

use crate::featurize::{make_batches, FeatureResources};
use crate::model::{layers, Model, ModelConfig, ModelError};
use crate::synthetic::{self, SyntheticShape};
use crate::tensor::{EngineRng, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Denominator floor for relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `backward` against `(f(θ+h) − f(θ−h)) / 2h` for every
/// coordinate of every trainable parameter in `store`. `loss_fn` must build
/// a scalar loss deterministically from the store.
pub fn check_gradients<F, E>(store: &mut ParamStore<f64>, h: f64, mut loss_fn: F) -> Result<GradReport, E>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut eval = |store: &ParamStore<f64>| -> Result<f64, E> {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).requires_grad() {
            continue;
        }
        let analytic: Vec<f64> = match store.get(id).grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; store.get(id).numel()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// One named finite-difference check and the tolerance it is judged by.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradReport,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

/// Random parameter whose entries stay at least 0.05 away from zero, so
/// kinks (relu) and poles (log of |x|) are never straddled by `±h`.
fn rand_param(store: &mut ParamStore<f64>, rng: &mut EngineRng, name: &str, shape: &[usize]) -> ParamId {
    let t = Tensor::from_fn(shape.to_vec(), |_| {
        let v = rng.uniform_range(0.05, 1.0);
        if rng.uniform() < 0.5 {
            -v
        } else {
            v
        }
    });
    store.insert(name, t.with_grad(true)).expect("fresh name")
}

/// Reduces `out` to a scalar through fixed random weights, so every output
/// coordinate contributes a distinct gradient.
fn project(tape: &mut Tape<f64>, out: Var, weights: &[f64]) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let r = tape.constant(shape, weights[..n].to_vec())?;
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

type OpFn = fn(&mut Tape<f64>, &ParamStore<f64>, &[ParamId]) -> Result<Var, TensorError>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn p(t: &mut Tape<f64>, s: &ParamStore<f64>, ids: &[ParamId], i: usize) -> Var {
        t.param(s, ids[i])
    }
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.matmul(a, b)
        }),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 2]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.bmm(a, b, false)
        }),
        ("bmm_transposed", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.bmm(a, b, true)
        }),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.add(a, b)
        }),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.sub(a, b)
        }),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.mul(a, b)
        }),
        ("add_bias", vec![vec![2, 2, 3], vec![3]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.add_bias(a, b)
        }),
        ("scale", vec![vec![5]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            Ok(t.scale(a, -1.7))
        }),
        ("relu", vec![vec![8]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            Ok(t.relu(a))
        }),
        ("sigmoid", vec![vec![6]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            Ok(t.sigmoid(a))
        }),
        ("tanh", vec![vec![6]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            Ok(t.tanh(a))
        }),
        ("log", vec![vec![6]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            let sq = t.mul(a, a)?;
            Ok(t.log(sq))
        }),
        ("dropout", vec![vec![4, 5]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            t.dropout(a, 0.4, Some(&mut EngineRng::seed(11)))
        }),
        ("concat", vec![vec![2, 2, 3], vec![2, 2, 1]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.concat(&[a, b, a], 2)
        }),
        ("narrow", vec![vec![2, 5, 3]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            t.narrow(a, 1, 1, 3)
        }),
        ("reshape", vec![vec![2, 6]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            t.reshape(a, vec![3, 4])
        }),
        ("sum", vec![vec![2, 3]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            let sq = t.mul(a, a)?;
            Ok(t.sum(sq))
        }),
        ("mean", vec![vec![2, 3]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            let sq = t.mul(a, a)?;
            Ok(t.mean(sq))
        }),
        ("sum_last", vec![vec![2, 3, 4]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            t.sum_last(a)
        }),
        ("masked_softmax", vec![vec![2, 2, 4]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            let mask = [true, true, false, true, true, false, true, true, true, true, true, false, true, true, true, true];
            t.masked_softmax(a, &mask)
        }),
        ("where_rows", vec![vec![3, 2], vec![3, 2]], |t, s, ids| {
            let (a, b) = (p(t, s, ids, 0), p(t, s, ids, 1));
            t.where_rows(&[true, false, true], a, b)
        }),
        ("bce_loss", vec![vec![4]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            let y = t.sigmoid(a);
            t.bce_loss(y, &[1, 0, 0, 1])
        }),
        ("embedding", vec![vec![5, 3]], |t, s, ids| t.embedding(s, ids[0], &[4, 0, 4, 2], &[2, 2])),
        ("embedding_lookup", vec![vec![5, 3]], |t, s, ids| {
            let a = p(t, s, ids, 0);
            t.embedding_lookup(a, &[1, 1, 3], &[3])
        }),
        ("seq_attention", vec![vec![2, 3, 4], vec![2, 5, 4], vec![4, 4]], |t, s, ids| {
            let (q, v, w) = (p(t, s, ids, 0), p(t, s, ids, 1), p(t, s, ids, 2));
            let mask = [true, true, true, false, false, true, true, true, true, true];
            layers::seq_attention(t, q, v, &mask, w)
        }),
        ("self_attention", vec![vec![2, 4, 3], vec![3]], |t, s, ids| {
            let (u, w) = (p(t, s, ids, 0), p(t, s, ids, 1));
            layers::self_attention(t, u, &[true, true, false, false, true, true, true, true], w)
        }),
        ("lstm_cell", vec![vec![2, 8], vec![2, 2], vec![2, 2], vec![2, 8]], |t, s, ids| {
            let (x, h, c, w) = (p(t, s, ids, 0), p(t, s, ids, 1), p(t, s, ids, 2), p(t, s, ids, 3));
            let (h, c) = layers::lstm_cell(t, x, h, c, w)?;
            t.concat(&[h, c], 1)
        }),
        (
            "bilstm",
            vec![vec![2, 4, 3], vec![3, 8], vec![2, 8], vec![8], vec![3, 8], vec![2, 8], vec![8]],
            |t, s, ids| {
                let x = p(t, s, ids, 0);
                let dir = |t: &mut Tape<f64>, k: usize| layers::LstmParams {
                    w_ih: p(t, s, ids, k),
                    w_hh: p(t, s, ids, k + 1),
                    bias: p(t, s, ids, k + 2),
                };
                let (f, b) = (dir(t, 1), dir(t, 4));
                let mask = [true, true, true, false, true, true, true, true];
                layers::bilstm(t, x, &mask, f, b)
            },
        ),
    ]
}

/// Finite-difference check of every differentiable tape operation and
/// layer, each on small random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteEntry>, TensorError> {
    let mut rng = EngineRng::seed(seed);
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| rand_param(&mut store, &mut rng, &format!("{name}.{i}"), s))
            .collect();
        let weights: Vec<f64> = (0..256).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let report = check_gradients::<_, TensorError>(&mut store, STEP, |tape, s| {
            let y = f(tape, s, &ids)?;
            if tape.value(y).len() == 1 {
                Ok(y)
            } else {
                project(tape, y, &weights)
            }
        })?;
        out.push(SuiteEntry {
            name: name.to_string(),
            report,
            tolerance: OP_TOLERANCE,
        });
    }
    Ok(out)
}

/// End-to-end check of the full network on a micro configuration: loss is
/// the mean cross-entropy of one training batch of the synthetic corpus,
/// with a fixed dropout mask.
pub fn model_check(seed: u64, config: ModelConfig) -> Result<SuiteEntry, ModelError> {
    let mut rng = EngineRng::seed(seed);
    let shape = SyntheticShape {
        groups: 2,
        candidates: 2,
        passage_words: 3,
        labeled: true,
    };
    let raw = synthetic::separable_groups(shape, &mut rng);
    let resources = FeatureResources {
        knowledge: synthetic::toy_knowledge(),
        ..Default::default()
    };
    let prepared = synthetic::prepare(&raw, &resources, config, &mut rng);
    let config = prepared.config;
    let batch = make_batches(&prepared.groups, 32, None).remove(0);
    let labels = batch.label_vec().expect("synthetic data is labeled");
    let model = Model::<f64>::new(config.clone(), &mut rng, None)?;
    let mut store = model.into_params();
    let dropout_seed = rng.fork(1).initial_seed();
    let report = check_gradients(&mut store, STEP, |tape, s| {
        let model = Model::from_params(config.clone(), s.clone())?;
        let y = model.forward(tape, &batch, Some(&mut EngineRng::seed(dropout_seed)))?;
        Ok::<_, ModelError>(tape.bce_loss(y, &labels)?)
    })?;
    Ok(SuiteEntry {
        name: "model".to_string(),
        report,
        tolerance: MODEL_TOLERANCE,
    })
}

/// Every op check plus the end-to-end micro-model check.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>, ModelError> {
    let mut out = op_suite(seed)?;
    out.push(model_check(seed, ModelConfig::micro())?);
    Ok(out)
}
