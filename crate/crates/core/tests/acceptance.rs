//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use trian::checkpoint;
use trian::config::RunConfig;
use trian::eval::{accuracy, average_probabilities, predict_groups};
use trian::gradcheck::{model_check, op_suite};
use trian::model::{Model, ModelConfig, DEFAULT_NON_EMBEDDING_PARAMS};

mod common;

use common::fixtures::{ablation_table, changed_rows, padding_worst, plan, run, setup, TWO_LAYER_EXTRA_PARAMS};
use common::oracle::*;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const ORACLE_INSTANCES: u64 = 20;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const OVERFIT_BUDGET: Duration = Duration::from_secs(120);
const OVERFIT_EPOCHS: usize = 200;
const PADDING_FIXTURES: u64 = 100;
const PADDING_TOL: f64 = 1e-6;
const ENSEMBLE_TOL: f64 = 1e-7;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let ops = op_suite(1).map_err(|e| e.to_string())?;
    let model = model_check(1, ModelConfig::micro()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst_op = ops
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .unwrap();
    ensure(worst_op.report.max_rel_error < OP_TOL, || {
        format!("op {} rel error {:.3e}", worst_op.name, worst_op.report.max_rel_error)
    })?;
    ensure(model.report.max_rel_error < MODEL_TOL, || {
        format!("model rel error {:.3e} at {:?}", model.report.max_rel_error, model.report.worst)
    })?;
    ensure(elapsed < GRADCHECK_BUDGET, || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} ops, worst {} {:.2e}; model {:.2e} over {} coords; {elapsed:.1?}",
        ops.len(),
        worst_op.name,
        worst_op.report.max_rel_error,
        model.report.max_rel_error,
        model.report.coordinates
    ))
}

fn oracle_equivalence() -> Outcome {
    check_seq_attention(ORACLE_INSTANCES);
    check_self_attention(ORACLE_INSTANCES);
    check_lstm_cell(ORACLE_INSTANCES);
    check_lstm_sequence(ORACLE_INSTANCES);
    check_bce(ORACLE_INSTANCES);
    check_adamax_three_steps();
    check_adamax(ORACLE_INSTANCES);
    Ok(format!(
        "seq_attention, self_attention, lstm step/sequence, bce at 1e-6; adamax at 1e-9; {ORACLE_INSTANCES} instances each"
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let (prep, mut model, mut rng) = setup(7, ModelConfig::micro());
    let examples: usize = prep.groups.iter().map(|g| g.examples.len()).sum();
    ensure(examples == 50, || format!("{examples} examples"))?;
    let out = run(&prep, &mut model, &mut rng, &plan(OVERFIT_EPOCHS), 10);
    let best = Model::from_params(prep.config.clone(), out.best).map_err(|e| e.to_string())?;
    let acc = accuracy(&predict_groups(&best, &prep.groups, 32).map_err(|e| e.to_string())?).unwrap_or(0.0);
    let elapsed = start.elapsed();
    let first = out.trace.iter().find(|r| r.dev_accuracy == Some(1.0)).map(|r| r.epoch);
    ensure(acc == 1.0, || format!("train group accuracy {acc}"))?;
    ensure(elapsed < OVERFIT_BUDGET, || format!("took {elapsed:.1?}"))?;
    Ok(format!("100% group accuracy first at epoch {first:?} of {OVERFIT_EPOCHS}; {elapsed:.1?}"))
}

fn config_fidelity() -> Outcome {
    let cfg = RunConfig::default();
    let (m, t) = (&cfg.model, &cfg.train);
    let got = (
        (m.glove_dim, m.pos_dim, m.ner_dim, m.rel_dim, m.hidden),
        (m.dropout, t.lr, t.clip_norm),
        (t.batch_size, t.epochs, t.tune_top_k, cfg.ensemble.members),
        t.lr_halving_epochs.clone(),
    );
    let want = ((300, 12, 8, 10, 96), (0.4, 2e-3, 10.0), (32, 50, 10, 9), vec![10, 15]);
    ensure(got == want, || format!("{got:?}"))?;
    let lrs = (t.lr_at_epoch(10), t.lr_at_epoch(11), t.lr_at_epoch(16));
    ensure(lrs == (2e-3, 1e-3, 5e-4), || format!("lr at 10/11/16 {lrs:?}"))?;
    Ok("defaults and lr schedule 2e-3/1e-3/5e-4 at epochs 10/11/16".into())
}

fn padding_invariance() -> Outcome {
    let worst = padding_worst(PADDING_FIXTURES);
    ensure(worst < PADDING_TOL, || format!("max difference {worst:.3e}"))?;
    Ok(format!("{PADDING_FIXTURES} fixtures, max difference {worst:.2e}"))
}

fn freezing() -> Outcome {
    let mut moved = Vec::new();
    for k in [10, 0] {
        let (prep, mut model, mut rng) = setup(8, ModelConfig::micro());
        let init = model.clone();
        run(&prep, &mut model, &mut rng, &plan(3), k);
        let rows = changed_rows(&init, &model, "embed.word");
        ensure(rows <= k, || format!("k={k}: {rows} rows changed"))?;
        moved.push(rows);
    }
    Ok(format!("k=10 moved {} rows, k=0 moved {}", moved[0], moved[1]))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut artifacts = Vec::new();
    for name in ["a", "b"] {
        let (prep, mut model, mut rng) = setup(9, ModelConfig::micro());
        let out = run(&prep, &mut model, &mut rng, &plan(4), 10);
        let ckpt = dir.path().join(name);
        checkpoint::save(&ckpt, &model, 9, serde_json::Value::Null).map_err(|e| e.to_string())?;
        let trace = serde_json::to_string(&out.trace).map_err(|e| e.to_string())?;
        let read = |f: &str| fs::read(ckpt.join(f)).map_err(|e| e.to_string());
        artifacts.push((trace, read(checkpoint::MANIFEST_FILE)?, read(checkpoint::PARAMS_FILE)?));
    }
    ensure(artifacts[0] == artifacts[1], || "runs with the same seed differ".into())?;
    Ok(format!("trace and {}-byte checkpoint identical", artifacts[0].2.len()))
}

fn ablation_structure() -> Outcome {
    let base = ModelConfig::default();
    ensure(base.input_dim() == 332, || format!("default d_in {}", base.input_dim()))?;
    ensure(base.non_embedding_parameter_count() == DEFAULT_NON_EMBEDDING_PARAMS, || {
        format!("default parameters {}", base.non_embedding_parameter_count())
    })?;
    let table = ablation_table();
    for (name, c, d_in, drop) in &table {
        let got = base.non_embedding_parameter_count() - c.non_embedding_parameter_count();
        ensure(c.input_dim() == *d_in && got == *drop, || {
            format!("{name}: d_in {} (want {d_in}), removed {got} (want {drop})", c.input_dim())
        })?;
    }
    let mut two = base.clone();
    two.num_attention_layers = 2;
    let extra = two.non_embedding_parameter_count() - base.non_embedding_parameter_count();
    ensure(extra == TWO_LAYER_EXTRA_PARAMS, || format!("layers=2 adds {extra}"))?;
    let mut micro = ModelConfig::micro();
    micro.num_attention_layers = 2;
    let (prep, mut model, mut rng) = setup(11, micro);
    let out = run(&prep, &mut model, &mut rng, &plan(5), 10);
    ensure(out.trace.iter().all(|r| r.train_loss.is_finite()), || "layers=2 loss not finite".into())?;
    Ok(format!("{} ablations match; layers=2 trained {} epochs", table.len(), out.trace.len()))
}

fn ensemble() -> Outcome {
    let (prep, _, rng) = setup(21, ModelConfig::micro());
    let members: Vec<_> = (0..3)
        .map(|i| {
            let mut rng = rng.fork(100 + i);
            let mut model = Model::new(prep.config.clone(), &mut rng, None).unwrap();
            run(&prep, &mut model, &mut rng, &plan(2), 10);
            predict_groups(&model, &prep.groups, 32).unwrap()
        })
        .collect();
    ensure(members[0] != members[1] && members[1] != members[2], || "members are identical".into())?;
    let avg = average_probabilities(&members).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (g, out) in avg.iter().enumerate() {
        let n = members[0][g].probabilities.len();
        let want: Vec<f64> = (0..n)
            .map(|c| members.iter().map(|m| m[g].probabilities[c]).sum::<f64>() / members.len() as f64)
            .collect();
        for (p, w) in out.probabilities.iter().zip(&want) {
            worst = worst.max((p - w).abs());
        }
        let argmax = (0..n).fold(0, |b, i| if want[i] > want[b] { i } else { b });
        ensure(out.chosen == argmax, || format!("group {} picks {} not {argmax}", out.group_id, out.chosen))?;
    }
    ensure(worst < ENSEMBLE_TOL, || format!("max difference {worst:.3e}"))?;
    Ok(format!("3 members over {} groups, max difference {worst:.2e}", avg.len()))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("oracle equivalence", oracle_equivalence),
        ("overfit sanity", overfit),
        ("configuration fidelity", config_fidelity),
        ("padding invariance", padding_invariance),
        ("freezing", freezing),
        ("determinism", determinism),
        ("ablation structure", ablation_structure),
        ("ensemble averaging", ensemble),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_message(p)));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
