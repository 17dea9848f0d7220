use trian::corpus::top_k_tunable;
use trian::eval::{accuracy, predict_groups};
use trian::featurize::make_batches;
use trian::model::{Model, ModelConfig};
use trian::optim::{train, Adamax, Stage, TrainData, TrainError};
use trian::Tape;

mod common;

use common::fixtures::{changed_rows, plan, run, setup};

#[test]
fn overfits_separable_set() {
    let (prep, mut model, mut rng) = setup(7, ModelConfig::micro());
    let out = run(&prep, &mut model, &mut rng, &plan(200), 10);
    let best = Model::from_params(prep.config.clone(), out.best).unwrap();
    let acc = accuracy(&predict_groups(&best, &prep.groups, 32).unwrap()).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!(out.best_dev_accuracy, Some(1.0));
}

#[test]
fn only_top_k_word_rows_move() {
    for k in [10, 0] {
        let (prep, mut model, mut rng) = setup(8, ModelConfig::micro());
        let init = model.clone();
        run(&prep, &mut model, &mut rng, &plan(3), k);
        let moved = changed_rows(&init, &model, "embed.word");
        assert!(moved <= k, "k={k}: {moved} rows changed");
        if k == 0 {
            assert_eq!(
                init.params().by_name("embed.word").unwrap().data(),
                model.params().by_name("embed.word").unwrap().data()
            );
        } else {
            assert!(moved > 0);
        }
        let tunable = top_k_tunable(&prep.words, k);
        let w = prep.config.glove_dim;
        let (a, b) = (init.params().by_name("embed.word").unwrap(), model.params().by_name("embed.word").unwrap());
        for row in 0..prep.words.len() {
            if !tunable.contains(&row) {
                assert_eq!(a.data()[row * w..(row + 1) * w], b.data()[row * w..(row + 1) * w]);
            }
        }
        assert!(changed_rows(&init, &model, "embed.pos") > 0, "tag embeddings stay trainable");
    }
}

#[test]
fn same_seed_same_trace_and_parameters() {
    let go = || {
        let (prep, mut model, mut rng) = setup(9, ModelConfig::micro());
        let out = run(&prep, &mut model, &mut rng, &plan(4), 10);
        (out.trace, model)
    };
    let (ta, ma) = go();
    let (tb, mb) = go();
    assert_eq!(ta, tb);
    for ((_, _, a), (_, _, b)) in ma.params().iter().zip(mb.params().iter()) {
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.data()), bits(b.data()));
    }
}

#[test]
fn zero_epochs_return_initialization() {
    let (prep, mut model, mut rng) = setup(10, ModelConfig::micro());
    let init = model.clone();
    let out = run(&prep, &mut model, &mut rng, &plan(0), 10);
    assert!(out.trace.is_empty());
    assert_eq!(out.best_epoch, None);
    for ((_, _, a), (_, _, b)) in init.params().iter().zip(out.best.iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn two_layer_variant_trains() {
    let mut base = ModelConfig::micro();
    base.num_attention_layers = 2;
    let (prep, mut model, mut rng) = setup(11, base);
    let out = run(&prep, &mut model, &mut rng, &plan(5), 10);
    assert_eq!(out.trace.len(), 5);
    assert!(out.trace.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn pretrain_stage_runs_first_with_fresh_schedule() {
    let (prep, mut model, mut rng) = setup(12, ModelConfig::micro());
    let mut p = plan(3);
    p.pretrain.epochs = 2;
    let tunable = top_k_tunable(&prep.words, 10);
    let out = train(
        &p,
        &mut model,
        TrainData {
            train: &prep.groups,
            dev: &[],
            pretrain: Some(&prep.groups[..10]),
            tunable_rows: &tunable,
        },
        &mut rng,
        |_| {},
    )
    .unwrap();
    let stages: Vec<(Stage, usize)> = out.trace.iter().map(|r| (r.stage, r.epoch)).collect();
    assert_eq!(
        stages,
        vec![
            (Stage::Pretrain, 1),
            (Stage::Pretrain, 2),
            (Stage::Finetune, 1),
            (Stage::Finetune, 2),
            (Stage::Finetune, 3)
        ]
    );
    assert_eq!(out.best_epoch, Some(3));
    assert!(out.trace.iter().all(|r| r.dev_accuracy.is_none()));
}

#[test]
fn loss_on_fixed_batch_decreases() {
    let (prep, mut model, _) = setup(13, ModelConfig::micro());
    let batch = make_batches(&prep.groups, 64, None).remove(0);
    let labels = batch.label_vec().unwrap();
    let mut opt = Adamax::new();
    let mut losses = Vec::new();
    for _ in 0..6 {
        model.params_mut().zero_grad();
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &batch, None).unwrap();
        let loss = tape.bce_loss(y, &labels).unwrap();
        losses.push(tape.scalar(loss));
        tape.backward(loss, model.params_mut()).unwrap();
        opt.step(model.params_mut(), 1e-3, &[]);
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn nan_loss_aborts_with_batch_index() {
    let (prep, mut model, mut rng) = setup(14, ModelConfig::micro());
    model.params_mut().by_name_mut("output.w3").unwrap().data_mut()[0] = f32::NAN;
    let err = train(
        &plan(1),
        &mut model,
        TrainData {
            train: &prep.groups,
            dev: &[],
            pretrain: None,
            tunable_rows: &[],
        },
        &mut rng,
        |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Divergence { batch: 0, epoch: 1, .. }), "{err}");
    assert!(err.to_string().contains("batch 0"));
}
