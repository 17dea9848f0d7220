use proptest::prelude::*;
use trian::optim::lr_at_epoch;
use trian::{EngineRng, Tape};

mod common;

use common::fixtures::padding_worst;

#[test]
fn padding_does_not_change_outputs() {
    let worst = padding_worst(100);
    assert!(worst < 1e-6, "max padded/unpadded difference {worst}");
}

fn mask_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>)> {
    (1usize..4, 1usize..7).prop_flat_map(|(rows, n)| {
        (
            Just(rows),
            Just(n),
            prop::collection::vec(-30.0f64..30.0, rows * n),
            prop::collection::vec(any::<bool>(), rows * n),
        )
    })
}

proptest! {
    #[test]
    fn masked_softmax_rows_are_distributions((rows, n, scores, mut mask) in mask_strategy()) {
        for r in 0..rows {
            mask[r * n] = true;
        }
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(vec![rows, n], scores).unwrap();
        let p = tape.masked_softmax(s, &mask).unwrap();
        let out = tape.value(p);
        for r in 0..rows {
            let row = &out[r * n..(r + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, &m) in row.iter().zip(&mask[r * n..(r + 1) * n]) {
                prop_assert!(*v >= 0.0);
                if !m {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn dropout_keeps_or_rescales(values in prop::collection::vec(-5.0f64..5.0, 1..64), rate in 0.0f64..0.9, seed in any::<u64>()) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![values.len()], values.clone()).unwrap();
        let eval = tape.dropout(x, rate, None).unwrap();
        prop_assert_eq!(tape.value(eval), values.as_slice());
        let mut rng = EngineRng::seed(seed);
        let y = tape.dropout(x, rate, Some(&mut rng)).unwrap();
        let keep = 1.0 / (1.0 - rate);
        for (o, v) in tape.value(y).iter().zip(&values) {
            prop_assert!(*o == 0.0 || (o - v * keep).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_is_nonincreasing(epoch in 1usize..200, base in 1e-5f64..1.0) {
        let h = [10, 15];
        prop_assert!(lr_at_epoch(base, &h, epoch + 1) <= lr_at_epoch(base, &h, epoch));
    }
}

#[test]
fn dropout_mean_is_preserved() {
    let n = 200_000;
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(vec![n], vec![1.0; n]).unwrap();
    let y = tape.dropout(x, 0.4, Some(&mut EngineRng::seed(3))).unwrap();
    let mean = tape.value(y).iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
}
