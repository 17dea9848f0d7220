//! Plain scalar reimplementations; each check panics on the first mismatch.

use trian::model::layers::{lstm, lstm_cell, self_attention, seq_attention, LstmParams};
use trian::optim::{clip_gradients, global_grad_norm, Adamax};
use trian::tensor::{ParamStore, Tensor};
use trian::{EngineRng, Tape};

fn randn(rng: &mut EngineRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
}

fn random_mask(rng: &mut EngineRng, batch: usize, n: usize) -> Vec<bool> {
    let mut mask = vec![false; batch * n];
    for b in 0..batch {
        let len = 1 + rng.below(n);
        mask[b * n..b * n + len].fill(true);
    }
    mask
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x[d]` times `w[d × k]`.
fn vec_mat(x: &[f64], w: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|j| x.iter().enumerate().map(|(i, xi)| xi * w[i * k + j]).sum()).collect()
}

fn softmax_masked(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() < tol, "{what}[{i}]: {g} vs {w}");
    }
}

pub fn check_seq_attention(instances: u64) {
    let mut rng = EngineRng::seed(101);
    for _ in 0..instances {
        let (batch, m, n, d) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4));
        let q = randn(&mut rng, batch * m * d);
        let v = randn(&mut rng, batch * n * d);
        let w = randn(&mut rng, d * d);
        let mask = random_mask(&mut rng, batch, n);

        let mut tape = Tape::<f64>::new();
        let qv = tape.constant(vec![batch, m, d], q.clone()).unwrap();
        let vv = tape.constant(vec![batch, n, d], v.clone()).unwrap();
        let wv = tape.constant(vec![d, d], w.clone()).unwrap();
        let out = seq_attention(&mut tape, qv, vv, &mask, wv).unwrap();

        let relu = |x: Vec<f64>| x.into_iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
        let mut want = Vec::new();
        for b in 0..batch {
            let vrow = |j: usize| &v[(b * n + j) * d..(b * n + j + 1) * d];
            let vp: Vec<Vec<f64>> = (0..n).map(|j| relu(vec_mat(vrow(j), &w, d))).collect();
            for i in 0..m {
                let qp = relu(vec_mat(&q[(b * m + i) * d..(b * m + i + 1) * d], &w, d));
                let scores: Vec<f64> = vp.iter().map(|p| dot(&qp, p)).collect();
                let alpha = softmax_masked(&scores, &mask[b * n..(b + 1) * n]);
                for k in 0..d {
                    want.push((0..n).map(|j| alpha[j] * vrow(j)[k]).sum());
                }
            }
        }
        assert_close(tape.value(out), &want, 1e-6, "seq_attention");
    }
}

pub fn check_self_attention(instances: u64) {
    let mut rng = EngineRng::seed(102);
    for _ in 0..instances {
        let (batch, n, d) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(5));
        let u = randn(&mut rng, batch * n * d);
        let w = randn(&mut rng, d);
        let mask = random_mask(&mut rng, batch, n);

        let mut tape = Tape::<f64>::new();
        let uv = tape.constant(vec![batch, n, d], u.clone()).unwrap();
        let wv = tape.constant(vec![d], w.clone()).unwrap();
        let out = self_attention(&mut tape, uv, &mask, wv).unwrap();
        assert_eq!(tape.shape(out), &[batch, d]);

        let mut want = Vec::new();
        for b in 0..batch {
            let row = |j: usize| &u[(b * n + j) * d..(b * n + j + 1) * d];
            let scores: Vec<f64> = (0..n).map(|j| dot(row(j), &w)).collect();
            let alpha = softmax_masked(&scores, &mask[b * n..(b + 1) * n]);
            for k in 0..d {
                want.push((0..n).map(|j| alpha[j] * row(j)[k]).sum());
            }
        }
        assert_close(tape.value(out), &want, 1e-6, "self_attention");
    }
}

/// One step from `(h, c)` given input `x`: gates `x·W_ih + b + h·W_hh` in
/// the order input, forget, cell, output.
fn lstm_step_oracle(x: &[f64], h: &[f64], c: &[f64], w_ih: &[f64], w_hh: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let xi = vec_mat(x, w_ih, 4 * hd);
    let hh = vec_mat(h, w_hh, 4 * hd);
    let g: Vec<f64> = (0..4 * hd).map(|k| xi[k] + hh[k] + bias[k]).collect();
    let mut h_new = vec![0.0; hd];
    let mut c_new = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, gg, o) = (sigmoid(g[k]), sigmoid(g[hd + k]), g[2 * hd + k].tanh(), sigmoid(g[3 * hd + k]));
        c_new[k] = f * c[k] + i * gg;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

pub fn check_lstm_cell(instances: u64) {
    let mut rng = EngineRng::seed(103);
    for _ in 0..instances {
        let (batch, hd) = (1 + rng.below(3), 1 + rng.below(4));
        let xp = randn(&mut rng, batch * 4 * hd);
        let h = randn(&mut rng, batch * hd);
        let c = randn(&mut rng, batch * hd);
        let w_hh = randn(&mut rng, hd * 4 * hd);

        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(vec![batch, 4 * hd], xp.clone()).unwrap();
        let hv = tape.constant(vec![batch, hd], h.clone()).unwrap();
        let cv = tape.constant(vec![batch, hd], c.clone()).unwrap();
        let wv = tape.constant(vec![hd, 4 * hd], w_hh.clone()).unwrap();
        let (ho, co) = lstm_cell(&mut tape, xv, hv, cv, wv).unwrap();

        // x_proj already holds x·W_ih + b: feed it through an identity W_ih
        let eye: Vec<f64> = (0..16 * hd * hd).map(|i| f64::from(i / (4 * hd) == i % (4 * hd))).collect();
        let zero = vec![0.0; 4 * hd];
        let (mut wh, mut wc) = (Vec::new(), Vec::new());
        for b in 0..batch {
            let (hn, cn) = lstm_step_oracle(
                &xp[b * 4 * hd..(b + 1) * 4 * hd],
                &h[b * hd..(b + 1) * hd],
                &c[b * hd..(b + 1) * hd],
                &eye,
                &w_hh,
                &zero,
            );
            wh.extend(hn);
            wc.extend(cn);
        }
        assert_close(tape.value(ho), &wh, 1e-6, "lstm h");
        assert_close(tape.value(co), &wc, 1e-6, "lstm c");
    }
}

pub fn check_lstm_sequence(instances: u64) {
    let mut rng = EngineRng::seed(104);
    for _ in 0..instances {
        let (batch, len, d, hd) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3));
        let x = randn(&mut rng, batch * len * d);
        let w_ih = randn(&mut rng, d * 4 * hd);
        let w_hh = randn(&mut rng, hd * 4 * hd);
        let bias = randn(&mut rng, 4 * hd);
        let mask = random_mask(&mut rng, batch, len);
        let reverse = rng.below(2) == 1;

        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(vec![batch, len, d], x.clone()).unwrap();
        let params = LstmParams {
            w_ih: tape.constant(vec![d, 4 * hd], w_ih.clone()).unwrap(),
            w_hh: tape.constant(vec![hd, 4 * hd], w_hh.clone()).unwrap(),
            bias: tape.constant(vec![4 * hd], bias.clone()).unwrap(),
        };
        let out = lstm(&mut tape, xv, &mask, params, reverse).unwrap();

        let mut want = vec![0.0; batch * len * hd];
        for b in 0..batch {
            let real = mask[b * len..(b + 1) * len].iter().filter(|&&m| m).count();
            let steps: Vec<usize> = if reverse { (0..real).rev().collect() } else { (0..real).collect() };
            let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
            for t in steps {
                let xt = &x[(b * len + t) * d..(b * len + t + 1) * d];
                (h, c) = lstm_step_oracle(xt, &h, &c, &w_ih, &w_hh, &bias);
                want[(b * len + t) * hd..(b * len + t + 1) * hd].copy_from_slice(&h);
            }
        }
        assert_close(tape.value(out), &want, 1e-6, "lstm sequence");
    }
}

pub fn check_bce(instances: u64) {
    let mut rng = EngineRng::seed(105);
    let oracle = |p: &[f64], y: &[u8]| -> f64 {
        let terms: f64 = p
            .iter()
            .zip(y)
            .map(|(&p, &y)| {
                let p = p.clamp(1e-7, 1.0 - 1e-7);
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        terms / p.len() as f64
    };
    let mut cases: Vec<(Vec<f64>, Vec<u8>)> = vec![
        (vec![0.5], vec![1]),
        (vec![1.0 - 1e-7], vec![1]),
        (vec![0.9, 0.2], vec![1, 0]),
        (vec![0.0, 1.0], vec![1, 0]),
    ];
    for _ in 0..instances {
        let n = 1 + rng.below(8);
        let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        cases.push((p, y));
    }
    for (p, y) in cases {
        let mut tape = Tape::<f64>::new();
        let pv = tape.constant(vec![p.len()], p.clone()).unwrap();
        let loss = tape.bce_loss(pv, &y).unwrap();
        let got = tape.scalar(loss);
        assert!((got - oracle(&p, &y)).abs() < 1e-6, "{p:?} {y:?}: {got}");
    }
    let mut tape = Tape::<f64>::new();
    let half = tape.constant(vec![1], vec![0.5]).unwrap();
    let l = tape.bce_loss(half, &[1]).unwrap();
    assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    let sure = tape.constant(vec![1], vec![1.0 - 1e-7]).unwrap();
    let l = tape.bce_loss(sure, &[1]).unwrap();
    assert!(tape.scalar(l) <= 1.2e-7);
    let pair = tape.constant(vec![2], vec![0.9, 0.2]).unwrap();
    let l = tape.bce_loss(pair, &[1, 0]).unwrap();
    assert!((tape.scalar(l) - (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0).abs() < 1e-12);
}

struct ScalarAdamax {
    m: f64,
    u: f64,
    t: i32,
}

impl ScalarAdamax {
    fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.u = (0.999 * self.u).max(g.abs());
        theta - lr / (1.0 - 0.9f64.powi(self.t)) * self.m / (self.u + 1e-8)
    }
}

fn one_param(values: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("theta", Tensor::new(vec![values.len()], values.to_vec()).unwrap().with_grad(true))
        .unwrap();
    s
}

/// Sets the gradient of `theta` by backpropagating `Σ g_i θ_i`.
fn set_grad(store: &mut ParamStore<f64>, g: &[f64]) {
    store.zero_grad();
    let id = store.id("theta").unwrap();
    let mut tape = Tape::new();
    let theta = tape.param(store, id);
    let gv = tape.constant(vec![g.len()], g.to_vec()).unwrap();
    let prod = tape.mul(theta, gv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss, store).unwrap();
}

pub fn check_adamax_three_steps() {
    let mut store = one_param(&[0.0]);
    let mut opt = Adamax::new();
    let mut oracle = ScalarAdamax { m: 0.0, u: 0.0, t: 0 };
    let mut theta = 0.0;
    for g in [1.0, -0.5, 0.25] {
        set_grad(&mut store, &[g]);
        opt.step(&mut store, 2e-3, &[]);
        theta = oracle.step(theta, g, 2e-3);
        let got = store.by_name("theta").unwrap().data()[0];
        assert!((got - theta).abs() < 1e-9, "{got} vs {theta}");
    }
}

pub fn check_adamax(instances: u64) {
    let mut rng = EngineRng::seed(106);
    for _ in 0..instances {
        let n = 1 + rng.below(6);
        let init = randn(&mut rng, n);
        let mut store = one_param(&init);
        let mut opt = Adamax::new();
        let mut oracles: Vec<ScalarAdamax> = (0..n).map(|_| ScalarAdamax { m: 0.0, u: 0.0, t: 0 }).collect();
        let mut theta = init.clone();
        let lr = rng.uniform_range(1e-4, 1e-2);
        for _ in 0..1 + rng.below(6) {
            let g = randn(&mut rng, n);
            set_grad(&mut store, &g);
            opt.step(&mut store, lr, &[]);
            for i in 0..n {
                theta[i] = oracles[i].step(theta[i], g[i], lr);
            }
        }
        assert_close(store.by_name("theta").unwrap().data(), &theta, 1e-9, "adamax");
        let (_, u) = opt.moments(store.id("theta").unwrap()).unwrap();
        assert!(u.iter().all(|&v| v >= 0.0));
    }
}

pub fn check_clipping(instances: u64) {
    let mut rng = EngineRng::seed(107);
    for _ in 0..instances {
        let mut store = ParamStore::<f64>::new();
        let scale = rng.uniform_range(0.1, 20.0);
        let mut all = Vec::new();
        for p in 0..1 + rng.below(4) {
            let n = 1 + rng.below(10);
            let id = store
                .insert(format!("p{p}"), Tensor::zeros(vec![n]).with_grad(true))
                .unwrap();
            let g: Vec<f64> = randn(&mut rng, n).into_iter().map(|v| v * scale).collect();
            all.extend(g.iter().copied());
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let gv = tape.constant(vec![n], g).unwrap();
            let prod = tape.mul(x, gv).unwrap();
            let loss = tape.sum(prod);
            tape.backward(loss, &mut store).unwrap();
        }
        let norm = all.iter().map(|v| v * v).sum::<f64>().sqrt();
        let applied = clip_gradients(&mut store, 10.0);
        let after = global_grad_norm(&store);
        assert!((after - norm.min(10.0)).abs() < 1e-6, "{after} vs {norm}");
        assert!((applied - if norm > 10.0 { 10.0 / norm } else { 1.0 }).abs() < 1e-12);
    }
}
