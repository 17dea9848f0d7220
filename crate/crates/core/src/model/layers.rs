//! Attention and recurrent building blocks, written against the tape.

use crate::tensor::{Result, Scalar, Tape, Var};

/// Broadcasts a `[B × n]` key mask over `m` query rows: `[B × m × n]`.
pub fn expand_mask(mask: &[bool], batch: usize, m: usize) -> Vec<bool> {
    let n = if batch == 0 { 0 } else { mask.len() / batch };
    let mut out = Vec::with_capacity(batch * m * n);
    for b in 0..batch {
        let row = &mask[b * n..(b + 1) * n];
        for _ in 0..m {
            out.extend_from_slice(row);
        }
    }
    out
}

fn project_relu<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let d = s[2];
    let flat = tape.reshape(x, vec![s[0] * s[1], d])?;
    let proj = tape.matmul(flat, w)?;
    let act = tape.relu(proj);
    let width = tape.shape(w)[1];
    tape.reshape(act, vec![s[0], s[1], width])
}

/// Sequence attention. For each query row `u`, weights
/// `α_i ∝ exp(relu(u·W)·relu(v_i·W))` over unmasked `v_i` and returns
/// `Σ α_i v_i`.
///
/// `query` is `[B × m × d]`, `values` is `[B × n × d]`, `key_mask` is
/// `[B × n]` and `w` is `[d × d_att]`. Output is `[B × m × d]`.
pub fn seq_attention<T: Scalar>(
    tape: &mut Tape<T>,
    query: Var,
    values: Var,
    key_mask: &[bool],
    w: Var,
) -> Result<Var> {
    let (batch, m) = (tape.shape(query)[0], tape.shape(query)[1]);
    let qp = project_relu(tape, query, w)?;
    let vp = project_relu(tape, values, w)?;
    let scores = tape.bmm(qp, vp, true)?;
    let alpha = tape.masked_softmax(scores, &expand_mask(key_mask, batch, m))?;
    tape.bmm(alpha, values, false)
}

/// Self-attention summary: `α_i ∝ exp(w·u_i)` over unmasked rows, returns
/// `Σ α_i u_i`. `u` is `[B × n × d]`, `w` is `[d]`; output `[B × d]`.
pub fn self_attention<T: Scalar>(tape: &mut Tape<T>, u: Var, mask: &[bool], w: Var) -> Result<Var> {
    let s = tape.shape(u).to_vec();
    let (batch, n, d) = (s[0], s[1], s[2]);
    let flat = tape.reshape(u, vec![batch * n, d])?;
    let col = tape.reshape(w, vec![d, 1])?;
    let scores = tape.matmul(flat, col)?;
    let scores = tape.reshape(scores, vec![batch, 1, n])?;
    let alpha = tape.masked_softmax(scores, mask)?;
    let out = tape.bmm(alpha, u, false)?;
    tape.reshape(out, vec![batch, d])
}

/// One LSTM direction. Gate layout along the `4h` axis is input, forget,
/// cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    /// `[d × 4h]`
    pub w_ih: Var,
    /// `[h × 4h]`
    pub w_hh: Var,
    /// `[4h]`
    pub bias: Var,
}

/// One recurrence step given the precomputed input projection
/// `x·W_ih + b` (`[B × 4h]`). Returns `(h, c)`.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    x_proj: Var,
    h_prev: Var,
    c_prev: Var,
    w_hh: Var,
) -> Result<(Var, Var)> {
    let hidden = tape.shape(h_prev)[1];
    let rec = tape.matmul(h_prev, w_hh)?;
    let gates = tape.add(x_proj, rec)?;
    let gate = |tape: &mut Tape<T>, k: usize| tape.narrow(gates, 1, k * hidden, hidden);
    let i = gate(tape, 0)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, 1)?;
    let f = tape.sigmoid(f);
    let g = gate(tape, 2)?;
    let g = tape.tanh(g);
    let o = gate(tape, 3)?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs one direction over `[B × L × d]` inputs. Masked (padding) steps
/// carry the state through unchanged and emit zeros. Output `[B × L × h]`.
pub fn lstm<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: Var,
    mask: &[bool],
    params: LstmParams,
    reverse: bool,
) -> Result<Var> {
    let s = tape.shape(inputs).to_vec();
    let (batch, len, d) = (s[0], s[1], s[2]);
    let hidden = tape.shape(params.w_hh)[0];
    if len == 0 {
        return tape.constant(vec![batch, 0, hidden], Vec::new());
    }
    let flat = tape.reshape(inputs, vec![batch * len, d])?;
    let proj = tape.matmul(flat, params.w_ih)?;
    let proj = tape.add_bias(proj, params.bias)?;
    let proj = tape.reshape(proj, vec![batch, len, 4 * hidden])?;

    let zeros = tape.zeros(vec![batch, hidden]);
    let (mut h, mut c) = (zeros, zeros);
    let mut outputs = vec![zeros; len];
    let steps: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in steps {
        let keep: Vec<bool> = (0..batch).map(|b| mask[b * len + t]).collect();
        let xt = tape.narrow(proj, 1, t, 1)?;
        let xt = tape.reshape(xt, vec![batch, 4 * hidden])?;
        let (h_new, c_new) = lstm_cell(tape, xt, h, c, params.w_hh)?;
        c = tape.where_rows(&keep, c_new, c)?;
        h = tape.where_rows(&keep, h_new, h)?;
        let out = tape.where_rows(&keep, h_new, zeros)?;
        outputs[t] = tape.reshape(out, vec![batch, 1, hidden])?;
    }
    tape.concat(&outputs, 1)
}

/// Forward and backward passes concatenated per step: `[B × L × 2h]`.
pub fn bilstm<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: Var,
    mask: &[bool],
    forward: LstmParams,
    backward: LstmParams,
) -> Result<Var> {
    let f = lstm(tape, inputs, mask, forward, false)?;
    let b = lstm(tape, inputs, mask, backward, true)?;
    tape.concat(&[f, b], 2)
}
