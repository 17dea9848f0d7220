use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::{numel, EngineRng, ParamId, ParamStore, Result, Scalar, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Embedding {
        table: ParamId,
        indices: Vec<usize>,
        width: usize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
        width: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Dropout {
        x: Var,
        factors: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Narrow {
        x: Var,
        outer: usize,
        in_chunk: usize,
        offset: usize,
        out_chunk: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast {
        x: Var,
        width: usize,
    },
    MaskedSoftmax {
        x: Var,
        width: usize,
    },
    WhereRows {
        keep: Vec<bool>,
        on_true: Var,
        on_false: Var,
        width: usize,
    },
    Bce {
        y: Var,
        labels: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed operations, replayed in reverse by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Probability floor and ceiling offset used by the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` on it is a no-op.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = numel(&shape);
        self.push(shape, vec![T::zero(); n], Op::Leaf, false)
    }

    /// Copies a stored parameter onto the tape as a leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(id),
            t.requires_grad(),
        )
    }

    /// Gathers rows of a stored `[rows × width]` table without copying the
    /// whole table. Output shape is `prefix ++ [width]`; backward touches
    /// only the gathered rows.
    pub fn embedding(
        &mut self,
        store: &ParamStore<T>,
        id: ParamId,
        indices: &[usize],
        prefix: &[usize],
    ) -> Result<Var> {
        let table = store.get(id);
        let (rows, width) = matrix_dims("embedding", table.shape())?;
        check_prefix("embedding", indices.len(), prefix)?;
        let value = gather_rows(table.data(), rows, width, indices)?;
        let mut shape = prefix.to_vec();
        shape.push(width);
        Ok(self.push(
            shape,
            value,
            Op::Embedding {
                table: id,
                indices: indices.to_vec(),
                width,
            },
            table.requires_grad(),
        ))
    }

    /// Row lookup into a `[rows × width]` table already on the tape.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize], prefix: &[usize]) -> Result<Var> {
        let (rows, width) = matrix_dims("embedding_lookup", self.shape(table))?;
        check_prefix("embedding_lookup", indices.len(), prefix)?;
        let value = gather_rows(self.value(table), rows, width, indices)?;
        let mut shape = prefix.to_vec();
        shape.push(width);
        let rg = self.requires(table);
        Ok(self.push(
            shape,
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
                width,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        mm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b, m, k, n }, rg))
    }

    /// Batched product of `[B×m×k]` with `[B×k×n]`, or with `[B×n×k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || TensorError::Shape {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for bi in 0..batch {
                let ab = &av[bi * m * k..(bi + 1) * m * k];
                let bb = &bv[bi * k * n..(bi + 1) * k * n];
                let cb = &mut out[bi * m * n..(bi + 1) * m * n];
                if transpose_b {
                    mm_nt(ab, bb, cb, m, k, n);
                } else {
                    mm_nn(ab, bb, cb, m, k, n);
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            vec![batch, m, n],
            out,
            Op::Bmm {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> (Vec<usize>, Vec<T>, bool) {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        (
            self.shape(a).to_vec(),
            out,
            self.requires(a) || self.requires(b),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (shape, out, rg) = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(shape, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (shape, out, rg) = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(shape, out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (shape, out, rg) = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(shape, out, Op::Mul(a, b), rg))
    }

    /// Adds a `[n]` vector to every row of a `[.. × n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sb.first().unwrap_or(&0);
        if sb.len() != 1 || sx.last() != Some(&n) {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bv = self.value(bias);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }, rg))
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), out, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.map(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log(x), |v| v.ln())
    }

    /// Inverted dropout. With `rng == None` (evaluation) this is the identity
    /// and returns `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut EngineRng>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        let Some(rng) = rng else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let factors: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&factors)
            .map(|(&v, &f)| v * f)
            .collect();
        let rg = self.requires(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, factors }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid(format!(
                "concat axis {axis} out of range for shape {base:?}"
            )));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        let mut chunks = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s[..axis] == base[..axis]
                && s[axis + 1..] == base[axis + 1..];
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
            chunks.push(s[axis] * inner);
        }
        let out_chunk: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * out_chunk);
        for o in 0..outer {
            for (&v, &c) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(v)[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.requires(v));
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
            rg,
        ))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::Invalid(format!(
                "narrow {start}..{} on axis {axis} out of range for shape {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let in_chunk = s[axis] * inner;
        let out_chunk = len * inner;
        let offset = start * inner;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * out_chunk);
        for o in 0..outer {
            let base = o * in_chunk + offset;
            out.extend_from_slice(&xv[base..base + out_chunk]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.requires(x);
        Ok(self.push(
            shape,
            out,
            Op::Narrow {
                x,
                outer,
                in_chunk,
                offset,
                out_chunk,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.requires(x);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.requires(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let rg = self.requires(x);
        self.push(vec![], vec![s], Op::Mean(x), rg)
    }

    /// Sums over the last axis: `[.. × n] → [..]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let Some((&width, lead)) = s.split_last() else {
            return Err(TensorError::Invalid("sum_last on a scalar".into()));
        };
        let out = if width == 0 {
            vec![T::zero(); numel(lead)]
        } else {
            self.value(x)
                .chunks(width)
                .map(|c| c.iter().copied().sum())
                .collect()
        };
        let rg = self.requires(x);
        Ok(self.push(lead.to_vec(), out, Op::SumLast { x, width }, rg))
    }

    /// Softmax over the last axis restricted to positions where `mask` is
    /// true; masked positions come out as exactly zero. `mask` has one entry
    /// per element of `scores`.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(scores).to_vec();
        let width = *s
            .last()
            .ok_or_else(|| TensorError::Invalid("masked_softmax on a scalar".into()))?;
        if mask.len() != numel(&s) {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: s,
                rhs: vec![mask.len()],
            });
        }
        let xv = self.value(scores);
        let mut out = vec![T::zero(); xv.len()];
        for (row, ((xr, mr), or)) in xv
            .chunks(width)
            .zip(mask.chunks(width))
            .zip(out.chunks_mut(width))
            .enumerate()
        {
            let max = xr
                .iter()
                .zip(mr)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(TensorError::DegenerateMask { row })?;
            let mut total = T::zero();
            for ((o, &v), &m) in or.iter_mut().zip(xr).zip(mr) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            or.iter_mut().for_each(|o| *o = *o / total);
            debug_assert!(
                !total.is_finite() || (or.iter().copied().sum::<T>() - T::one()).abs() < T::of(1e-4),
                "attention weights must sum to one"
            );
        }
        let rg = self.requires(scores);
        Ok(self.push(s, out, Op::MaskedSoftmax { x: scores, width }, rg))
    }

    /// Row-wise select over `[rows × width]` views: row `r` of the output is
    /// taken from `on_true` when `keep[r]`, else from `on_false`.
    pub fn where_rows(&mut self, keep: &[bool], on_true: Var, on_false: Var) -> Result<Var> {
        self.same_shape("where_rows", on_true, on_false)?;
        let total = self.value(on_true).len();
        if keep.is_empty() || total % keep.len() != 0 {
            return Err(TensorError::Shape {
                op: "where_rows",
                lhs: self.shape(on_true).to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let width = total / keep.len();
        let (tv, fv) = (self.value(on_true), self.value(on_false));
        let mut out = Vec::with_capacity(total);
        for (r, &k) in keep.iter().enumerate() {
            let src = if k { tv } else { fv };
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let rg = self.requires(on_true) || self.requires(on_false);
        Ok(self.push(
            self.shape(on_true).to_vec(),
            out,
            Op::WhereRows {
                keep: keep.to_vec(),
                on_true,
                on_false,
                width,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities `y` against 0/1 labels,
    /// with `y` clamped to `[1e-7, 1 − 1e-7]` before the logarithm.
    pub fn bce_loss(&mut self, y: Var, labels: &[u8]) -> Result<Var> {
        let n = self.value(y).len();
        if labels.len() != n || n == 0 {
            return Err(TensorError::Shape {
                op: "bce_loss",
                lhs: self.shape(y).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(TensorError::Invalid(format!("label {bad} is not 0 or 1")));
        }
        let labels: Vec<T> = labels.iter().map(|&l| T::of(l as f64)).collect();
        let (lo, hi) = clamp_bounds::<T>();
        let total: T = self
            .value(y)
            .iter()
            .zip(&labels)
            .map(|(&p, &l)| {
                let p = if p.is_nan() { p } else { p.max(lo).min(hi) };
                -(l * p.ln() + (T::one() - l) * (T::one() - p).ln())
            })
            .sum();
        let loss = total / T::of(n as f64);
        let rg = self.requires(y);
        Ok(self.push(vec![], vec![loss], Op::Bce { y, labels }, rg))
    }

    /// Reverse pass from a scalar `loss`; parameter gradients accumulate in
    /// `store` on top of whatever is already there.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        if !self.requires(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let buf = store.get_mut(*id).grad_buffer();
                    buf.iter_mut().zip(&g).for_each(|(b, &v)| *b += v);
                }
                Op::Embedding {
                    table,
                    indices,
                    width,
                } => {
                    let buf = store.get_mut(*table).grad_buffer();
                    scatter_rows(buf, &g, indices, *width);
                }
                Op::Gather {
                    table,
                    indices,
                    width,
                } => {
                    let w = *width;
                    self.accumulate(&mut grads, *table, |buf| scatter_rows(buf, &g, indices, w));
                }
                &Op::Matmul { a, b, m, k, n } => {
                    let bv = self.value(b);
                    self.accumulate(&mut grads, a, |buf| mm_nt(&g, bv, buf, m, n, k));
                    let av = self.value(a);
                    self.accumulate(&mut grads, b, |buf| mm_tn(av, &g, buf, k, m, n));
                }
                &Op::Bmm {
                    a,
                    b,
                    batch,
                    m,
                    k,
                    n,
                    transpose_b,
                } => {
                    let (av, bv) = (self.value(a), self.value(b));
                    self.accumulate(&mut grads, a, |buf| {
                        for bi in 0..batch {
                            let gb = &g[bi * m * n..(bi + 1) * m * n];
                            let bb = &bv[bi * k * n..(bi + 1) * k * n];
                            let out = &mut buf[bi * m * k..(bi + 1) * m * k];
                            if transpose_b {
                                // dA = dC · B with B [n×k]
                                mm_nn(gb, bb, out, m, n, k);
                            } else {
                                // dA = dC · Bᵀ with B [k×n]
                                mm_nt(gb, bb, out, m, n, k);
                            }
                        }
                    });
                    self.accumulate(&mut grads, b, |buf| {
                        for bi in 0..batch {
                            let gb = &g[bi * m * n..(bi + 1) * m * n];
                            let ab = &av[bi * m * k..(bi + 1) * m * k];
                            let out = &mut buf[bi * k * n..(bi + 1) * k * n];
                            if transpose_b {
                                // dB = dCᵀ · A, [n×k]
                                mm_tn(gb, ab, out, n, m, k);
                            } else {
                                // dB = Aᵀ · dC, [k×n]
                                mm_tn(ab, gb, out, k, m, n);
                            }
                        }
                    });
                }
                &Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, |buf| add_into(buf, &g));
                    self.accumulate(&mut grads, b, |buf| add_into(buf, &g));
                }
                &Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, |buf| add_into(buf, &g));
                    self.accumulate(&mut grads, b, |buf| {
                        buf.iter_mut().zip(&g).for_each(|(o, &v)| *o -= v)
                    });
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    self.accumulate(&mut grads, a, |buf| {
                        for ((o, &gv), &y) in buf.iter_mut().zip(&g).zip(bv) {
                            *o += gv * y;
                        }
                    });
                    self.accumulate(&mut grads, b, |buf| {
                        for ((o, &gv), &x) in buf.iter_mut().zip(&g).zip(av) {
                            *o += gv * x;
                        }
                    });
                }
                &Op::AddBias { x, bias } => {
                    self.accumulate(&mut grads, x, |buf| add_into(buf, &g));
                    let n = self.value(bias).len();
                    self.accumulate(&mut grads, bias, |buf| {
                        for row in g.chunks(n) {
                            add_into(buf, row);
                        }
                    });
                }
                &Op::Scale(x, f) => {
                    self.accumulate(&mut grads, x, |buf| {
                        buf.iter_mut().zip(&g).for_each(|(o, &v)| *o += v * f)
                    });
                }
                &Op::Relu(x) => {
                    let xv = self.value(x);
                    self.accumulate(&mut grads, x, |buf| {
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(xv) {
                            if v > T::zero() {
                                *o += gv;
                            }
                        }
                    });
                }
                &Op::Sigmoid(x) => {
                    let yv = &node.value;
                    self.accumulate(&mut grads, x, |buf| {
                        for ((o, &gv), &y) in buf.iter_mut().zip(&g).zip(yv) {
                            *o += gv * y * (T::one() - y);
                        }
                    });
                }
                &Op::Tanh(x) => {
                    let yv = &node.value;
                    self.accumulate(&mut grads, x, |buf| {
                        for ((o, &gv), &y) in buf.iter_mut().zip(&g).zip(yv) {
                            *o += gv * (T::one() - y * y);
                        }
                    });
                }
                &Op::Log(x) => {
                    let xv = self.value(x);
                    self.accumulate(&mut grads, x, |buf| {
                        for ((o, &gv), &v) in buf.iter_mut().zip(&g).zip(xv) {
                            *o += gv / v;
                        }
                    });
                }
                Op::Dropout { x, factors } => {
                    self.accumulate(&mut grads, *x, |buf| {
                        for ((o, &gv), &f) in buf.iter_mut().zip(&g).zip(factors) {
                            *o += gv * f;
                        }
                    });
                }
                Op::Concat {
                    inputs,
                    outer,
                    chunks,
                } => {
                    let out_chunk: usize = chunks.iter().sum();
                    let mut start = 0;
                    for (&v, &c) in inputs.iter().zip(chunks) {
                        self.accumulate(&mut grads, v, |buf| {
                            for o in 0..*outer {
                                let src = &g[o * out_chunk + start..o * out_chunk + start + c];
                                add_into(&mut buf[o * c..(o + 1) * c], src);
                            }
                        });
                        start += c;
                    }
                }
                &Op::Narrow {
                    x,
                    outer,
                    in_chunk,
                    offset,
                    out_chunk,
                } => {
                    self.accumulate(&mut grads, x, |buf| {
                        for o in 0..outer {
                            let dst = &mut buf[o * in_chunk + offset..o * in_chunk + offset + out_chunk];
                            add_into(dst, &g[o * out_chunk..(o + 1) * out_chunk]);
                        }
                    });
                }
                &Op::Reshape(x) => {
                    self.accumulate(&mut grads, x, |buf| add_into(buf, &g));
                }
                &Op::Sum(x) => {
                    let gv = g[0];
                    self.accumulate(&mut grads, x, |buf| buf.iter_mut().for_each(|o| *o += gv));
                }
                &Op::Mean(x) => {
                    let gv = g[0] / T::of(self.value(x).len().max(1) as f64);
                    self.accumulate(&mut grads, x, |buf| buf.iter_mut().for_each(|o| *o += gv));
                }
                &Op::SumLast { x, width } => {
                    self.accumulate(&mut grads, x, |buf| {
                        if width > 0 {
                            for (row, &gv) in buf.chunks_mut(width).zip(&g) {
                                row.iter_mut().for_each(|o| *o += gv);
                            }
                        }
                    });
                }
                &Op::MaskedSoftmax { x, width } => {
                    let yv = &node.value;
                    self.accumulate(&mut grads, x, |buf| {
                        for ((orow, grow), yrow) in buf
                            .chunks_mut(width)
                            .zip(g.chunks(width))
                            .zip(yv.chunks(width))
                        {
                            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for ((o, &gv), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                                *o += y * (gv - dot);
                            }
                        }
                    });
                }
                Op::WhereRows {
                    keep,
                    on_true,
                    on_false,
                    width,
                } => {
                    let w = *width;
                    let route = |buf: &mut Vec<T>, want: bool| {
                        for (r, &k) in keep.iter().enumerate() {
                            if k == want {
                                add_into(&mut buf[r * w..(r + 1) * w], &g[r * w..(r + 1) * w]);
                            }
                        }
                    };
                    self.accumulate(&mut grads, *on_true, |buf| route(buf, true));
                    self.accumulate(&mut grads, *on_false, |buf| route(buf, false));
                }
                Op::Bce { y, labels } => {
                    let yv = self.value(*y);
                    let n = T::of(labels.len() as f64);
                    let (lo, hi) = clamp_bounds::<T>();
                    let gv = g[0];
                    self.accumulate(&mut grads, *y, |buf| {
                        for ((o, &p), &l) in buf.iter_mut().zip(yv).zip(labels) {
                            if p > lo && p < hi {
                                *o += gv * (-l / p + (T::one() - l) / (T::one() - p)) / n;
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<T>>],
        target: Var,
        f: impl FnOnce(&mut Vec<T>),
    ) {
        if !self.requires(target) {
            return;
        }
        let n = self.value(target).len();
        let buf = grads[target.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }
}

fn clamp_bounds<T: Scalar>() -> (T, T) {
    (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP))
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        &[rows, width] => Ok((rows, width)),
        other => Err(TensorError::Shape {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn check_prefix(op: &'static str, count: usize, prefix: &[usize]) -> Result<()> {
    if numel(prefix) != count {
        return Err(TensorError::Shape {
            op,
            lhs: prefix.to_vec(),
            rhs: vec![count],
        });
    }
    Ok(())
}

fn gather_rows<T: Scalar>(table: &[T], rows: usize, width: usize, indices: &[usize]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(indices.len() * width);
    for &ix in indices {
        if ix >= rows {
            return Err(TensorError::Lookup { index: ix, rows });
        }
        out.extend_from_slice(&table[ix * width..(ix + 1) * width]);
    }
    Ok(out)
}

fn scatter_rows<T: Scalar>(buf: &mut [T], g: &[T], indices: &[usize], width: usize) {
    for (pos, &ix) in indices.iter().enumerate() {
        add_into(
            &mut buf[ix * width..(ix + 1) * width],
            &g[pos * width..(pos + 1) * width],
        );
    }
}
