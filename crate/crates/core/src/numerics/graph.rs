//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! tape is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep. Parameters are read in place from a borrowed [`ParamStore`];
//! each parameter gets one leaf node per graph, so its gradient accumulates
//! across all of its uses.

use std::collections::HashMap;
use std::sync::Arc;

use crate::numerics::{ParamId, ParamStore, Real, Tensor};

/// Fill value for disallowed attention logits.
pub const MASK_FILL: f64 = -1e9;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, bt: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, S),
    MulScalar { a: Var, s: Var },
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    RmsNorm { x: Var, gamma: Var, eps: S },
    Softmax { a: Var },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    RowNormalize(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, count: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
}

pub struct Graph<'p, S: Real = f32> {
    store: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("expected a matrix, got shape {shape:?}"),
    }
}

fn gelu_parts<S: Real>(x: S) -> (S, S) {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = S::lit(0.044715);
    let half = S::lit(0.5);
    let one = S::one();
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + S::lit(3.0) * k * x * x);
    (y, dy)
}

impl<'p, S: Real> Graph<'p, S> {
    pub fn new(store: &'p ParamStore<S>) -> Self {
        Self { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'p ParamStore<S> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[S] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn rows(&self, v: Var) -> usize {
        dims2(self.shape(v)).0
    }

    pub fn cols(&self, v: Var) -> usize {
        dims2(self.shape(v)).1
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> S {
        assert_eq!(self.value(v).len(), 1, "not a scalar node");
        self.value(v)[0]
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    /// Constant from an `f32` tensor, converted to the graph's element type.
    pub fn input(&mut self, t: &Tensor<f32>) -> Var {
        let data = t.data().iter().map(|&x| S::lit(x as f64)).collect();
        self.push(t.shape().to_vec(), data, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape.to_vec()))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let shape = self.store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra -----------------------------------------------

    /// `a @ b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a @ bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, bt: bool) -> Var {
        let (m, k) = dims2(self.shape(a));
        let (r, c) = dims2(self.shape(b));
        let n = if bt {
            assert_eq!(c, k, "matmul_bt: inner dims {k} vs {c}");
            r
        } else {
            assert_eq!(r, k, "matmul: inner dims {k} vs {r}");
            c
        };
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), self.value(a), false, self.value(b), bt, S::zero(), &mut out);
        self.push(vec![m, n], out, Op::MatMul { a, b, bt })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.shape(a));
        let x = self.value(a);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        self.push(vec![n, m], out, Op::Transpose(a))
    }

    // ---- elementwise --------------------------------------------------

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector (any shape with `cols(a)` elements) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = dims2(self.shape(a));
        assert_eq!(self.value(row).len(), n, "add_row: bias length");
        let x = self.value(a);
        let r = self.value(row);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(x[i * n..(i + 1) * n].iter().zip(r).map(|(&p, &q)| p + q));
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    /// Multiplies every element of `a` by the single-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        self.map(a, |x| x * c, Op::MulScalar { a, s })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, |x| gelu_parts(x).0, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    // ---- normalisation and softmax ------------------------------------

    /// Row-wise RMS normalisation with a learned per-column gain.
    pub fn rms_norm(&mut self, x: Var, gamma: Var, eps: f64) -> Var {
        let (m, n) = dims2(self.shape(x));
        assert_eq!(self.value(gamma).len(), n, "rms_norm: gain length");
        let eps = S::lit(eps);
        let xv = self.value(x);
        let gv = self.value(gamma);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let ms = row.iter().map(|&v| v * v).sum::<S>() / S::lit(n as f64);
            let inv = S::one() / (ms + eps).sqrt();
            out.extend(row.iter().zip(gv).map(|(&v, &g)| v * inv * g));
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::RmsNorm { x, gamma, eps })
    }

    /// Row-wise softmax; entries where `mask` is false are replaced by
    /// [`MASK_FILL`] before normalisation.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Arc<[bool]>>) -> Var {
        let (m, n) = dims2(self.shape(a));
        if let Some(mask) = &mask {
            assert_eq!(mask.len(), m * n, "softmax mask size");
        }
        let x = self.value(a);
        let fill = S::lit(MASK_FILL);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let allowed = mask.as_ref().is_none_or(|mk| mk[i * n + j]);
                row[j] = if allowed { x[i * n + j] } else { fill };
            }
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Softmax { a })
    }

    /// Divides each row by its L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.shape(a));
        let x = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let norm = (row.iter().map(|&v| v * v).sum::<S>() + S::lit(1e-12)).sqrt();
            out.extend(row.iter().map(|&v| v / norm));
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::RowNormalize(a))
    }

    // ---- indexing and layout ------------------------------------------

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, n) = dims2(self.shape(table));
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            assert!(id < rows, "gather index {id} out of range {rows}");
            out.extend_from_slice(&t[id * n..(id + 1) * n]);
        }
        self.push(vec![ids.len(), n], out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let n = self.cols(parts[0]);
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = dims2(self.shape(p));
            assert_eq!(c, n, "concat_rows: column mismatch");
            out.extend_from_slice(self.value(p));
            m += r;
        }
        self.push(vec![m, n], out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = self.rows(parts[0]);
        let widths: Vec<usize> = parts.iter().map(|&p| self.cols(p)).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                assert_eq!(self.rows(p), m, "concat_cols: row mismatch");
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        self.push(vec![m, n], out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = dims2(self.shape(a));
        assert!(start + len <= m, "slice_rows {start}+{len} > {m}");
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        self.push(vec![len, n], out, Op::SliceRows { a, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = dims2(self.shape(a));
        assert!(start + len <= n, "slice_cols {start}+{len} > {n}");
        let x = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        self.push(vec![m, len], out, Op::SliceCols { a, start })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.value(a).len(), "reshape size");
        let out = self.value(a).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(a))
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.iter().copied().sum::<S>() / S::lit(x.len() as f64);
        self.push(vec![1], vec![s], Op::Mean(a))
    }

    /// Mean negative log-likelihood over rows whose target is `Some`.
    /// Returns zero when no row contributes.
    pub(crate) fn cross_entropy_raw(&mut self, logits: Var, targets: Vec<Option<usize>>) -> (Var, usize) {
        let (m, n) = dims2(self.shape(logits));
        assert_eq!(targets.len(), m, "cross_entropy: one target per row");
        let x = self.value(logits);
        let mut total = S::zero();
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &x[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
                total = total + lse - row[t];
                count += 1;
            }
        }
        let loss = if count == 0 { S::zero() } else { total / S::lit(count as f64) };
        let v = self.push(vec![1], vec![loss], Op::CrossEntropy { logits, targets, count });
        (v, count)
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from a single-element node.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Gradients { grads, params }
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let len = |v: Var| self.value(v).len();
        // Returns the (zero-initialised on first touch) gradient buffer of `v`.
        fn buf<'a, S: Real>(grads: &'a mut [Option<Vec<S>>], v: Var, n: usize) -> &'a mut Vec<S> {
            grads[v.0].get_or_insert_with(|| vec![S::zero(); n])
        }

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, bt } => {
                let (m, k) = dims2(self.shape(*a));
                let n = dims2(&node.shape).1;
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = buf(grads, *a, m * k);
                // da = g · op(b)ᵀ
                S::gemm(m, n, k, S::one(), g, false, bv, !*bt, S::one(), da);
                let db = buf(grads, *b, k * n);
                if *bt {
                    // b is [n, k]: db = gᵀ · a
                    S::gemm(n, m, k, S::one(), g, true, av, false, S::one(), db);
                } else {
                    // db = aᵀ · g
                    S::gemm(k, m, n, S::one(), av, true, g, false, S::one(), db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims2(self.shape(*a));
                let da = buf(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] = da[r * n + c] + g[c * m + r];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let d = buf(grads, *v, g.len());
                    d.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
                }
            }
            Op::Sub(a, b) => {
                let da = buf(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
                let db = buf(grads, *b, g.len());
                db.iter_mut().zip(g).for_each(|(d, &x)| *d = *d - x);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).to_vec();
                let bv = self.value(*b);
                let da = buf(grads, *a, g.len());
                da.iter_mut().zip(g.iter().zip(bv)).for_each(|(d, (&x, &y))| *d = *d + x * y);
                let db = buf(grads, *b, g.len());
                db.iter_mut().zip(g.iter().zip(&av)).for_each(|(d, (&x, &y))| *d = *d + x * y);
            }
            Op::AddRow { a, row } => {
                let (m, n) = dims2(&node.shape);
                let da = buf(grads, *a, m * n);
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
                let dr = buf(grads, *row, n);
                for r in 0..m {
                    for c in 0..n {
                        dr[c] = dr[c] + g[r * n + c];
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = buf(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x * *c);
            }
            Op::MulScalar { a, s } => {
                let c = self.scalar(*s);
                let av = self.value(*a);
                let ds: S = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                let da = buf(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x * c);
                let dsb = buf(grads, *s, 1);
                dsb[0] = dsb[0] + ds;
            }
            Op::Gelu(a) => {
                let av = self.value(*a).to_vec();
                let da = buf(grads, *a, g.len());
                for ((d, &x), &gi) in da.iter_mut().zip(&av).zip(g) {
                    *d = *d + gi * gelu_parts(x).1;
                }
            }
            Op::Tanh(a) => {
                let da = buf(grads, *a, g.len());
                for ((d, &y), &gi) in da.iter_mut().zip(out).zip(g) {
                    *d = *d + gi * (S::one() - y * y);
                }
            }
            Op::Exp(a) => {
                let da = buf(grads, *a, g.len());
                for ((d, &y), &gi) in da.iter_mut().zip(out).zip(g) {
                    *d = *d + gi * y;
                }
            }
            Op::RmsNorm { x, gamma, eps } => {
                let (m, n) = dims2(&node.shape);
                let xv = self.value(*x).to_vec();
                let gv = self.value(*gamma).to_vec();
                let nf = S::lit(n as f64);
                let mut dx = vec![S::zero(); m * n];
                let mut dgamma = vec![S::zero(); n];
                for r in 0..m {
                    let row = &xv[r * n..(r + 1) * n];
                    let ms = row.iter().map(|&v| v * v).sum::<S>() / nf;
                    let inv = S::one() / (ms + *eps).sqrt();
                    let gr = &g[r * n..(r + 1) * n];
                    let mut dot = S::zero();
                    for c in 0..n {
                        let xhat = row[c] * inv;
                        dgamma[c] = dgamma[c] + gr[c] * xhat;
                        dot = dot + gr[c] * gv[c] * xhat;
                    }
                    let mean_dot = dot / nf;
                    for c in 0..n {
                        let xhat = row[c] * inv;
                        dx[r * n + c] = (gr[c] * gv[c] - xhat * mean_dot) * inv;
                    }
                }
                let d = buf(grads, *x, m * n);
                d.iter_mut().zip(&dx).for_each(|(d, &v)| *d = *d + v);
                let d = buf(grads, *gamma, n);
                d.iter_mut().zip(&dgamma).for_each(|(d, &v)| *d = *d + v);
            }
            Op::Softmax { a } => {
                let (m, n) = dims2(&node.shape);
                let da = buf(grads, *a, m * n);
                for r in 0..m {
                    let y = &out[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: S = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        da[r * n + c] = da[r * n + c] + y[c] * (gr[c] - dot);
                    }
                }
            }
            Op::RowNormalize(a) => {
                let (m, n) = dims2(&node.shape);
                let xv = self.value(*a).to_vec();
                let da = buf(grads, *a, m * n);
                for r in 0..m {
                    let x = &xv[r * n..(r + 1) * n];
                    let norm = (x.iter().map(|&v| v * v).sum::<S>() + S::lit(1e-12)).sqrt();
                    let y = &out[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: S = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        da[r * n + c] = da[r * n + c] + (gr[c] - y[c] * dot) / norm;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let n = dims2(&node.shape).1;
                let rows = dims2(self.shape(*table)).0;
                let dt = buf(grads, *table, rows * n);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..n {
                        dt[id * n + c] = dt[id * n + c] + g[r * n + c];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let l = len(*p);
                    let d = buf(grads, *p, l);
                    d.iter_mut().zip(&g[off..off + l]).for_each(|(d, &x)| *d = *d + x);
                    off += l;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = dims2(&node.shape);
                let mut col = 0;
                for p in parts {
                    let w = self.cols(*p);
                    let d = buf(grads, *p, m * w);
                    for r in 0..m {
                        for c in 0..w {
                            d[r * w + c] = d[r * w + c] + g[r * n + col + c];
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows { a, start } => {
                let (m, n) = dims2(self.shape(*a));
                let da = buf(grads, *a, m * n);
                let dst = &mut da[start * n..start * n + g.len()];
                dst.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }
            Op::SliceCols { a, start } => {
                let (m, n) = dims2(self.shape(*a));
                let w = dims2(&node.shape).1;
                let da = buf(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..w {
                        da[r * n + start + c] = da[r * n + start + c] + g[r * w + c];
                    }
                }
            }
            Op::CrossEntropy { logits, targets, count } => {
                if *count == 0 {
                    return;
                }
                let (m, n) = dims2(self.shape(*logits));
                let x = self.value(*logits).to_vec();
                let scale = g[0] / S::lit(*count as f64);
                let dl = buf(grads, *logits, m * n);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = &x[r * n..(r + 1) * n];
                    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                    let z: S = row.iter().map(|&v| (v - max).exp()).sum();
                    for c in 0..n {
                        let p = (row[c] - max).exp() / z;
                        let y = if c == t { S::one() } else { S::zero() };
                        dl[r * n + c] = dl[r * n + c] + (p - y) * scale;
                    }
                }
            }
            Op::Sum(a) => {
                let da = buf(grads, *a, len(*a));
                da.iter_mut().for_each(|d| *d = *d + g[0]);
            }
            Op::Mean(a) => {
                let l = len(*a);
                let share = g[0] / S::lit(l as f64);
                let da = buf(grads, *a, l);
                da.iter_mut().for_each(|d| *d = *d + share);
            }
            Op::Reshape(a) => {
                let da = buf(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Real> Gradients<S> {
    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[S]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<S>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }
}
