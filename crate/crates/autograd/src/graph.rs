use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Gelu(Var),
    Rows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    LogSoftmax(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    SegmentMean { x: Var, weights: Matrix },
    SegmentMax { x: Var, argmax: Array2<usize> },
    Attention { q: Var, k: Var, v: Var, probs: Vec<Matrix>, heads: usize, seq_len: usize },
    LogMeanExp { x: Var, weights: Matrix },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated computation tape.
///
/// The lifetime ties borrowed parameter matrices to the graph: parameters may
/// not be mutated while a graph that references them is alive.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<usize, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

const NORM_FLOOR: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.get()
    }

    /// Value of a `1×1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Differentiable owned input (for example an input to probe gradients against).
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Differentiable borrowed parameter. Binding the same matrix twice
    /// returns the same node, so gradients from every use accumulate there.
    pub fn param(&mut self, m: &'a Matrix) -> Var {
        let key = m as *const Matrix as usize;
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node { value: Value::Borrowed(m), op: Op::Leaf, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    /// Node bound to `m` by [`Graph::param`], if any.
    pub fn param_var(&self, m: &Matrix) -> Option<Var> {
        self.params.get(&(m as *const Matrix as usize)).copied()
    }

    /// Cut the gradient path: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `a + row`, broadcasting a `1×n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(row);
        assert!(r == 1 && c == self.shape(a).1, "add_row: expected 1x{}", self.shape(a).1);
        let out = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Gather rows: `out[i] = a[idx[i]]`.
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let n = src.nrows();
        let mut out = Array2::zeros((idx.len(), src.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < n, "rows: index {j} out of range {n}");
            out.row_mut(i).assign(&src.row(j));
        }
        let rg = self.rg(a);
        self.push(out, Op::Rows(a, idx.to_vec()), rg)
    }

    /// Pick one column per row: `out[i, 0] = a[i, idx[i]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "pick: one index per row");
        let out = Array2::from_shape_fn((idx.len(), 1), |(i, _)| src[[i, idx[i]]]);
        let rg = self.rg(a);
        self.push(out, Op::Pick(a, idx.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Array2::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Row-wise log-softmax, max-shifted. Entries equal to `-inf` are allowed
    /// as long as every row keeps at least one finite entry.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Scale every row to unit L2 norm (norm floored at 1e-12).
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(NORM_FLOOR);
            row /= n;
            norms.push(n);
        }
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows { x: a, norms }, rg)
    }

    /// Row-wise layer normalization with learned `1×d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mu = row.sum() / d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mu) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    /// Weighted mean over fixed-length segments of rows.
    ///
    /// `x` is `(B·L)×d`, `mask` is `B×L`; output row `b` is the mask-weighted
    /// average of rows `b·L .. (b+1)·L`. Every mask row needs a positive sum.
    pub fn segment_mean(&mut self, x: Var, mask: &Matrix) -> Var {
        let (b, l) = mask.dim();
        let xv = self.value(x);
        assert_eq!(xv.nrows(), b * l, "segment_mean: rows must equal B*L");
        let mut weights = mask.clone();
        for mut row in weights.rows_mut() {
            let total = row.sum();
            assert!(total > 0.0, "segment_mean: empty segment");
            row /= total;
        }
        let mut out = Array2::zeros((b, xv.ncols()));
        for i in 0..b {
            let mut acc = out.row_mut(i);
            for j in 0..l {
                let w = weights[[i, j]];
                if w != 0.0 {
                    acc.scaled_add(w, &xv.row(i * l + j));
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SegmentMean { x, weights }, rg)
    }

    /// Column-wise max over fixed-length segments of `seg_len` rows.
    pub fn segment_max(&mut self, x: Var, seg_len: usize) -> Var {
        let xv = self.value(x);
        assert!(seg_len > 0 && xv.nrows() % seg_len == 0, "segment_max: ragged segments");
        let b = xv.nrows() / seg_len;
        let f = xv.ncols();
        let mut out = Array2::zeros((b, f));
        let mut argmax = Array2::zeros((b, f));
        for i in 0..b {
            for c in 0..f {
                let mut best = i * seg_len;
                for r in i * seg_len + 1..(i + 1) * seg_len {
                    if xv[[r, c]] > xv[[best, c]] {
                        best = r;
                    }
                }
                out[[i, c]] = xv[[best, c]];
                argmax[[i, c]] = best;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SegmentMax { x, argmax }, rg)
    }

    /// Multi-head scaled dot-product self-attention over `B` sequences of
    /// `seq_len` rows each. `key_mask` has one entry per row of `q`; keys with
    /// a zero entry receive no attention. Each sequence needs one live key.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[f64],
        heads: usize,
        seq_len: usize,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, dim) = qv.dim();
        assert_eq!(kv.dim(), (rows, dim));
        assert_eq!(vv.dim(), (rows, dim));
        assert_eq!(key_mask.len(), rows);
        assert!(dim % heads == 0 && rows % seq_len == 0);
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = rows / seq_len;
        let mut out = Array2::zeros((rows, dim));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r = b * seq_len..(b + 1) * seq_len;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![r.clone(), c.clone()]);
                let ks = kv.slice(s![r.clone(), c.clone()]);
                let vs = vv.slice(s![r.clone(), c.clone()]);
                let mut p = qs.dot(&ks.t()) * scale;
                for mut row in p.rows_mut() {
                    for (j, x) in row.iter_mut().enumerate() {
                        if key_mask[b * seq_len + j] == 0.0 {
                            *x = f64::NEG_INFINITY;
                        }
                    }
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let z = row.sum();
                    row /= z;
                }
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(out, Op::Attention { q, k, v, probs, heads, seq_len }, rg)
    }

    /// `log(mean(exp(x)))` over all entries, max-shifted.
    ///
    /// With `log_denominator = None` the gradient is exact. With
    /// `Some(log_d)` the gradient replaces the batch mean in the denominator
    /// by `exp(log_d)`: `d/dx_i = exp(x_i - log_d) / n`. This is the
    /// moving-average bias correction used by neural MI estimators.
    pub fn log_mean_exp(&mut self, x: Var, log_denominator: Option<f64>) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let max = xv.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = xv.iter().map(|&v| (v - max).exp()).sum();
        let lme = max + sum.ln() - n.ln();
        let log_d = log_denominator.unwrap_or(lme);
        let weights = xv.mapv(|v| (v - log_d).exp() / n);
        let out = Array2::from_elem((1, 1), lme);
        let rg = self.rg(x);
        self.push(out, Op::LogMeanExp { x, weights }, rg)
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward: output must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(&node.op, i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce() -> Matrix) {
        if self.rg(v) {
            let g = f();
            self.acc(grads, v, g);
        }
    }

    fn propagate(&self, op: &Op, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = self.nodes[idx].value.get();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_with(grads, a, || g.dot(&self.value(b).t()));
                self.acc_with(grads, b, || self.value(a).t().dot(g));
            }
            Op::Transpose(a) => self.acc_with(grads, *a, || g.t().to_owned()),
            Op::Add(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || -g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_with(grads, a, || g * self.value(b));
                self.acc_with(grads, b, || g * self.value(a));
            }
            Op::AddRow(a, row) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *row, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddScalar(a) => self.acc_with(grads, *a, || g.clone()),
            Op::Scale(a, c) => self.acc_with(grads, *a, || g * *c),
            Op::Relu(a) => {
                let a = *a;
                self.acc_with(grads, a, || {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    d
                });
            }
            Op::Tanh(a) => self.acc_with(grads, *a, || {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                d
            }),
            Op::Gelu(a) => {
                let a = *a;
                self.acc_with(grads, a, || {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(a)).for_each(|d, &x| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    });
                    d
                });
            }
            Op::Rows(a, idx) => {
                let a = *a;
                self.acc_with(grads, a, || {
                    let mut d = Array2::zeros(self.shape(a));
                    for (i, &j) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(j);
                        dst += &g.row(i);
                    }
                    d
                });
            }
            Op::Pick(a, idx) => {
                let a = *a;
                self.acc_with(grads, a, || {
                    let mut d = Array2::zeros(self.shape(a));
                    for (i, &j) in idx.iter().enumerate() {
                        d[[i, j]] += g[[i, 0]];
                    }
                    d
                });
            }
            Op::Sum(a) => {
                let a = *a;
                self.acc_with(grads, a, || Array2::from_elem(self.shape(a), g[[0, 0]]));
            }
            Op::Mean(a) => {
                let a = *a;
                self.acc_with(grads, a, || {
                    let (r, c) = self.shape(a);
                    Array2::from_elem((r, c), g[[0, 0]] / (r * c) as f64)
                });
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.acc_with(grads, p, || g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::LogSoftmax(a) => self.acc_with(grads, *a, || {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let gs = drow.sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y.exp() * gs);
                }
                d
            }),
            Op::NormalizeRows { x, norms } => self.acc_with(grads, *x, || {
                let mut d = g.clone();
                for ((mut drow, yrow), &n) in d.rows_mut().into_iter().zip(out.rows()).zip(norms) {
                    let proj = drow.dot(&yrow);
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d = (*d - y * proj) / n);
                }
                d
            }),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gamma_v = self.value(*gamma);
                self.acc_with(grads, *gamma, || (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                self.acc_with(grads, *beta, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                self.acc_with(grads, *x, || {
                    let d = xhat.ncols() as f64;
                    let mut dx = g * gamma_v;
                    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let s1 = row.sum();
                        let s2 = row.dot(&xh);
                        Zip::from(&mut row)
                            .and(&xh)
                            .for_each(|v, &xh| *v = is / d * (d * *v - s1 - xh * s2));
                    }
                    dx
                });
            }
            Op::SegmentMean { x, weights } => {
                let x = *x;
                self.acc_with(grads, x, || {
                    let (b, l) = weights.dim();
                    let mut d = Array2::zeros(self.shape(x));
                    for i in 0..b {
                        for j in 0..l {
                            let w = weights[[i, j]];
                            if w != 0.0 {
                                d.row_mut(i * l + j).scaled_add(w, &g.row(i));
                            }
                        }
                    }
                    d
                });
            }
            Op::SegmentMax { x, argmax } => {
                let x = *x;
                self.acc_with(grads, x, || {
                    let mut d = Array2::zeros(self.shape(x));
                    for ((i, c), &r) in argmax.indexed_iter() {
                        d[[r, c]] += g[[i, c]];
                    }
                    d
                });
            }
            Op::Attention { q, k, v, probs, heads, seq_len } => {
                let (q, k, v) = (*q, *k, *v);
                let (rows, dim) = self.shape(q);
                let dh = dim / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros((rows, dim));
                let mut dk = Array2::zeros((rows, dim));
                let mut dv = Array2::zeros((rows, dim));
                let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
                for b in 0..rows / seq_len {
                    let r = b * seq_len..(b + 1) * seq_len;
                    for h in 0..*heads {
                        let c = h * dh..(h + 1) * dh;
                        let p = &probs[b * heads + h];
                        let go = g.slice(s![r.clone(), c.clone()]);
                        dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(s![r.clone(), c.clone()]).t());
                        let mut ds = &dp * p;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let s = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|d, &p| *d -= p * s);
                        }
                        ds *= scale;
                        dq.slice_mut(s![r.clone(), c.clone()])
                            .assign(&ds.dot(&kv.slice(s![r.clone(), c.clone()])));
                        dk.slice_mut(s![r.clone(), c.clone()])
                            .assign(&ds.t().dot(&qv.slice(s![r.clone(), c.clone()])));
                    }
                }
                self.acc(grads, q, dq);
                self.acc(grads, k, dk);
                self.acc(grads, v, dv);
            }
            Op::LogMeanExp { x, weights } => self.acc_with(grads, *x, || weights * g[[0, 0]]),
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `v`; `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. a parameter bound with [`Graph::param`]; zeros if the
    /// parameter was bound but unused, `None` if never bound.
    pub fn wrt(&self, graph: &Graph<'_>, param: &Matrix) -> Option<Matrix> {
        let v = graph.param_var(param)?;
        Some(self.get(v).cloned().unwrap_or_else(|| Array2::zeros(param.dim())))
    }
}
