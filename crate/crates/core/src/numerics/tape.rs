//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as it is evaluated. Parameters live in
//! a [`ParamStore`] that the tape borrows, so recording a forward pass never
//! copies weights. [`Tape::backward`] walks the records in reverse and returns
//! [`Gradients`] for every parameter and every recorded value.

use std::collections::HashMap;

use super::matrix::{gemm_acc, log_sum_exp, softmax_in_place, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics if the name is already taken.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ShiftRows {
        x: Var,
        offset: isize,
    },
    MeanRows(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are still reported for it.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(Matrix::zeros(0, 0), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        let mut out = self.value(a).clone();
        assert_eq!(r.shape(), (1, out.cols()), "add_row expects a 1x{} row", out.cols());
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Matrix::from_raw(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).scale(alpha);
        self.push(out, Op::Scale(a, alpha))
    }

    /// Weighted sum of scalars (or same-shaped values).
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty(), "empty weighted sum");
        let mut acc = self.scale(terms[0].1, terms[0].0);
        for &(w, v) in &terms[1..] {
            let scaled = self.scale(v, w);
            acc = self.add(acc, scaled);
        }
        acc
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
            0.5 * x * (1.0 + t)
        });
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned gain and bias (both 1×c).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let xh = (row[c] - mean) * is;
                xhat.set(r, c, xh);
                out.set(r, c, g[c] * xh + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = super::matrix::softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise softmax where row `i` may only attend to columns `<= i + (cols - rows)`.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let (rows, cols) = out.shape();
        assert!(cols >= rows, "causal softmax needs cols >= rows");
        let shift = cols - rows;
        for r in 0..rows {
            let visible = r + shift + 1;
            let row = out.row_mut(r);
            softmax_in_place(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|v| *v = 0.0);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Mean token cross-entropy; returns a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "cross entropy length mismatch");
        assert!(!targets.is_empty(), "cross entropy over empty target");
        let mut probs = l.clone();
        let mut total = 0.0;
        for (t, &target) in targets.iter().enumerate() {
            assert!(target < l.cols(), "target {target} out of vocabulary");
            total += log_sum_exp(l.row(t)) - l.get(t, target);
            softmax_in_place(probs.row_mut(t));
        }
        let loss = Matrix::scalar((total / targets.len() as f64).max(0.0));
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let out = Matrix::from_raw(ids.len(), t.cols(), data);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.push(Matrix::from_raw(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        assert!(start + len <= m.rows(), "slice_rows out of range");
        let data = m.data()[start * m.cols()..(start + len) * m.cols()].to_vec();
        let out = Matrix::from_raw(len, m.cols(), data);
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        assert!(start + len <= m.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(m.rows() * len);
        for r in 0..m.rows() {
            data.extend_from_slice(&m.row(r)[start..start + len]);
        }
        let out = Matrix::from_raw(m.rows(), len, data);
        self.push(out, Op::SliceCols { x, start })
    }

    /// `out[i] = x[i + offset]`, zero where `i + offset` falls outside.
    pub fn shift_rows(&mut self, x: Var, offset: isize) -> Var {
        let m = self.value(x);
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let src = i as isize + offset;
            if src >= 0 && (src as usize) < m.rows() {
                out.row_mut(i).copy_from_slice(m.row(src as usize));
            }
        }
        self.push(out, Op::ShiftRows { x, offset })
    }

    /// 1×c mean of the rows.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let out = Matrix::row_vector(self.value(x).mean_rows());
        self.push(out, Op::MeanRows(x))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    gemm_acc(&g, false, vb, true, slot(&mut grads, *a, va));
                    gemm_acc(va, true, &g, false, slot(&mut grads, *b, vb));
                }
                Op::MatMulT(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    let (va, vb) = (self.value(*a), self.value(*b));
                    gemm_acc(&g, false, vb, false, slot(&mut grads, *a, va));
                    gemm_acc(&g, true, va, false, slot(&mut grads, *b, vb));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *row, &dr);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, vb, |x, y| x * y);
                    let db = zip_map(&g, va, |x, y| x * y);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Scale(a, alpha) => {
                    let d = g.scale(*alpha);
                    accumulate(&mut grads, *a, &d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = zip_map(&g, x, |gv, x| {
                        let inner = GELU_C * (x + 0.044715 * x * x * x);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
                    });
                    accumulate(&mut grads, *a, &d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).data();
                    let (rows, cols) = g.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    let n = cols as f64;
                    for (r, &istd) in inv_std.iter().enumerate().take(rows) {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            sum_d += d;
                            sum_dx += d * xr[c];
                            dgain.data_mut()[c] += gr[c] * xr[c];
                            dbias.data_mut()[c] += gr[c];
                        }
                        let scale = istd / n;
                        let out = dx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            out[c] = scale * (n * d - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gain, &dgain);
                    accumulate(&mut grads, *bias, &dbias);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (o, (p, q)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = p * (q - inner);
                        }
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut d = probs.scale(scale);
                    for (t, &target) in targets.iter().enumerate() {
                        let v = d.get(t, target);
                        d.set(t, target, v - scale);
                    }
                    accumulate(&mut grads, *logits, &d);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let dst = slot(&mut grads, *table, tv);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in dst.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.rows();
                        let dst = slot(&mut grads, p, pv);
                        for r in 0..n {
                            for (o, v) in dst.row_mut(r).iter_mut().zip(g.row(offset + r)) {
                                *o += v;
                            }
                        }
                        offset += n;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let dst = slot(&mut grads, *x, xv);
                    for r in 0..g.rows() {
                        for (o, v) in dst.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.cols();
                        let dst = slot(&mut grads, p, pv);
                        for r in 0..g.rows() {
                            for (o, v) in dst.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + n]) {
                                *o += v;
                            }
                        }
                        offset += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let n = g.cols();
                    let dst = slot(&mut grads, *x, xv);
                    for r in 0..g.rows() {
                        for (o, v) in dst.row_mut(r)[*start..start + n].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ShiftRows { x, offset } => {
                    let xv = self.value(*x);
                    let rows = xv.rows();
                    let dst = slot(&mut grads, *x, xv);
                    for i in 0..rows {
                        let src = i as isize + offset;
                        if src >= 0 && (src as usize) < rows {
                            for (o, v) in dst.row_mut(src as usize).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let n = xv.rows() as f64;
                    let dst = slot(&mut grads, *x, xv);
                    for r in 0..dst.rows() {
                        for (o, v) in dst.row_mut(r).iter_mut().zip(g.data()) {
                            *o += v / n;
                        }
                    }
                }
            }
        }

        let mut params: Vec<Option<Matrix>> = (0..self.params.len()).map(|_| None).collect();
        for (pid, var) in self.param_nodes.iter().enumerate() {
            if let Some(v) = var {
                params[pid] = grads[v.0].clone();
            }
        }
        Gradients { params, vars: grads }
    }
}

fn slot<'g>(grads: &'g mut [Option<Matrix>], v: Var, like: &Matrix) -> &'g mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: &Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(d),
        empty => *empty = Some(d.clone()),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

/// Result of a reverse pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    vars: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Zero gradients for every parameter of `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            params: store
                .values
                .iter()
                .map(|m| Some(Matrix::zeros(m.rows(), m.cols())))
                .collect(),
            vars: Vec::new(),
        }
    }

    /// Gradient of a parameter; `None` when it did not take part in the loss.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to any recorded value.
    pub fn var(&self, v: Var) -> Option<&Matrix> {
        self.vars.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradient, zero-filled if the parameter was unused.
    pub fn param_or_zero(&self, store: &ParamStore, id: ParamId) -> Matrix {
        self.param(id).cloned().unwrap_or_else(|| {
            let m = store.get(id);
            Matrix::zeros(m.rows(), m.cols())
        })
    }

    /// Adds `other`'s parameter gradients into `self`; node gradients are dropped.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
        self.vars.clear();
    }

    pub fn scale(&mut self, alpha: f64) {
        for m in self.params.iter_mut().flatten() {
            for v in m.data_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(|m| m.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}
