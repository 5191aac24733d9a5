//! Reverse-mode differentiation over a linear tape of fused primitives.
//!
//! Every primitive records its output value and whatever it needs for the
//! backward pass. Nodes are appended in evaluation order, so walking the tape
//! backwards visits each node once, after all of its consumers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{log_sum_exp, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid, softmax_in_place};
use super::{NumericsError, ParamId, ParameterStore, Tensor};

/// Reference to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

/// Which key positions each query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMask {
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Row-major `query_len × key_len`, `true` = may attend.
    Matrix(Vec<bool>),
}

impl AttentionMask {
    fn allows(&self, i: usize, j: usize, tk: usize) -> bool {
        match self {
            AttentionMask::Causal => j <= i,
            AttentionMask::Matrix(m) => m[i * tk + j],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddRowsAt { base: Var, rows: Var, at: Vec<usize> },
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    MeanRows(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, count: usize },
    Bce { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
    non_finite: Option<&'static str>,
}

fn shape_err(msg: alloc::string::String) -> NumericsError {
    NumericsError::Shape(msg)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool, name: &'static str) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        if self.non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { rows, cols, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Value of `v`, row-major.
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// `(rows, cols)` of `v`.
    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node dims are consistent")
    }

    /// Attention weights `[heads × query_len × key_len]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&[f64], usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, heads, .. } => Some((probs, *heads)),
            _ => None,
        }
    }

    /// Leaf that does not take part in differentiation.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false, "constant")
    }

    /// Leaf whose gradient is retained by `backward`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, true, "input")
    }

    /// Records a parameter once per tape; repeated calls return the same node.
    /// Frozen parameters are recorded as constants.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let t = &p.value;
        let v = self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Param, !p.frozen, "param");
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err(format!("matmul {}x{} by {}x{}", m, k, k2, n)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng, "matmul"))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err(format!("matmul_nt {}x{} by ({}x{})ᵀ", m, k, n, k2)));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMulNt(a, b), ng, "matmul_nt"))
    }

    /// `x · w + b` with `w: [in × out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(x);
        let (k2, n) = self.dims(w);
        if k != k2 {
            return Err(shape_err(format!("linear input width {} vs weight {}x{}", k, k2, n)));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n {
                return Err(shape_err(format!("bias length {} vs {}", bv.len(), n)));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        matmul_acc(self.value(x), self.value(w), &mut out, m, k, n);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(m, n, out, Op::Linear { x, w, b }, ng, "linear"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(format!("add {:?} and {:?}", self.dims(a), self.dims(b))));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng, "add"))
    }

    /// Adds row `i` of `rows` onto row `at[i]` of `base`.
    pub fn add_rows_at(&mut self, base: Var, rows: Var, at: &[usize]) -> Result<Var, NumericsError> {
        let (m, d) = self.dims(base);
        let (r, d2) = self.dims(rows);
        if d != d2 || r != at.len() || at.iter().any(|&p| p >= m) {
            return Err(shape_err(format!("add_rows_at base {}x{} rows {}x{} at {:?}", m, d, r, d2, at)));
        }
        let mut out = self.value(base).to_vec();
        let rv = self.value(rows);
        for (i, &p) in at.iter().enumerate() {
            for c in 0..d {
                out[p * d + c] += rv[i * d + c];
            }
        }
        let ng = self.ng(base) || self.ng(rows);
        Ok(self.push(m, d, out, Op::AddRowsAt { base, rows, at: at.to_vec() }, ng, "add_rows_at"))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Scale(a, s), ng, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Relu(a), ng, "relu")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Gelu(a), ng, "gelu")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(c, r, out, Op::Transpose(a), ng, "transpose")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::SoftmaxRows(a), ng, "softmax")
    }

    /// Per-row standardization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (m, d) = self.dims(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err(format!("layer_norm width {} vs gain/bias", d)));
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[i] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[i * d + c] = h;
                out[i * d + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(m, d, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng, "layer_norm"))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: v });
        }
        if ids.is_empty() {
            return Err(shape_err("gather with no ids".into()));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let ng = self.ng(table);
        Ok(self.push(ids.len(), d, out, Op::Gather { table, ids: ids.to_vec() }, ng, "gather"))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, d) = self.dims(x);
        if len == 0 || start + len > m {
            return Err(shape_err(format!("slice rows {}..{} of {}", start, start + len, m)));
        }
        let out = self.value(x)[start * d..(start + len) * d].to_vec();
        let ng = self.ng(x);
        Ok(self.push(len, d, out, Op::SliceRows { x, start }, ng, "slice_rows"))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, d) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![0.0; d];
        for i in 0..m {
            for c in 0..d {
                out[c] += v[i * d + c];
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let ng = self.ng(x);
        self.push(1, d, out, Op::MeanRows(x), ng, "mean_rows")
    }

    /// Scaled dot-product attention over already projected `q`, `k`, `v`,
    /// split into `heads` contiguous column groups and concatenated back.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Option<&AttentionMask>,
    ) -> Result<Var, NumericsError> {
        let (tq, d) = self.dims(q);
        let (tk, dk) = self.dims(k);
        let (tv, dv) = self.dims(v);
        if heads == 0 || d % heads != 0 || dk != d || dv != d || tv != tk {
            return Err(shape_err(format!(
                "attention q {}x{} k {}x{} v {}x{} heads {}",
                tq, d, tk, dk, tv, dv, heads
            )));
        }
        if let Some(AttentionMask::Matrix(m)) = mask {
            if m.len() != tq * tk {
                return Err(shape_err(format!("mask has {} entries, expected {}x{}", m.len(), tq, tk)));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        let mut allowed = vec![true; tk];
        for i in 0..tq {
            for (j, a) in allowed.iter_mut().enumerate() {
                *a = mask.map_or(true, |m| m.allows(i, j, tk));
            }
            if !allowed.iter().any(|&a| a) {
                return Err(NumericsError::FullyMaskedRow(i));
            }
            for h in 0..heads {
                let off = h * dh;
                let row = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let qi = &qv[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..tk {
                    if allowed[j] {
                        let kj = &kv[j * d + off..j * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                }
                let mut sum = 0.0;
                for j in 0..tk {
                    if allowed[j] {
                        row[j] = libm::exp(row[j] - max);
                        sum += row[j];
                    } else {
                        row[j] = 0.0;
                    }
                }
                for p in row.iter_mut() {
                    *p /= sum;
                }
                let oi = &mut out[i * d + off..i * d + off + dh];
                for j in 0..tk {
                    let p = row[j];
                    if p == 0.0 {
                        continue;
                    }
                    let vj = &vv[j * d + off..j * d + off + dh];
                    for (o, x) in oi.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(tq, d, out, Op::Attention { q, k, v, heads, probs }, ng, "attention"))
    }

    /// Mean negative log-likelihood of `targets` over the rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, NumericsError> {
        let (t, vocab) = self.dims(logits);
        if vocab < 2 {
            return Err(shape_err("cross entropy needs at least two classes".into()));
        }
        if targets.len() != t || mask.len() != t {
            return Err(shape_err(format!("{} logit rows, {} targets, {} mask", t, targets.len(), mask.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::EmptyMask);
        }
        let lv = self.value(logits);
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite("cross_entropy input"));
        }
        let mut probs = vec![0.0; t * vocab];
        let mut total = 0.0;
        for i in 0..t {
            if !mask[i] {
                continue;
            }
            let y = targets[i];
            if y >= vocab {
                return Err(NumericsError::IndexOutOfRange { index: y, len: vocab });
            }
            let row = &lv[i * vocab..(i + 1) * vocab];
            let lse = log_sum_exp(row);
            total += lse - row[y];
            for (p, &z) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(row) {
                *p = libm::exp(z - lse);
            }
        }
        let loss = total / count as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            ng,
            "cross_entropy",
        ))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against soft targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(shape_err(format!("{} logits vs {} targets", lv.len(), targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(NumericsError::TargetOutOfRange(bad));
        }
        if lv.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite("bce input"));
        }
        let loss: f64 = lv
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs())))
            .sum();
        let ng = self.ng(logits);
        Ok(self.push(1, 1, vec![loss], Op::Bce { logits, targets: targets.to_vec() }, ng, "bce"))
    }

    /// Runs the backward pass from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if let Some(op) = self.non_finite {
            return Err(NumericsError::NonFinite(op));
        }
        if self.node(loss).value.len() != 1 {
            return Err(shape_err("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match node.op {
                Op::Leaf | Op::Param => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_nt_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn_acc(av, g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn_acc(g, av, gb, m, n, k);
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.dims(*x);
                let n = node.cols;
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(gx) = self.acc(grads, *x) {
                    matmul_nt_acc(g, wv, gx, m, n, k);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    matmul_tn_acc(xv, g, gw, m, k, n);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in g.chunks(n) {
                            for (o, x) in gb.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        for (o, x) in gv.iter_mut().zip(g) {
                            *o += x;
                        }
                    }
                }
            }
            Op::AddRowsAt { base, rows, at } => {
                let d = node.cols;
                if let Some(gb) = self.acc(grads, *base) {
                    for (o, x) in gb.iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if let Some(gr) = self.acc(grads, *rows) {
                    for (i, &p) in at.iter().enumerate() {
                        for c in 0..d {
                            gr[i * d + c] += g[p * d + c];
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += s * x;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, x), &inp) in ga.iter_mut().zip(g).zip(av) {
                        if inp > 0.0 {
                            *o += x;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, x), &inp) in ga.iter_mut().zip(g).zip(av) {
                        *o += x * gelu_grad(inp);
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = node.cols;
                let y = &node.value;
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            or[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = node.cols;
                let m = node.rows;
                let gv = self.value(*gain);
                if let Some(gg) = self.acc(grads, *gain) {
                    for i in 0..m {
                        for c in 0..d {
                            gg[c] += g[i * d + c] * xhat[i * d + c];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for i in 0..m {
                        for c in 0..d {
                            gb[c] += g[i * d + c];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for i in 0..m {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..d {
                            dxhat[c] = g[i * d + c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat[i * d + c];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for c in 0..d {
                            gx[i * d + c] += rstd[i] * (dxhat[c] - mean_d - xhat[i * d + c] * mean_dx);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = node.cols;
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let d = node.cols;
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, v) in gx[start * d..start * d + g.len()].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::MeanRows(x) => {
                let (m, d) = self.dims(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..m {
                        for c in 0..d {
                            gx[i * d + c] += g[c] / m as f64;
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, d) = self.dims(*q);
                let tk = self.dims(*k).0;
                let dh = d / heads;
                let scale = 1.0 / libm::sqrt(dh as f64);
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = vec![0.0; tq * d];
                let mut gk = vec![0.0; tk * d];
                let mut gvv = vec![0.0; tk * d];
                let mut dp = vec![0.0; tk];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..tq {
                        let p = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                        let go = &g[i * d + off..i * d + off + dh];
                        let mut dot = 0.0;
                        for j in 0..tk {
                            if p[j] == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vj = &vv[j * d + off..j * d + off + dh];
                            dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                            dot += p[j] * dp[j];
                            for c in 0..dh {
                                gvv[j * d + off + c] += p[j] * go[c];
                            }
                        }
                        for j in 0..tk {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - dot) * scale;
                            for c in 0..dh {
                                gq[i * d + off + c] += ds * kv[j * d + off + c];
                                gk[j * d + off + c] += ds * qv[i * d + off + c];
                            }
                        }
                    }
                }
                for (var, local) in [(*q, gq), (*k, gk), (*v, gvv)] {
                    if let Some(gx) = self.acc(grads, var) {
                        for (o, x) in gx.iter_mut().zip(&local) {
                            *o += x;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let vocab = self.dims(*logits).1;
                let s = g[0] / *count as f64;
                if let Some(gl) = self.acc(grads, *logits) {
                    for i in 0..mask.len() {
                        if !mask[i] {
                            continue;
                        }
                        for c in 0..vocab {
                            gl[i * vocab + c] += s * probs[i * vocab + c];
                        }
                        gl[i * vocab + targets[i]] -= s;
                    }
                }
            }
            Op::Bce { logits, targets } => {
                let lv = self.value(*logits);
                if let Some(gl) = self.acc(grads, *logits) {
                    for ((o, &z), &y) in gl.iter_mut().zip(lv).zip(targets) {
                        *o += g[0] * (sigmoid(z) - y);
                    }
                }
            }
        }
    }

    /// Adds the gradients of every recorded, trainable parameter into `store`.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParameterStore) {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                let p = store.get_mut(id);
                if p.frozen {
                    continue;
                }
                for (o, x) in p.grad.iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
