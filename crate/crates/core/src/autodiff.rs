//! A reverse-mode tape over whole-tensor operations.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the tape in reverse and returns gradients for the parameters that
//! were read into it. The op set is exactly what the models in this crate
//! need; it is not a general array library.

use crate::graph::Adjacency;
use crate::tensor::{matmul, matmul_at, matmul_bt, ParamId, ParamStore, Tensor};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Cached attention state of a GAT aggregation. For target node `v` the
/// candidate sources are `v` itself followed by its neighbors.
#[derive(Debug, Clone)]
struct Attention {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    alpha: Vec<f64>,
    pre: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<Option<usize>>),
    SliceCols(Var, usize, usize),
    MeanAggregate(Var, Arc<Adjacency>),
    GcnPropagate(Var, Arc<Adjacency>),
    GatAttend {
        z: Var,
        att: Var,
        attention: Attention,
    },
    WeightedSum(Var, Tensor),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<Tensor> {
        let mut out: Option<Tensor> = None;
        for (pid, g) in &self.entries {
            if *pid == id {
                match &mut out {
                    Some(acc) => acc.add_assign(g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Adds every gradient into the matching parameter's grad slot.
    pub fn accumulate_into(self, store: &mut ParamStore) {
        for (id, g) in self.entries {
            store.get_mut(id).grad.add_assign(&g);
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `x[n,m] + b[m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let m = xv.cols();
        assert_eq!(bv.len(), m, "bias width {} vs {m}", bv.len());
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &bb) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must lie in [0, 1)");
        if !training || p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mut out = self.value(x).clone();
        let mut mult = Vec::with_capacity(out.len());
        for v in out.data_mut() {
            let m = if rng.random::<f64>() < p { 0.0 } else { keep };
            *v *= m;
            mult.push(m);
        }
        let rg = self.rg(x);
        self.push(out, Op::Dropout(x, mult), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, ca, cb) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(n, bv.rows(), "concat row mismatch");
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(n, ca + cb, data), Op::ConcatCols(a, b), rg)
    }

    /// Row `i` of the output is row `index[i]` of `x`, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for idx in &index {
            match idx {
                Some(r) => data.extend_from_slice(xv.row(*r)),
                None => data.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(index.len(), c, data), Op::GatherRows(x, index), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start < end && end <= xv.cols(), "column slice out of range");
        let mut data = Vec::with_capacity(xv.rows() * (end - start));
        for i in 0..xv.rows() {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(xv.rows(), end - start, data),
            Op::SliceCols(x, start, end),
            rg,
        )
    }

    /// Mean over neighbor rows; nodes without neighbors get a zero row.
    pub fn mean_aggregate(&mut self, x: Var, adj: &Arc<Adjacency>) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        assert_eq!(adj.len(), n, "adjacency size mismatch");
        let mut out = Tensor::zeros(&[n, c]);
        for v in 0..n {
            let nb = adj.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let inv = 1.0 / nb.len() as f64;
            let orow = out.row_mut(v);
            for &u in nb {
                for (o, &val) in orow.iter_mut().zip(xv.row(u)) {
                    *o += val;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let rg = self.rg(x);
        self.push(out, Op::MeanAggregate(x, adj.clone()), rg)
    }

    /// Symmetric-normalized propagation with self-loops:
    /// `out_v = Σ_{u ∈ N(v) ∪ {v}} x_u / sqrt((deg u + 1)(deg v + 1))`.
    pub fn gcn_propagate(&mut self, x: Var, adj: &Arc<Adjacency>) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        assert_eq!(adj.len(), n, "adjacency size mismatch");
        let mut out = Tensor::zeros(&[n, c]);
        for v in 0..n {
            let dv = adj.degree(v) as f64 + 1.0;
            let orow = out.row_mut(v);
            let self_coeff = 1.0 / dv;
            for (o, &val) in orow.iter_mut().zip(xv.row(v)) {
                *o += self_coeff * val;
            }
            for &u in adj.neighbors(v) {
                let coeff = 1.0 / ((adj.degree(u) as f64 + 1.0) * dv).sqrt();
                for (o, &val) in orow.iter_mut().zip(xv.row(u)) {
                    *o += coeff * val;
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GcnPropagate(x, adj.clone()), rg)
    }

    /// Single-head attention aggregation over `N(v) ∪ {v}`.
    ///
    /// `z` holds the transformed features `h·W` (`[n, d]`) and `att` the
    /// attention vector (`[2d]`): the first half scores the target, the
    /// second half the source.
    #[allow(clippy::needless_range_loop)]
    pub fn gat_attend(&mut self, z: Var, att: Var, adj: &Arc<Adjacency>) -> Var {
        let (zv, av) = (self.value(z), self.value(att));
        let (n, d) = (zv.rows(), zv.cols());
        assert_eq!(av.len(), 2 * d, "attention vector must have 2·{d} entries");
        assert_eq!(adj.len(), n, "adjacency size mismatch");
        let (a_dst, a_src) = av.data().split_at(d);
        let score = |row: &[f64], a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        let s_dst: Vec<f64> = (0..n).map(|v| score(zv.row(v), a_dst)).collect();
        let s_src: Vec<f64> = (0..n).map(|v| score(zv.row(v), a_src)).collect();

        let mut attention = Attention {
            offsets: Vec::with_capacity(n + 1),
            sources: Vec::new(),
            alpha: Vec::new(),
            pre: Vec::new(),
        };
        let mut out = Tensor::zeros(&[n, d]);
        for v in 0..n {
            let start = attention.sources.len();
            attention.offsets.push(start);
            attention.sources.push(v);
            attention.sources.extend_from_slice(adj.neighbors(v));
            for &u in &attention.sources[start..] {
                attention.pre.push(s_dst[v] + s_src[u]);
            }
            let e: Vec<f64> = attention.pre[start..]
                .iter()
                .map(|&p| if p > 0.0 { p } else { LEAKY_SLOPE * p })
                .collect();
            let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = e.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let orow = out.row_mut(v);
            for (k, &u) in attention.sources[start..].iter().enumerate() {
                let alpha = exps[k] / sum;
                attention.alpha.push(alpha);
                for (o, &val) in orow.iter_mut().zip(zv.row(u)) {
                    *o += alpha * val;
                }
            }
        }
        attention.offsets.push(attention.sources.len());
        let rg = self.rg(z) || self.rg(att);
        self.push(out, Op::GatAttend { z, att, attention }, rg)
    }

    /// Attention coefficients of a `gat_attend` node: per target node, the
    /// `(source, alpha)` pairs with the node itself first.
    pub fn attention(&self, v: Var) -> Option<Vec<Vec<(usize, f64)>>> {
        match &self.nodes[v.0].op {
            Op::GatAttend { attention, .. } => Some(
                attention
                    .offsets
                    .windows(2)
                    .map(|w| {
                        (w[0]..w[1])
                            .map(|k| (attention.sources[k], attention.alpha[k]))
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Scalar `Σ x ⊙ weights` against a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), weights.shape(), "weighted_sum shape mismatch");
        let total = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::WeightedSum(x, weights), rg)
    }

    /// Mean negative log-likelihood over rows with a target. Rows whose target
    /// is `None` contribute neither loss nor gradient; with no targets at all
    /// the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        assert_eq!(targets.len(), n, "one target slot per row");
        let mut probs = Tensor::zeros(&[n, c]);
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            assert!(t < c, "target {t} out of range for {c} classes");
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t];
            for (p, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter read
    /// into the tape.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(self.value(loss).shape().to_vec(), vec![1.0]));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.entries.push((*id, dy)),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let g = matmul_bt(&dy, self.value(*b));
                        accumulate(&mut grads, *a, g);
                    }
                    if self.rg(*b) {
                        let g = matmul_at(self.value(*a), &dy);
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let m = dy.cols();
                        let mut db = vec![0.0; m];
                        for r in 0..dy.rows() {
                            for (acc, &g) in db.iter_mut().zip(dy.row(r)) {
                                *acc += g;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        accumulate(&mut grads, *b, Tensor::from_vec(shape, db));
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, dy);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, dy.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, dy);
                    }
                }
                Op::Scale(x, c) => {
                    let mut g = dy;
                    g.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let mut g = dy;
                    for (gv, &y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::Dropout(x, mult) => {
                    let mut g = dy;
                    for (gv, m) in g.data_mut().iter_mut().zip(mult) {
                        *gv *= m;
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let n = dy.rows();
                    if self.rg(*a) {
                        let mut data = Vec::with_capacity(n * ca);
                        for r in 0..n {
                            data.extend_from_slice(&dy.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, Tensor::matrix(n, ca, data));
                    }
                    if self.rg(*b) {
                        let mut data = Vec::with_capacity(n * cb);
                        for r in 0..n {
                            data.extend_from_slice(&dy.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, Tensor::matrix(n, cb, data));
                    }
                }
                Op::GatherRows(x, index) => {
                    let mut g = Tensor::zeros(self.value(*x).shape());
                    for (r, idx) in index.iter().enumerate() {
                        if let Some(src) = idx {
                            for (o, &v) in g.row_mut(*src).iter_mut().zip(dy.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::SliceCols(x, start, _end) => {
                    let mut g = Tensor::zeros(self.value(*x).shape());
                    for r in 0..dy.rows() {
                        let row = dy.row(r);
                        g.row_mut(r)[*start..*start + row.len()].copy_from_slice(row);
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::MeanAggregate(x, adj) => {
                    let mut g = Tensor::zeros(self.value(*x).shape());
                    for v in 0..adj.len() {
                        let nb = adj.neighbors(v);
                        if nb.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / nb.len() as f64;
                        for &u in nb {
                            for (o, &d) in g.row_mut(u).iter_mut().zip(dy.row(v)) {
                                *o += inv * d;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::GcnPropagate(x, adj) => {
                    let mut g = Tensor::zeros(self.value(*x).shape());
                    for v in 0..adj.len() {
                        let dv = adj.degree(v) as f64 + 1.0;
                        let self_coeff = 1.0 / dv;
                        for (o, &d) in g.row_mut(v).iter_mut().zip(dy.row(v)) {
                            *o += self_coeff * d;
                        }
                        for &u in adj.neighbors(v) {
                            let coeff = 1.0 / ((adj.degree(u) as f64 + 1.0) * dv).sqrt();
                            for (o, &d) in g.row_mut(u).iter_mut().zip(dy.row(v)) {
                                *o += coeff * d;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::GatAttend { z, att, attention } => {
                    let (gz, ga) = gat_backward(self.value(*z), self.value(*att), attention, &dy);
                    if self.rg(*z) {
                        accumulate(&mut grads, *z, gz);
                    }
                    if self.rg(*att) {
                        accumulate(&mut grads, *att, ga);
                    }
                }
                Op::WeightedSum(x, w) => {
                    let upstream = dy.item();
                    let mut g = w.clone();
                    g.data_mut().iter_mut().for_each(|v| *v *= upstream);
                    accumulate(&mut grads, *x, g);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let upstream = dy.item();
                    let mut g = Tensor::zeros(probs.shape());
                    if *count > 0 {
                        let scale = upstream / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            let grow = g.row_mut(r);
                            for (o, &p) in grow.iter_mut().zip(probs.row(r)) {
                                *o = scale * p;
                            }
                            grow[t] -= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[allow(clippy::needless_range_loop)]
fn gat_backward(z: &Tensor, att: &Tensor, attn: &Attention, dy: &Tensor) -> (Tensor, Tensor) {
    let (n, d) = (z.rows(), z.cols());
    let (a_dst, a_src) = att.data().split_at(d);
    let mut gz = Tensor::zeros(&[n, d]);
    let mut ds_dst = vec![0.0; n];
    let mut ds_src = vec![0.0; n];
    for v in 0..n {
        let range = attn.offsets[v]..attn.offsets[v + 1];
        let dyv = dy.row(v);
        // dα_uv = dy_v · z_u
        let dalpha: Vec<f64> = attn.sources[range.clone()]
            .iter()
            .map(|&u| dyv.iter().zip(z.row(u)).map(|(a, b)| a * b).sum())
            .collect();
        let weighted: f64 = attn.alpha[range.clone()].iter().zip(&dalpha).map(|(a, g)| a * g).sum();
        for (k, idx) in range.enumerate() {
            let u = attn.sources[idx];
            let alpha = attn.alpha[idx];
            for (o, &g) in gz.row_mut(u).iter_mut().zip(dyv) {
                *o += alpha * g;
            }
            let de = alpha * (dalpha[k] - weighted);
            let dpre = if attn.pre[idx] > 0.0 { de } else { LEAKY_SLOPE * de };
            ds_dst[v] += dpre;
            ds_src[u] += dpre;
        }
    }
    let mut ga = vec![0.0; 2 * d];
    for v in 0..n {
        let zrow = z.row(v).to_vec();
        let grow = gz.row_mut(v);
        for j in 0..d {
            grow[j] += ds_dst[v] * a_dst[j] + ds_src[v] * a_src[j];
            ga[j] += ds_dst[v] * zrow[j];
            ga[d + j] += ds_src[v] * zrow[j];
        }
    }
    (gz, Tensor::from_vec(att.shape().to_vec(), ga))
}
