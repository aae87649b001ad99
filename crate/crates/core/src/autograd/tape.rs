use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    LogSigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    NormalizeRows {
        x: NodeId,
        norms: Vec<f64>,
    },
    ConcatRows(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    GatherRows {
        x: NodeId,
        ids: Vec<usize>,
    },
    PickPerRow {
        x: NodeId,
        idx: Vec<usize>,
    },
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    Reshape(NodeId),
    Attention {
        qkv: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    InsertRows {
        x: NodeId,
        rows: NodeId,
        batch: usize,
        seq_in: usize,
        offset: usize,
        replace: bool,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Define-by-run record of a forward computation.
///
/// Node ids are assigned in creation order, which is a topological order of
/// the graph. A tape is meant to be built for one forward pass and dropped.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar root, indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or zeros if nothing flowed into it.
    pub fn get(&self, var: &Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }

    pub fn try_get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant leaf: receives no gradient unless explicitly tapped.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf: `backward` reports its gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn owns(&self, var: &Var<'_>) -> bool {
        std::ptr::eq(self, var.tape) && var.id < self.len()
    }

    /// Reverse sweep from a scalar `root`, reporting gradients for every
    /// trainable leaf and every node it depends on.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        self.sweep(root, &[])
    }

    /// Gradient of `root` with respect to an arbitrary node on the tape.
    pub fn grad_tap(&self, root: Var<'_>, node: Var<'_>) -> Result<Tensor> {
        if !self.owns(&node) {
            return Err(Error::Lookup(format!("node #{} is not on this tape", node.id)));
        }
        let grads = self.sweep(root, &[node.id])?;
        Ok(grads.get(&node))
    }

    /// Like [`grad_tap`](Self::grad_tap) but for several nodes in one sweep.
    pub fn backward_with(&self, root: Var<'_>, taps: &[Var<'_>]) -> Result<Gradients> {
        for t in taps {
            if !self.owns(t) {
                return Err(Error::Lookup(format!("node #{} is not on this tape", t.id)));
            }
        }
        let ids: Vec<NodeId> = taps.iter().map(|t| t.id).collect();
        self.sweep(root, &ids)
    }

    fn sweep(&self, root: Var<'_>, taps: &[NodeId]) -> Result<Gradients> {
        if !self.owns(&root) {
            return Err(Error::Lookup(format!("root #{} is not on this tape", root.id)));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let n = root.id + 1;
        let mut relevant = vec![false; n];
        for t in taps {
            if *t < n {
                relevant[*t] = true;
            }
        }
        for (i, node) in nodes.iter().take(n).enumerate() {
            if node.tracked {
                relevant[i] = true;
            } else if !relevant[i] {
                relevant[i] = op_inputs(&node.op).iter().any(|&j| relevant[j]);
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.id] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if relevant[i] {
                backprop(&nodes, i, &g, &relevant, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::from_parts(nodes[i].value.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { grads })
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    use Op::*;
    match op {
        Leaf => vec![],
        Add(a, b) | Sub(a, b) | Mul(a, b) | AddBroadcast(a, b) | MatMul(a, b) => vec![*a, *b],
        Scale(a, _) | AddScalar(a) | Transpose(a) | Relu(a) | Gelu(a) | Exp(a) | Log(a)
        | Abs(a) | LogSigmoid(a) | Softmax(a) | LogSoftmax(a) | Sum(a) | Mean(a) | RowSum(a)
        | Reshape(a) => vec![*a],
        LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        NormalizeRows { x, .. }
        | SliceRows { x, .. }
        | GatherRows { x, .. }
        | PickPerRow { x, .. } => vec![*x],
        ConcatRows(ids) => ids.clone(),
        Attention { qkv, .. } => vec![*qkv],
        InsertRows { x, rows, .. } => vec![*x, *rows],
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'g mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
    let s = slot(grads, id, delta.len());
    for (a, d) in s.iter_mut().zip(delta) {
        *a += d;
    }
}

/// `c += a · b` with explicit strides (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides address elements within `a` (m×k), `b` (k×n) and `c` (m×n);
    // all three slices are sized by the callers to cover those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn backprop(
    nodes: &[Node],
    i: NodeId,
    g: &[f64],
    relevant: &[bool],
    grads: &mut [Option<Vec<f64>>],
) {
    let val = |id: NodeId| -> &Tensor { &nodes[id].value };
    let out = val(i);
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if relevant[*a] {
                accumulate(grads, *a, g);
            }
            if relevant[*b] {
                accumulate(grads, *b, g);
            }
        }
        Op::Sub(a, b) => {
            if relevant[*a] {
                accumulate(grads, *a, g);
            }
            if relevant[*b] {
                let s = slot(grads, *b, g.len());
                for (s, d) in s.iter_mut().zip(g) {
                    *s -= d;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if relevant[*a] {
                let s = slot(grads, *a, g.len());
                for k in 0..g.len() {
                    s[k] += g[k] * bv[k];
                }
            }
            if relevant[*b] {
                let s = slot(grads, *b, g.len());
                for k in 0..g.len() {
                    s[k] += g[k] * av[k];
                }
            }
        }
        Op::AddBroadcast(x, y) => {
            if relevant[*x] {
                accumulate(grads, *x, g);
            }
            if relevant[*y] {
                let ylen = val(*y).numel();
                let s = slot(grads, *y, ylen);
                for (k, d) in g.iter().enumerate() {
                    s[k % ylen] += d;
                }
            }
        }
        Op::Scale(a, f) => {
            let s = slot(grads, *a, g.len());
            for (s, d) in s.iter_mut().zip(g) {
                *s += d * f;
            }
        }
        Op::AddScalar(a) => accumulate(grads, *a, g),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if relevant[*a] {
                // dA = dC · Bᵀ
                let s = slot(grads, *a, m * k);
                gemm_acc(m, n, k, g, (n, 1), bv.data(), (1, n), s);
            }
            if relevant[*b] {
                // dB = Aᵀ · dC
                let s = slot(grads, *b, k * n);
                gemm_acc(k, m, n, av.data(), (1, k), g, (n, 1), s);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            let s = slot(grads, *a, g.len());
            for p in 0..r {
                for q in 0..c {
                    s[q * r + p] += g[p * c + q];
                }
            }
        }
        Op::Relu(a) => {
            let av = val(*a).data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                if av[k] > 0.0 {
                    s[k] += g[k];
                }
            }
        }
        Op::Gelu(a) => {
            let av = val(*a).data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                let x = av[k];
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                let d = 0.5 * (1.0 + t)
                    + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                s[k] += g[k] * d;
            }
        }
        Op::Exp(a) => {
            let ov = out.data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                s[k] += g[k] * ov[k];
            }
        }
        Op::Log(a) => {
            let av = val(*a).data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                s[k] += g[k] / av[k];
            }
        }
        Op::Abs(a) => {
            let av = val(*a).data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                // subgradient 0 at the kink
                let sign = if av[k] > 0.0 {
                    1.0
                } else if av[k] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                s[k] += g[k] * sign;
            }
        }
        Op::LogSigmoid(a) => {
            let av = val(*a).data();
            let s = slot(grads, *a, g.len());
            for k in 0..g.len() {
                // d/dx log σ(x) = σ(-x)
                s[k] += g[k] * sigmoid(-av[k]);
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let c = out.cols();
            let rows = out.rows();
            let gv = val(*gamma).data();
            if relevant[*gamma] {
                let s = slot(grads, *gamma, c);
                for r in 0..rows {
                    for j in 0..c {
                        s[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
            }
            if relevant[*beta] {
                let s = slot(grads, *beta, c);
                for r in 0..rows {
                    for j in 0..c {
                        s[j] += g[r * c + j];
                    }
                }
            }
            if relevant[*x] {
                let s = slot(grads, *x, rows * c);
                let mut dxhat = vec![0.0; c];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        dxhat[j] = g[r * c + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * c + j];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for j in 0..c {
                        s[r * c + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * c + j] * mean_dx);
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let c = out.cols();
            let ov = out.data();
            let s = slot(grads, *a, g.len());
            for r in 0..out.rows() {
                let row = r * c..(r + 1) * c;
                let dot: f64 = ov[row.clone()].iter().zip(&g[row.clone()]).map(|(y, d)| y * d).sum();
                for k in row {
                    s[k] += ov[k] * (g[k] - dot);
                }
            }
        }
        Op::LogSoftmax(a) => {
            let c = out.cols();
            let ov = out.data();
            let s = slot(grads, *a, g.len());
            for r in 0..out.rows() {
                let row = r * c..(r + 1) * c;
                let total: f64 = g[row.clone()].iter().sum();
                for k in row {
                    s[k] += g[k] - ov[k].exp() * total;
                }
            }
        }
        Op::NormalizeRows { x, norms } => {
            let c = out.cols();
            let ov = out.data();
            let s = slot(grads, *x, g.len());
            for (r, norm) in norms.iter().enumerate() {
                let row = r * c..(r + 1) * c;
                let dot: f64 = ov[row.clone()].iter().zip(&g[row.clone()]).map(|(y, d)| y * d).sum();
                for k in row {
                    s[k] += (g[k] - ov[k] * dot) / norm;
                }
            }
        }
        Op::ConcatRows(ids) => {
            let mut off = 0;
            for id in ids {
                let len = val(*id).numel();
                if relevant[*id] {
                    accumulate(grads, *id, &g[off..off + len]);
                }
                off += len;
            }
        }
        Op::SliceRows { x, start } => {
            let c = out.cols();
            let xlen = val(*x).numel();
            let s = slot(grads, *x, xlen);
            for (k, d) in g.iter().enumerate() {
                s[start * c + k] += d;
            }
        }
        Op::GatherRows { x, ids } => {
            let c = out.cols();
            let xlen = val(*x).numel();
            let s = slot(grads, *x, xlen);
            for (r, &src) in ids.iter().enumerate() {
                for j in 0..c {
                    s[src * c + j] += g[r * c + j];
                }
            }
        }
        Op::PickPerRow { x, idx } => {
            let xv = val(*x);
            let c = xv.cols();
            let s = slot(grads, *x, xv.numel());
            for (r, &j) in idx.iter().enumerate() {
                s[r * c + j] += g[r];
            }
        }
        Op::Sum(a) => {
            let len = val(*a).numel();
            let s = slot(grads, *a, len);
            for v in s.iter_mut() {
                *v += g[0];
            }
        }
        Op::Mean(a) => {
            let len = val(*a).numel();
            let s = slot(grads, *a, len);
            let d = g[0] / len as f64;
            for v in s.iter_mut() {
                *v += d;
            }
        }
        Op::RowSum(a) => {
            let av = val(*a);
            let c = av.cols();
            let s = slot(grads, *a, av.numel());
            for (k, v) in s.iter_mut().enumerate() {
                *v += g[k / c];
            }
        }
        Op::Reshape(a) => accumulate(grads, *a, g),
        Op::Attention {
            qkv,
            batch,
            seq,
            heads,
            probs,
        } => {
            let qv = val(*qkv).data();
            let s = slot(grads, *qkv, qv.len());
            attention_backward(qv, probs, g, *batch, *seq, *heads, s);
        }
        Op::InsertRows {
            x,
            rows,
            batch,
            seq_in,
            offset,
            replace,
        } => {
            let c = out.cols();
            let m = val(*rows).rows();
            let seq_out = if *replace { *seq_in } else { seq_in + m };
            if relevant[*x] {
                let s = slot(grads, *x, batch * seq_in * c);
                for b in 0..*batch {
                    for t in 0..*seq_in {
                        let dst = if t < *offset {
                            Some(t)
                        } else if *replace {
                            (t >= offset + m).then_some(t)
                        } else {
                            Some(t + m)
                        };
                        if let Some(o) = dst {
                            let (si, oi) = ((b * seq_in + t) * c, (b * seq_out + o) * c);
                            for j in 0..c {
                                s[si + j] += g[oi + j];
                            }
                        }
                    }
                }
            }
            if relevant[*rows] {
                let s = slot(grads, *rows, m * c);
                for b in 0..*batch {
                    for t in 0..m {
                        let oi = (b * seq_out + offset + t) * c;
                        for j in 0..c {
                            s[t * c + j] += g[oi + j];
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn attention_forward(
    qkv: &[f64],
    batch: usize,
    seq: usize,
    heads: usize,
    width: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let stride = 3 * width;
    let mut out = vec![0.0; batch * seq * width];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let q = &qkv[(b * seq + i) * stride + h * dh..][..dh];
                let prow = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                let mut max = f64::NEG_INFINITY;
                for (j, p) in prow.iter_mut().enumerate() {
                    let k = &qkv[(b * seq + j) * stride + width + h * dh..][..dh];
                    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                    *p = dot * scale;
                    max = max.max(*p);
                }
                let mut z = 0.0;
                for p in prow.iter_mut() {
                    *p = (*p - max).exp();
                    z += *p;
                }
                let o = &mut out[(b * seq + i) * width + h * dh..][..dh];
                for (j, p) in prow.iter_mut().enumerate() {
                    *p /= z;
                    let v = &qkv[(b * seq + j) * stride + 2 * width + h * dh..][..dh];
                    for t in 0..dh {
                        o[t] += *p * v[t];
                    }
                }
            }
        }
    }
    (out, probs)
}

fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    g: &[f64],
    batch: usize,
    seq: usize,
    heads: usize,
    dqkv: &mut [f64],
) {
    let width = g.len() / (batch * seq);
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let stride = 3 * width;
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let go = &g[(b * seq + i) * width + h * dh..][..dh];
                let prow = &probs[pbase + i * seq..pbase + (i + 1) * seq];
                let mut dot = 0.0;
                for j in 0..seq {
                    let vi = (b * seq + j) * stride + 2 * width + h * dh;
                    let v = &qkv[vi..vi + dh];
                    dp[j] = go.iter().zip(v).map(|(a, b)| a * b).sum();
                    dot += prow[j] * dp[j];
                    // dV_j += P_ij dOut_i
                    for t in 0..dh {
                        dqkv[vi + t] += prow[j] * go[t];
                    }
                }
                let qi = (b * seq + i) * stride + h * dh;
                for j in 0..seq {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ki = (b * seq + j) * stride + width + h * dh;
                    for t in 0..dh {
                        dqkv[qi + t] += ds * qkv[ki + t];
                        dqkv[ki + t] += ds * qkv[qi + t];
                    }
                }
            }
        }
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Whether a trainable leaf feeds this node.
    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn derive(&self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = op_inputs(&op).iter().any(|&j| self.tape.tracked(j));
        self.tape.push(value, op, tracked)
    }

    fn same_shape(&self, other: &Var<'t>, what: &str) -> (Rc<Tensor>, Rc<Tensor>) {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
        (a, b)
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.same_shape(&other, "add");
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.derive(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Add(self.id, other.id),
        )
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.same_shape(&other, "sub");
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.derive(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Sub(self.id, other.id),
        )
    }

    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = self.same_shape(&other, "mul");
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.derive(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Mul(self.id, other.id),
        )
    }

    /// Adds `other` cyclically: its element count must divide ours. Covers
    /// row biases (`[c]` over `[n, c]`) and tiled position tables.
    pub fn add_broadcast(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let blen = b.numel();
        assert!(
            blen > 0 && a.numel() % blen == 0,
            "add_broadcast: {:?} does not tile {:?}",
            b.shape(),
            a.shape()
        );
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| x + b.data()[k % blen])
            .collect();
        self.derive(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::AddBroadcast(self.id, other.id),
        )
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let v = unary(&self.value(), |x| x * factor);
        self.derive(v, Op::Scale(self.id, factor))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = unary(&self.value(), |x| x + c);
        self.derive(v, Op::AddScalar(self.id))
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert!(
            a.shape().len() == 2 && b.shape().len() == 2 && a.shape()[1] == b.shape()[0],
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut c);
        self.derive(
            Tensor::from_parts(vec![m, n], c),
            Op::MatMul(self.id, other.id),
        )
    }

    pub fn transpose(&self) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 2, "transpose needs a matrix");
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![0.0; r * c];
        for p in 0..r {
            for q in 0..c {
                data[q * r + p] = a.data()[p * c + q];
            }
        }
        self.derive(Tensor::from_parts(vec![c, r], data), Op::Transpose(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = unary(&self.value(), |x| x.max(0.0));
        self.derive(v, Op::Relu(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        let v = unary(&self.value(), |x| {
            0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
        });
        self.derive(v, Op::Gelu(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        let v = unary(&self.value(), f64::exp);
        self.derive(v, Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var<'t> {
        let v = unary(&self.value(), f64::ln);
        self.derive(v, Op::Log(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        let v = unary(&self.value(), f64::abs);
        self.derive(v, Op::Abs(self.id))
    }

    /// Numerically stable `log σ(x)`.
    pub fn log_sigmoid(&self) -> Var<'t> {
        let v = unary(&self.value(), |x| x.min(0.0) - (-x.abs()).exp().ln_1p());
        self.derive(v, Op::LogSigmoid(self.id))
    }

    /// Row-wise layer normalization over the last axis.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>) -> Var<'t> {
        let (x, gv, bv) = (self.value(), gamma.value(), beta.value());
        let c = x.cols();
        assert!(gv.numel() == c && bv.numel() == c, "layer_norm: affine width");
        let rows = x.rows();
        let mut xhat = vec![0.0; rows * c];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        self.derive(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.derive(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Softmax(self.id),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.derive(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::LogSoftmax(self.id),
        )
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&self) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(x.rows());
        for row in out.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        self.derive(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::NormalizeRows { x: self.id, norms },
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        assert!(start <= end && end <= x.rows(), "slice_rows out of range");
        let data = x.data()[start * c..end * c].to_vec();
        self.derive(
            Tensor::from_parts(vec![end - start, c], data),
            Op::SliceRows { x: self.id, start },
        )
    }

    /// Rows selected by index (repeats allowed).
    pub fn gather_rows(&self, ids: &[usize]) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &r in ids {
            assert!(r < x.rows(), "gather_rows: row {r} out of range");
            data.extend_from_slice(x.row(r));
        }
        self.derive(
            Tensor::from_parts(vec![ids.len(), c], data),
            Op::GatherRows {
                x: self.id,
                ids: ids.to_vec(),
            },
        )
    }

    /// `out[r] = x[r, idx[r]]`.
    pub fn pick_per_row(&self, idx: &[usize]) -> Var<'t> {
        let x = self.value();
        assert_eq!(idx.len(), x.rows(), "pick_per_row: one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &j)| {
                assert!(j < x.cols(), "pick_per_row: column {j} out of range");
                x.row(r)[j]
            })
            .collect();
        self.derive(
            Tensor::vector(data),
            Op::PickPerRow {
                x: self.id,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.derive(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.derive(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Sums over the last axis: `[n, c] -> [n]`.
    pub fn row_sum(&self) -> Var<'t> {
        let x = self.value();
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        self.derive(Tensor::vector(data), Op::RowSum(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = self.value().reshape(shape).expect("reshape: element count");
        self.derive(v, Op::Reshape(self.id))
    }

    /// Multi-head self-attention over `batch` independent sequences.
    ///
    /// `self` is the packed `[batch·seq, 3·width]` projection holding queries,
    /// keys and values side by side; the result is `[batch·seq, width]`.
    pub fn attention(&self, batch: usize, seq: usize, heads: usize) -> Var<'t> {
        let x = self.value();
        let width = x.cols() / 3;
        assert!(
            x.cols() == 3 * width && width % heads == 0 && x.rows() == batch * seq,
            "attention: bad packing {:?}",
            x.shape()
        );
        let (out, probs) = attention_forward(x.data(), batch, seq, heads, width);
        self.derive(
            Tensor::from_parts(vec![batch * seq, width], out),
            Op::Attention {
                qkv: self.id,
                batch,
                seq,
                heads,
                probs,
            },
        )
    }

    /// Places `rows` (`[m, c]`) at position `offset` of each of `batch`
    /// sequences packed in `self` (`[batch·seq, c]`), either inserting them or
    /// overwriting the `m` rows already there.
    pub fn insert_rows(
        &self,
        rows: Var<'t>,
        batch: usize,
        seq: usize,
        offset: usize,
        replace: bool,
    ) -> Var<'t> {
        let (x, p) = (self.value(), rows.value());
        let c = x.cols();
        let m = p.rows();
        assert!(
            p.cols() == c && x.rows() == batch * seq,
            "insert_rows: {:?} into {:?}",
            p.shape(),
            x.shape()
        );
        assert!(
            offset <= seq && (!replace || offset + m <= seq),
            "insert_rows: offset out of range"
        );
        let seq_out = if replace { seq } else { seq + m };
        let mut out = Vec::with_capacity(batch * seq_out * c);
        for b in 0..batch {
            let sample = &x.data()[b * seq * c..(b + 1) * seq * c];
            out.extend_from_slice(&sample[..offset * c]);
            out.extend_from_slice(p.data());
            let resume = if replace { offset + m } else { offset };
            out.extend_from_slice(&sample[resume * c..]);
        }
        self.derive(
            Tensor::from_parts(vec![batch * seq_out, c], out),
            Op::InsertRows {
                x: self.id,
                rows: rows.id,
                batch,
                seq_in: seq,
                offset,
                replace,
            },
        )
    }
}

/// Stacks matrices with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows: nothing to concatenate");
    let c = parts[0].value().cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let v = p.value();
        assert_eq!(v.cols(), c, "concat_rows: column mismatch");
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    parts[0].derive(
        Tensor::from_parts(vec![rows, c], data),
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
    )
}
