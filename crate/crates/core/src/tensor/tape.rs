use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Recorded operation with everything its backward rule needs.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow {
        x: usize,
        bias: usize,
        n: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Shift {
        x: usize,
    },
    ScaleBy {
        x: usize,
        s: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        m: usize,
        n: usize,
    },
    Reshape {
        x: usize,
    },
    Softmax {
        x: usize,
        n: usize,
    },
    LogSoftmax {
        x: usize,
        n: usize,
    },
    MaskFill {
        x: usize,
        allowed: Rc<Vec<bool>>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        n: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Ln {
        x: usize,
    },
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    MeanRows {
        x: usize,
        m: usize,
        n: usize,
    },
    ConcatRows {
        parts: Vec<(usize, usize)>,
    },
    SliceRows {
        x: usize,
        start: usize,
        n: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        width: usize,
        m: usize,
        n: usize,
    },
    ConcatCols {
        parts: Vec<(usize, usize)>,
        m: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
        n: usize,
    },
    Pick {
        x: usize,
        idx: Vec<usize>,
        n: usize,
    },
    L2NormalizeRows {
        x: usize,
        n: usize,
        norms: Vec<f64>,
    },
    GroupMaxRows {
        x: usize,
        argmax: Vec<usize>,
    },
}

/// Coarse operation category, exposed for tape inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Interior,
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            AddRow { x, bias, .. } => vec![*x, *bias],
            ScaleBy { x, s } => vec![*x, *s],
            MatMul { a, b, .. } => vec![*a, *b],
            LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            ConcatRows { parts } | ConcatCols { parts, .. } => parts.iter().map(|p| p.0).collect(),
            GatherRows { table, .. } => vec![*table],
            Scale { x, .. }
            | Shift { x }
            | Transpose { x, .. }
            | Reshape { x }
            | Softmax { x, .. }
            | LogSoftmax { x, .. }
            | MaskFill { x, .. }
            | Gelu { x }
            | Sigmoid { x }
            | Exp { x }
            | Ln { x }
            | Clamp { x, .. }
            | Sum { x }
            | Mean { x }
            | MeanRows { x, .. }
            | SliceRows { x, .. }
            | SliceCols { x, .. }
            | Pick { x, .. }
            | L2NormalizeRows { x, .. }
            | GroupMaxRows { x, .. } => vec![*x],
        }
    }
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) tracked: bool,
    param: Option<ParamId>,
}

/// Records operations in execution order; single-threaded by construction.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    bound: RefCell<BTreeMap<usize, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, shape={:?})", self.id, self.shape())
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

    /// Input node ids of node `id`.
    pub fn node_inputs(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].op.inputs()
    }

    pub fn node_kind(&self, id: usize) -> OpKind {
        match self.nodes.borrow()[id].op {
            Op::Leaf => OpKind::Leaf,
            _ => OpKind::Interior,
        }
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let tracked = op.inputs().iter().any(|&i| nodes[i].tracked);
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op,
            tracked,
            param: None,
        });
        Var { tape: self, id }
    }

    fn push_leaf(&self, shape: Vec<usize>, value: Vec<f64>, tracked: bool, param: Option<ParamId>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            tracked,
            param,
        });
        Var { tape: self, id }
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t.shape().to_vec(), t.values().to_vec(), false, None)
    }

    pub fn constant_from(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var<'_>> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape("constant", &shape, &[values.len()]));
        }
        Ok(self.push_leaf(shape, values, false, None))
    }

    /// Leaf copied from a standalone tensor; tracked iff the tensor requires grad.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t.shape().to_vec(), t.values().to_vec(), t.requires_grad(), None)
    }

    /// Binds a stored parameter. Repeated calls on one tape share a node, so
    /// every use of the parameter contributes to a single summed gradient.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.bound.borrow().get(&id.index()) {
            return Var { tape: self, id: node };
        }
        let t = store.get(id);
        let var = self.push_leaf(t.shape().to_vec(), t.values().to_vec(), t.requires_grad(), Some(id));
        self.bound.borrow_mut().insert(id.index(), var.id);
        var
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if root.tracked {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = nodes
            .iter()
            .enumerate()
            .take(loss.id + 1)
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `var`, or zeros when nothing flowed into it.
    pub fn wrt(&self, var: Var<'_>) -> Vec<f64> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; var.numel()],
        }
    }

    /// Accumulates (+=) into every trainable bound parameter.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        for &(node, pid) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                let t = store.get_mut(pid);
                if t.requires_grad() {
                    t.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }
}

/// Backpropagates `loss` and accumulates into the store's gradient buffers.
pub fn backward(loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
    let grads = loss.tape.backward(loss)?;
    grads.apply_to(store)
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].tracked {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: &[f64]) {
    if let Some(dst) = slot(grads, nodes, id) {
        for (d, v) in dst.iter_mut().zip(g) {
            *d += v;
        }
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    if !node.tracked {
        return;
    }
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(grads, nodes, *a, g);
            add_into(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            add_into(grads, nodes, *a, g);
            if let Some(dst) = slot(grads, nodes, *b) {
                for (d, v) in dst.iter_mut().zip(g) {
                    *d -= v;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(dst) = slot(grads, nodes, *a) {
                for i in 0..g.len() {
                    dst[i] += g[i] * bv[i];
                }
            }
            if let Some(dst) = slot(grads, nodes, *b) {
                for i in 0..g.len() {
                    dst[i] += g[i] * av[i];
                }
            }
        }
        Op::AddRow { x, bias, n } => {
            add_into(grads, nodes, *x, g);
            if let Some(dst) = slot(grads, nodes, *bias) {
                for row in g.chunks(*n) {
                    for (d, v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for (d, v) in dst.iter_mut().zip(g) {
                    *d += c * v;
                }
            }
        }
        Op::Shift { x } | Op::Reshape { x } => add_into(grads, nodes, *x, g),
        Op::ScaleBy { x, s } => {
            let xv = &nodes[*x].value;
            let sv = nodes[*s].value[0];
            if let Some(dst) = slot(grads, nodes, *x) {
                for (d, v) in dst.iter_mut().zip(g) {
                    *d += sv * v;
                }
            }
            if let Some(dst) = slot(grads, nodes, *s) {
                dst[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(dst) = slot(grads, nodes, *a) {
                kernels::matmul_a_bt_acc(g, bv, *m, *k, *n, dst);
            }
            if let Some(dst) = slot(grads, nodes, *b) {
                kernels::matmul_at_b_acc(av, g, *m, *k, *n, dst);
            }
        }
        Op::Transpose { x, m, n } => {
            // y is n×m; dx[i,j] += g[j,i]
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..*m {
                    for j in 0..*n {
                        dst[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Softmax { x, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for ((gr, yr), dr) in g.chunks(*n).zip(y.chunks(*n)).zip(dst.chunks_mut(*n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..*n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmax { x, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for ((gr, yr), dr) in g.chunks(*n).zip(y.chunks(*n)).zip(dst.chunks_mut(*n)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..*n {
                        dr[j] += gr[j] - yr[j].exp() * total;
                    }
                }
            }
        }
        Op::MaskFill { x, allowed } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    if allowed[i] {
                        dst[i] += g[i];
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            n,
            xhat,
            rstd,
        } => {
            let n = *n;
            let gv = &nodes[*gain].value;
            if let Some(dst) = slot(grads, nodes, *gain) {
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        dst[j] += gr[j] * xr[j];
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *bias) {
                for gr in g.chunks(n) {
                    for j in 0..n {
                        dst[j] += gr[j];
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *x) {
                let mut dxhat = vec![0.0; n];
                for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    for j in 0..n {
                        dxhat[j] = gr[j] * gv[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    let dr = &mut dst[r * n..(r + 1) * n];
                    for j in 0..n {
                        dr[j] += rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                    }
                }
            }
        }
        Op::Gelu { x } => {
            let xv = &nodes[*x].value;
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    dst[i] += g[i] * super::ops::gelu_grad(xv[i]);
                }
            }
        }
        Op::Sigmoid { x } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    dst[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Exp { x } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    dst[i] += g[i] * y[i];
                }
            }
        }
        Op::Ln { x } => {
            let xv = &nodes[*x].value;
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    dst[i] += g[i] / xv[i];
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            let xv = &nodes[*x].value;
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..g.len() {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        dst[i] += g[i];
                    }
                }
            }
        }
        Op::Sum { x } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean { x } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                let scale = g[0] / dst.len() as f64;
                dst.iter_mut().for_each(|d| *d += scale);
            }
        }
        Op::MeanRows { x, m, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                let inv = 1.0 / *m as f64;
                for row in dst.chunks_mut(*n) {
                    for j in 0..*n {
                        row[j] += g[j] * inv;
                    }
                }
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &(pid, len) in parts {
                add_into(grads, nodes, pid, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::SliceRows { x, start, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                let off = start * n;
                for (i, v) in g.iter().enumerate() {
                    dst[off + i] += v;
                }
            }
        }
        Op::SliceCols { x, start, width, m, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for i in 0..*m {
                    for j in 0..*width {
                        dst[i * n + start + j] += g[i * width + j];
                    }
                }
            }
        }
        Op::ConcatCols { parts, m } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let mut col = 0;
            for &(pid, width) in parts {
                if let Some(dst) = slot(grads, nodes, pid) {
                    for i in 0..*m {
                        for j in 0..width {
                            dst[i * width + j] += g[i * total + col + j];
                        }
                    }
                }
                col += width;
            }
        }
        Op::GatherRows { table, ids, n } => {
            if let Some(dst) = slot(grads, nodes, *table) {
                for (r, &row) in ids.iter().enumerate() {
                    for j in 0..*n {
                        dst[row * n + j] += g[r * n + j];
                    }
                }
            }
        }
        Op::Pick { x, idx, n } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for (r, &j) in idx.iter().enumerate() {
                    dst[r * n + j] += g[r];
                }
            }
        }
        Op::L2NormalizeRows { x, n, norms } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for (r, ((gr, yr), dr)) in g.chunks(*n).zip(y.chunks(*n)).zip(dst.chunks_mut(*n)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..*n {
                        dr[j] += (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
            }
        }
        Op::GroupMaxRows { x, argmax } => {
            if let Some(dst) = slot(grads, nodes, *x) {
                for (o, &src) in argmax.iter().enumerate() {
                    dst[src] += g[o];
                }
            }
        }
    }
}
