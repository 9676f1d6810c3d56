use std::rc::Rc;

use super::kernels;
use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Boolean attention mask; `true` marks a key position a query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Rc<Vec<bool>>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::shape("mask", &[rows, cols], &[allowed.len()]));
        }
        Ok(Self {
            rows,
            cols,
            allowed: Rc::new(allowed),
        })
    }

    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: Rc::new(vec![true; rows * cols]),
        }
    }

    /// Lower-triangular mask: position `i` sees positions `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        Self {
            rows: n,
            cols: n,
            allowed: Rc::new(allowed),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self {
            rows,
            cols,
            allowed: Rc::new(allowed),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// First row that allows no key at all.
    pub fn first_empty_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| !(0..self.cols).any(|j| self.get(i, j)))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn cols(&self) -> usize {
        *self.tape.nodes.borrow()[self.id].shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        let n = self.numel();
        let c = self.cols();
        if c == 0 {
            0
        } else {
            n / c
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables recorded on different tapes"
        );
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect())
        };
        self.tape.push(shape, value, op)
    }

    fn elementwise(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
            (
                a.shape.clone(),
                a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect(),
            )
        };
        Ok(self.tape.push(shape, value, op))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a length-`n` vector to every row of a `[.. × n]` tensor.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let n = self.cols();
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            if b.value.len() != n {
                return Err(Error::shape("add_row", &x.shape, &b.shape));
            }
            let mut value = x.value.clone();
            for row in value.chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(&b.value) {
                    *v += bv;
                }
            }
            (x.shape.clone(), value)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::AddRow {
                x: self.id,
                bias: bias.id,
                n,
            },
        ))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale { x: self.id, c }, |v| c * v)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// `x + c` elementwise.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(Op::Shift { x: self.id }, |v| v + c)
    }

    /// Multiplies every element by a one-element variable.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&s);
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (x, sv) = (&nodes[self.id], &nodes[s.id]);
            if sv.value.len() != 1 {
                return Err(Error::shape("scale_by", &x.shape, &sv.shape));
            }
            let c = sv.value[0];
            (x.shape.clone(), x.value.iter().map(|v| v * c).collect())
        };
        Ok(self.tape.push(shape, value, Op::ScaleBy { x: self.id, s: s.id }))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (m, k, n, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::shape("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (m, k, n, kernels::matmul(&a.value, &b.value, m, k, n))
        };
        Ok(self.tape.push(
            vec![m, n],
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        ))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (m, n, value) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return Err(Error::shape("transpose", &x.shape, &[2]));
            }
            let (m, n) = (x.shape[0], x.shape[1]);
            (m, n, kernels::transpose(&x.value, m, n))
        };
        Ok(self.tape.push(vec![n, m], value, Op::Transpose { x: self.id, m, n }))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if shape.iter().product::<usize>() != x.value.len() {
                return Err(Error::shape("reshape", &x.shape, &shape));
            }
            x.value.clone()
        };
        Ok(self.tape.push(shape, value, Op::Reshape { x: self.id }))
    }

    fn check_softmax_input(&self, op: &'static str) -> Result<usize> {
        let n = self.cols();
        if n == 0 {
            return Err(Error::Invalid(format!("{op} over an empty last dimension")));
        }
        let nodes = self.tape.nodes.borrow();
        for (r, row) in nodes[self.id].value.chunks(n).enumerate() {
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Numeric {
                    op,
                    detail: format!("non-finite input in row {r}"),
                });
            }
            if row.iter().all(|v| *v == f64::NEG_INFINITY) {
                return Err(Error::Numeric {
                    op,
                    detail: format!("row {r} has no finite entry"),
                });
            }
        }
        Ok(n)
    }

    /// Softmax over the last dimension with max-subtraction. Entries equal to
    /// `-inf` (masked positions) receive probability zero.
    pub fn softmax(self) -> Result<Var<'t>> {
        let n = self.check_softmax_input("softmax")?;
        let (shape, mut value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        value.chunks_mut(n).for_each(kernels::softmax_in_place);
        Ok(self.tape.push(shape, value, Op::Softmax { x: self.id, n }))
    }

    pub fn log_softmax(self) -> Result<Var<'t>> {
        let n = self.check_softmax_input("log_softmax")?;
        let (shape, mut value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        value.chunks_mut(n).for_each(kernels::log_softmax_in_place);
        Ok(self.tape.push(shape, value, Op::LogSoftmax { x: self.id, n }))
    }

    /// Sets disallowed positions of a `[rows × cols]` tensor to `-inf`.
    pub fn mask_fill(self, mask: &Mask) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 || x.shape[0] != mask.rows || x.shape[1] != mask.cols {
                return Err(Error::shape("mask_fill", &x.shape, &mask.shape()));
            }
            let value = x
                .value
                .iter()
                .zip(mask.allowed.iter())
                .map(|(&v, &keep)| if keep { v } else { f64::NEG_INFINITY })
                .collect();
            (x.shape.clone(), value)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::MaskFill {
                x: self.id,
                allowed: Rc::clone(&mask.allowed),
            },
        ))
    }

    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        if eps <= 0.0 {
            return Err(Error::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let n = self.cols();
        let (shape, value, xhat, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id], &nodes[gain.id], &nodes[bias.id]);
            if n == 0 || g.value.len() != n || b.value.len() != n {
                return Err(Error::shape("layer_norm", &x.shape, &g.shape));
            }
            let rows = x.value.len() / n;
            let mut xhat = vec![0.0; x.value.len()];
            let mut rstd = vec![0.0; rows];
            let mut value = vec![0.0; x.value.len()];
            for r in 0..rows {
                let row = &x.value[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    value[r * n + j] = h * g.value[j] + b.value[j];
                }
            }
            (x.shape.clone(), value, xhat, rstd)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                n,
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu { x: self.id }, gelu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid { x: self.id }, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp { x: self.id }, f64::exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        if self.with_value(|v| v.iter().any(|&x| x <= 0.0 || !x.is_finite())) {
            return Err(Error::Numeric {
                op: "ln",
                detail: "input must be positive and finite".into(),
            });
        }
        Ok(self.unary(Op::Ln { x: self.id }, f64::ln))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp { x: self.id, lo, hi }, |v| v.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.with_value(|v| v.iter().sum());
        self.tape.push(vec![1], vec![s], Op::Sum { x: self.id })
    }

    pub fn mean(self) -> Var<'t> {
        let s = self.with_value(|v| v.iter().sum::<f64>() / v.len() as f64);
        self.tape.push(vec![1], vec![s], Op::Mean { x: self.id })
    }

    /// Column means of a `[m × n]` tensor, giving `[n]`.
    pub fn mean_rows(self) -> Var<'t> {
        let (m, n) = (self.rows(), self.cols());
        let value = self.with_value(|v| {
            let mut out = vec![0.0; n];
            for row in v.chunks(n) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= m as f64);
            out
        });
        self.tape.push(vec![n], value, Op::MeanRows { x: self.id, m, n })
    }

    /// Stacks row blocks (matrices or vectors) sharing a column count.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_rows of zero parts".into()))?;
        let tape = first.tape;
        let n = first.cols();
        let mut value = Vec::new();
        let mut layout = Vec::with_capacity(parts.len());
        {
            let nodes = tape.nodes.borrow();
            for p in parts {
                first.same_tape(p);
                let node = &nodes[p.id];
                if *node.shape.last().unwrap_or(&1) != n {
                    return Err(Error::shape("concat_rows", &nodes[first.id].shape, &node.shape));
                }
                value.extend_from_slice(&node.value);
                layout.push((p.id, node.value.len()));
            }
        }
        let rows = value.len() / n.max(1);
        Ok(tape.push(vec![rows, n], value, Op::ConcatRows { parts: layout }))
    }

    /// Rows `start..end` of a `[m × n]` tensor.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (m, n) = (self.rows(), self.cols());
        if start > end || end > m {
            return Err(Error::shape("slice_rows", &[m, n], &[start, end]));
        }
        let value = self.with_value(|v| v[start * n..end * n].to_vec());
        Ok(self
            .tape
            .push(vec![end - start, n], value, Op::SliceRows { x: self.id, start, n }))
    }

    /// Row `i` as a vector `[n]`.
    pub fn row(self, i: usize) -> Result<Var<'t>> {
        let n = self.cols();
        self.slice_rows(i, i + 1)?.reshape(vec![n])
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (m, n) = (self.rows(), self.cols());
        if start > end || end > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, end]));
        }
        let width = end - start;
        let value = self.with_value(|v| {
            let mut out = Vec::with_capacity(m * width);
            for row in v.chunks(n) {
                out.extend_from_slice(&row[start..end]);
            }
            out
        });
        Ok(self.tape.push(
            vec![m, width],
            value,
            Op::SliceCols {
                x: self.id,
                start,
                width,
                m,
                n,
            },
        ))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_cols of zero parts".into()))?;
        let tape = first.tape;
        let m = first.rows();
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = vec![0.0; m * total];
        {
            let nodes = tape.nodes.borrow();
            let mut col = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                first.same_tape(p);
                let node = &nodes[p.id];
                if node.value.len() != m * w {
                    return Err(Error::shape("concat_cols", &nodes[first.id].shape, &node.shape));
                }
                for i in 0..m {
                    value[i * total + col..i * total + col + w].copy_from_slice(&node.value[i * w..(i + 1) * w]);
                }
                col += w;
            }
        }
        let layout = parts.iter().zip(&widths).map(|(p, &w)| (p.id, w)).collect();
        Ok(tape.push(vec![m, total], value, Op::ConcatCols { parts: layout, m }))
    }

    /// Embedding lookup: rows `ids` of a `[V × n]` table.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let (v, n) = (self.rows(), self.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Invalid(format!(
                "row index {bad} out of range for table with {v} rows"
            )));
        }
        let value = self.with_value(|t| {
            let mut out = Vec::with_capacity(ids.len() * n);
            for &i in ids {
                out.extend_from_slice(&t[i * n..(i + 1) * n]);
            }
            out
        });
        Ok(self.tape.push(
            vec![ids.len(), n],
            value,
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
                n,
            },
        ))
    }

    /// Picks `x[i, idx[i]]` from a `[m × n]` tensor, giving `[m]`.
    pub fn pick(self, idx: &[usize]) -> Result<Var<'t>> {
        let (m, n) = (self.rows(), self.cols());
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::shape("pick", &[m, n], &[idx.len()]));
        }
        let value = self.with_value(|v| idx.iter().enumerate().map(|(i, &j)| v[i * n + j]).collect());
        Ok(self.tape.push(
            vec![m],
            value,
            Op::Pick {
                x: self.id,
                idx: idx.to_vec(),
                n,
            },
        ))
    }

    pub fn l2_normalize_rows(self) -> Result<Var<'t>> {
        let n = self.cols();
        let (shape, value, norms) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            let mut norms = Vec::with_capacity(x.value.len() / n.max(1));
            let mut value = x.value.clone();
            for (r, row) in value.chunks_mut(n).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::Numeric {
                        op: "cosine_sim",
                        detail: format!("zero-norm or non-finite vector at row {r}"),
                    });
                }
                row.iter_mut().for_each(|v| *v /= norm);
                norms.push(norm);
            }
            (x.shape.clone(), value, norms)
        };
        Ok(self
            .tape
            .push(shape, value, Op::L2NormalizeRows { x: self.id, n, norms }))
    }

    /// Max over consecutive groups of `group` rows: `[(G·group) × n] → [G × n]`.
    pub fn group_max_rows(self, group: usize) -> Result<Var<'t>> {
        let (m, n) = (self.rows(), self.cols());
        if group == 0 || m % group != 0 {
            return Err(Error::shape("group_max_rows", &[m, n], &[group]));
        }
        let groups = m / group;
        let (value, argmax) = self.with_value(|v| {
            let mut value = vec![f64::NEG_INFINITY; groups * n];
            let mut argmax = vec![0usize; groups * n];
            for gi in 0..groups {
                for r in 0..group {
                    let src_row = gi * group + r;
                    for j in 0..n {
                        let x = v[src_row * n + j];
                        if r == 0 || x > value[gi * n + j] {
                            value[gi * n + j] = x;
                            argmax[gi * n + j] = src_row * n + j;
                        }
                    }
                }
            }
            (value, argmax)
        });
        Ok(self
            .tape
            .push(vec![groups, n], value, Op::GroupMaxRows { x: self.id, argmax }))
    }

    /// Cosine similarity of two vectors as a one-element variable.
    pub fn cosine(self, other: Var<'t>) -> Result<Var<'t>> {
        if self.numel() != other.numel() {
            return Err(Error::shape("cosine_sim", &self.shape(), &other.shape()));
        }
        let d = self.numel();
        let a = self.reshape(vec![1, d])?.l2_normalize_rows()?;
        let b = other.reshape(vec![d, 1])?;
        let b = b.reshape(vec![1, d])?.l2_normalize_rows()?.reshape(vec![d, 1])?;
        a.matmul(b)?.reshape(vec![1])
    }
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d)·V` with an optional mask.
pub fn attention<'t>(queries: Var<'t>, keys: Var<'t>, vals: Var<'t>, mask: Option<&Mask>) -> Result<Var<'t>> {
    let d = queries.cols();
    if keys.cols() != d {
        return Err(Error::shape("attention", &queries.shape(), &keys.shape()));
    }
    if vals.rows() != keys.rows() {
        return Err(Error::shape("attention", &keys.shape(), &vals.shape()));
    }
    let scores = queries.matmul(keys.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    let scores = match mask {
        Some(mask) => {
            if mask.shape() != [queries.rows(), keys.rows()] {
                return Err(Error::shape(
                    "attention mask",
                    &mask.shape(),
                    &[queries.rows(), keys.rows()],
                ));
            }
            if let Some(row) = mask.first_empty_row() {
                return Err(Error::Invalid(format!("attention row {row} is fully masked")));
            }
            scores.mask_fill(mask)?
        }
        None => scores,
    };
    scores.softmax()?.matmul(vals)
}

impl Tape {
    /// Convenience for [`attention`].
    pub fn attention<'t>(
        &'t self,
        queries: Var<'t>,
        keys: Var<'t>,
        vals: Var<'t>,
        mask: Option<&Mask>,
    ) -> Result<Var<'t>> {
        attention(queries, keys, vals, mask)
    }
}
