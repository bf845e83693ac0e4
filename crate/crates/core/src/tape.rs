//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Operations append nodes in execution order, so every input id precedes its
//! consumers and the backward sweep is a single reverse pass that touches each
//! node once. The graph is rebuilt from scratch every step; a tape belongs to
//! one thread.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// NaN/Inf detection at op boundaries. `On` by default; flow inverses divide
/// by the scale and must fail loudly rather than propagate garbage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checks {
    On,
    Off,
}

#[derive(Debug, Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum UnKind {
    Exp,
    Log,
    Tanh,
    Sigmoid,
}

/// How the right operand of a binary op maps onto the left.
#[derive(Debug, Clone, Copy)]
enum Bcast {
    /// Identical shapes.
    Same,
    /// b is a row vector `[c]` applied to every row of a `[r,c]`.
    RowRhs,
    /// b is a column `[r,1]` applied to every column of a `[r,c]`.
    ColRhs,
    /// b is a scalar.
    ScalarRhs,
    /// a is a scalar, result has b's shape.
    ScalarLhs,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Binary {
        kind: BinKind,
        a: usize,
        b: usize,
        bcast: Bcast,
    },
    Unary {
        kind: UnKind,
        a: usize,
    },
    SoftmaxLast {
        a: usize,
    },
    MeanLast {
        a: usize,
    },
    VarLast {
        a: usize,
    },
    SumAll {
        a: usize,
    },
    MeanAll {
        a: usize,
    },
    GatherRows {
        a: usize,
        idx: Vec<usize>,
    },
    ScatterRows {
        parts: Vec<(Vec<usize>, usize)>,
    },
    Concat {
        a: usize,
        b: usize,
        axis: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
        end: usize,
    },
}

pub struct Tape {
    tensors: Vec<Tensor>,
    nodes: Vec<Node>,
    needs: Vec<bool>,
    checks: Checks,
}

/// `C[m,n] = A[m,k] · B`, where B is `[k,n]`, or `[n,k]` when `trans_b`.
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, trans_b: bool, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if trans_b {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += aip * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
    }
}

/// `C[m,n] = Aᵀ · B` with A `[k,m]`, B `[k,n]`.
fn mm_ta(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

impl Tape {
    pub fn new(checks: Checks) -> Tape {
        Tape {
            tensors: Vec::new(),
            nodes: Vec::new(),
            needs: Vec::new(),
            checks,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    /// Detached copy of a node's value.
    pub fn value(&self, id: TensorId) -> Tensor {
        let t = &self.tensors[id.0];
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    fn push(&mut self, t: Tensor, node: Node, needs: bool) -> Result<TensorId> {
        if matches!(self.checks, Checks::On) {
            t.assert_finite(op_name(&node))?;
        }
        self.tensors.push(t);
        self.nodes.push(node);
        self.needs.push(needs);
        Ok(TensorId(self.tensors.len() - 1))
    }

    pub fn leaf(&mut self, t: &Tensor) -> Result<TensorId> {
        let needs = t.requires_grad;
        self.push(t.clone(), Node::Leaf, needs)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        let t = Tensor::new(data, shape)?;
        self.push(t, Node::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.push(Tensor::scalar(v), Node::Leaf, false)
    }

    fn shape_err(&self, op: &'static str, a: TensorId, b: TensorId) -> Error {
        Error::Shape {
            op,
            lhs: self.tensors[a.0].shape.clone(),
            rhs: self.tensors[b.0].shape.clone(),
        }
    }

    // ── Binary elementwise ──────────────────────────────────────────────

    fn classify_bcast(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<Bcast> {
        let (ta, tb) = (&self.tensors[a.0], &self.tensors[b.0]);
        if ta.shape == tb.shape {
            return Ok(Bcast::Same);
        }
        if tb.is_scalar() {
            return Ok(Bcast::ScalarRhs);
        }
        if ta.is_scalar() {
            return Ok(Bcast::ScalarLhs);
        }
        if ta.shape.len() == 2 {
            let (r, c) = ta.dims();
            if tb.shape == [c] {
                return Ok(Bcast::RowRhs);
            }
            if tb.shape == [r, 1] {
                return Ok(Bcast::ColRhs);
            }
        }
        Err(self.shape_err(op, a, b))
    }

    fn binary(&mut self, kind: BinKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let op = bin_name(kind);
        let bcast = self.classify_bcast(op, a, b)?;
        let (ta, tb) = (&self.tensors[a.0], &self.tensors[b.0]);
        let out_shape = match bcast {
            Bcast::ScalarLhs => tb.shape.clone(),
            _ => ta.shape.clone(),
        };
        let numel: usize = out_shape.iter().product();
        let cols = match bcast {
            Bcast::RowRhs | Bcast::ColRhs => ta.dims().1,
            _ => 1,
        };
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let (ia, ib) = bcast_index(bcast, i, cols);
            let (x, y) = (ta.data[ia], tb.data[ib]);
            data.push(match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            });
        }
        let needs = self.needs[a.0] || self.needs[b.0];
        self.push(
            Tensor::new(data, out_shape)?,
            Node::Binary {
                kind,
                a: a.0,
                b: b.0,
                bcast,
            },
            needs,
        )
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(BinKind::Div, a, b)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let s = self.scalar(c)?;
        self.mul(a, s)
    }

    /// `c - a` with a constant left side (e.g. `1 - u` in gate updates).
    pub fn sub_from(&mut self, c: f64, a: TensorId) -> Result<TensorId> {
        let s = self.scalar(c)?;
        self.sub(s, a)
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let s = self.scalar(c)?;
        self.add(a, s)
    }

    // ── Unary elementwise ───────────────────────────────────────────────

    fn unary(&mut self, kind: UnKind, a: TensorId) -> Result<TensorId> {
        let ta = &self.tensors[a.0];
        let data: Vec<f64> = ta
            .data
            .iter()
            .map(|&x| match kind {
                UnKind::Exp => x.exp(),
                UnKind::Log => x.ln(),
                UnKind::Tanh => x.tanh(),
                UnKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            })
            .collect();
        let shape = ta.shape.clone();
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, shape)?,
            Node::Unary { kind, a: a.0 },
            needs,
        )
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnKind::Exp, a)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnKind::Log, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(UnKind::Sigmoid, a)
    }

    /// Smooth clamp to (-bound, bound): `bound · tanh(x / bound)`.
    /// Near zero it is the identity to first order.
    pub fn soft_clamp(&mut self, a: TensorId, bound: f64) -> Result<TensorId> {
        let scaled = self.scale(a, 1.0 / bound)?;
        let t = self.tanh(scaled)?;
        self.scale(t, bound)
    }

    /// `sqrt(x)` as `exp(½·ln x)`; defined for strictly positive inputs,
    /// which is all the variance paths ever produce (ε-guarded).
    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        let l = self.log(a)?;
        let h = self.scale(l, 0.5)?;
        self.exp(h)
    }

    // ── Row-structured ops ──────────────────────────────────────────────

    fn require_matrix(&self, op: &'static str, a: TensorId) -> Result<(usize, usize)> {
        let t = &self.tensors[a.0];
        if t.shape.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: t.shape.clone(),
                rhs: vec![],
            });
        }
        Ok((t.shape[0], t.shape[1]))
    }

    /// Row-wise softmax, numerically stabilized by a per-row max shift.
    pub fn softmax_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_matrix("softmax-last-axis", a)?;
        let ta = &self.tensors[a.0];
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &ta.data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, vec![r, c])?,
            Node::SoftmaxLast { a: a.0 },
            needs,
        )
    }

    /// Per-row mean over the channel axis: `[r,c] → [r,1]`.
    pub fn mean_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_matrix("mean-last-axis", a)?;
        let ta = &self.tensors[a.0];
        let data: Vec<f64> = (0..r)
            .map(|i| ta.data[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
            .collect();
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, vec![r, 1])?,
            Node::MeanLast { a: a.0 },
            needs,
        )
    }

    /// Per-row population variance over the channel axis: `[r,c] → [r,1]`.
    pub fn var_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_matrix("var-last-axis", a)?;
        let ta = &self.tensors[a.0];
        let data: Vec<f64> = (0..r)
            .map(|i| {
                let row = &ta.data[i * c..(i + 1) * c];
                let mu = row.iter().sum::<f64>() / c as f64;
                row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / c as f64
            })
            .collect();
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, vec![r, 1])?,
            Node::VarLast { a: a.0 },
            needs,
        )
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.tensors[a.0].data.iter().sum();
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(vec![s], vec![])?,
            Node::SumAll { a: a.0 },
            needs,
        )
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = self.tensors[a.0].numel() as f64;
        let s: f64 = self.tensors[a.0].data.iter().sum::<f64>() / n;
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(vec![s], vec![])?,
            Node::MeanAll { a: a.0 },
            needs,
        )
    }

    /// Select rows by index; indices may repeat (repeat = broadcast rows).
    pub fn gather_rows(&mut self, a: TensorId, idx: &[usize]) -> Result<TensorId> {
        let (r, c) = self.require_matrix("gather-rows", a)?;
        for &i in idx {
            if i >= r {
                return Err(Error::contract(format!(
                    "gather-rows: index {i} out of range for {r} rows"
                )));
            }
        }
        let ta = &self.tensors[a.0];
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&ta.data[i * c..(i + 1) * c]);
        }
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, vec![idx.len(), c])?,
            Node::GatherRows {
                a: a.0,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    /// Place the rows of each source at the given positions of a fresh
    /// `[rows, c]` matrix; uncovered rows are zero. Index sets must be
    /// pairwise disjoint, so a full-cover partition reproduces its sources
    /// bitwise.
    pub fn scatter_rows(
        &mut self,
        parts: &[(&[usize], TensorId)],
        rows: usize,
    ) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::contract("scatter-rows: no source parts".to_string()));
        }
        let (_, c) = self.require_matrix("scatter-rows", parts[0].1)?;
        let mut seen = vec![false; rows];
        for (idx, src) in parts {
            let (pr, pc) = self.require_matrix("scatter-rows", *src)?;
            if pc != c {
                return Err(self.shape_err("scatter-rows", parts[0].1, *src));
            }
            if pr != idx.len() {
                return Err(Error::contract(format!(
                    "scatter-rows: {} indices for {} source rows",
                    idx.len(),
                    pr
                )));
            }
            for &i in *idx {
                if i >= rows {
                    return Err(Error::contract(format!(
                        "scatter-rows: index {i} out of range for {rows} rows"
                    )));
                }
                if seen[i] {
                    return Err(Error::contract(format!(
                        "scatter-rows: index {i} assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        let mut data = vec![0.0; rows * c];
        for (idx, src) in parts {
            let ts = &self.tensors[src.0];
            for (row, &i) in idx.iter().enumerate() {
                data[i * c..(i + 1) * c].copy_from_slice(&ts.data[row * c..(row + 1) * c]);
            }
        }
        let needs = parts.iter().any(|(_, src)| self.needs[src.0]);
        let node_parts: Vec<(Vec<usize>, usize)> = parts
            .iter()
            .map(|(idx, src)| (idx.to_vec(), src.0))
            .collect();
        self.push(
            Tensor::new(data, vec![rows, c])?,
            Node::ScatterRows { parts: node_parts },
            needs,
        )
    }

    /// Concatenate two matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, a: TensorId, b: TensorId, axis: usize) -> Result<TensorId> {
        let (ra, ca) = self.require_matrix("concat-axis", a)?;
        let (rb, cb) = self.require_matrix("concat-axis", b)?;
        let (ta, tb) = (&self.tensors[a.0], &self.tensors[b.0]);
        let (shape, data) = match axis {
            0 => {
                if ca != cb {
                    return Err(self.shape_err("concat-axis", a, b));
                }
                let mut d = ta.data.clone();
                d.extend_from_slice(&tb.data);
                (vec![ra + rb, ca], d)
            }
            1 => {
                if ra != rb {
                    return Err(self.shape_err("concat-axis", a, b));
                }
                let mut d = Vec::with_capacity(ra * (ca + cb));
                for i in 0..ra {
                    d.extend_from_slice(&ta.data[i * ca..(i + 1) * ca]);
                    d.extend_from_slice(&tb.data[i * cb..(i + 1) * cb]);
                }
                (vec![ra, ca + cb], d)
            }
            _ => return Err(Error::contract("concat-axis: axis must be 0 or 1")),
        };
        let needs = self.needs[a.0] || self.needs[b.0];
        self.push(
            Tensor::new(data, shape)?,
            Node::Concat {
                a: a.0,
                b: b.0,
                axis,
            },
            needs,
        )
    }

    /// Contiguous range along `axis` (0 = rows, 1 = columns).
    pub fn slice(
        &mut self,
        a: TensorId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<TensorId> {
        let (r, c) = self.require_matrix("slice", a)?;
        let limit = if axis == 0 { r } else { c };
        if axis > 1 || start >= end || end > limit {
            return Err(Error::contract(format!(
                "slice: range {start}..{end} on axis {axis} of [{r}, {c}]"
            )));
        }
        let ta = &self.tensors[a.0];
        let (shape, data) = if axis == 0 {
            (
                vec![end - start, c],
                ta.data[start * c..end * c].to_vec(),
            )
        } else {
            let mut d = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                d.extend_from_slice(&ta.data[i * c + start..i * c + end]);
            }
            (vec![r, end - start], d)
        };
        let needs = self.needs[a.0];
        self.push(
            Tensor::new(data, shape)?,
            Node::Slice {
                a: a.0,
                axis,
                start,
                end,
            },
            needs,
        )
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        self.slice(a, 1, start, end)
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        self.slice(a, 0, start, end)
    }

    // ── Matrix multiply ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, false)
    }

    /// `A · Bᵀ`; used for attention scores and tied-embedding logits.
    pub fn matmul_tb(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: TensorId, b: TensorId, trans_b: bool) -> Result<TensorId> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (rb, cb) = self.require_matrix("matmul", b)?;
        let n = if trans_b { rb } else { cb };
        let kb = if trans_b { cb } else { rb };
        if kb != k {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut data = vec![0.0; m * n];
        mm(
            &self.tensors[a.0].data,
            &self.tensors[b.0].data,
            m,
            k,
            n,
            trans_b,
            &mut data,
        );
        let needs = self.needs[a.0] || self.needs[b.0];
        self.push(
            Tensor::new(data, vec![m, n])?,
            Node::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
            needs,
        )
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients of every reachable `requires_grad` tensor with
    /// d(loss)/d(tensor). The loss must be a scalar.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.tensors[loss.0].is_scalar() {
            return Err(Error::contract(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.tensors[loss.0].shape
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.needs[i] {
                    self.tensors[i].accumulate_grad(&g, 1.0);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |j: usize, delta: Vec<f64>| {
            if !self.needs[j] {
                return;
            }
            match &mut grads[j] {
                Some(acc) => {
                    for (a, d) in acc.iter_mut().zip(&delta) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i] {
            Node::Leaf => {}
            Node::MatMul { a, b, trans_b } => {
                let (m, k) = self.tensors[*a].dims();
                let n = self.tensors[i].dims().1;
                if self.needs[*a] {
                    // dA = G·Bᵀ, or G·B when B was transposed in forward.
                    let mut da = vec![0.0; m * k];
                    mm(g, &self.tensors[*b].data, m, n, k, !trans_b, &mut da);
                    send(*a, da);
                }
                if self.needs[*b] {
                    let db = if *trans_b {
                        // C = A·Bᵀ ⇒ dB = Gᵀ·A
                        let mut db = vec![0.0; n * k];
                        mm_ta(g, &self.tensors[*a].data, n, m, k, &mut db);
                        db
                    } else {
                        // dB = Aᵀ·G
                        let mut db = vec![0.0; k * n];
                        mm_ta(&self.tensors[*a].data, g, k, m, n, &mut db);
                        db
                    };
                    send(*b, db);
                }
            }
            Node::Binary { kind, a, b, bcast } => {
                let (ta, tb) = (&self.tensors[*a], &self.tensors[*b]);
                let cols = match bcast {
                    Bcast::RowRhs | Bcast::ColRhs => ta.dims().1,
                    _ => 1,
                };
                let mut da = vec![0.0; ta.numel()];
                let mut db = vec![0.0; tb.numel()];
                for (i_out, &gi) in g.iter().enumerate() {
                    let (ia, ib) = bcast_index(*bcast, i_out, cols);
                    let (x, y) = (ta.data[ia], tb.data[ib]);
                    let (dx, dy) = match kind {
                        BinKind::Add => (1.0, 1.0),
                        BinKind::Sub => (1.0, -1.0),
                        BinKind::Mul => (y, x),
                        BinKind::Div => (1.0 / y, -x / (y * y)),
                    };
                    da[ia] += gi * dx;
                    db[ib] += gi * dy;
                }
                send(*a, da);
                send(*b, db);
            }
            Node::Unary { kind, a } => {
                let y = &self.tensors[i].data;
                let x = &self.tensors[*a].data;
                let da: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(j, &gi)| {
                        gi * match kind {
                            UnKind::Exp => y[j],
                            UnKind::Log => 1.0 / x[j],
                            UnKind::Tanh => 1.0 - y[j] * y[j],
                            UnKind::Sigmoid => y[j] * (1.0 - y[j]),
                        }
                    })
                    .collect();
                send(*a, da);
            }
            Node::SoftmaxLast { a } => {
                let y = &self.tensors[i].data;
                let (r, c) = self.tensors[i].dims();
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    let off = row * c;
                    let dot: f64 = (0..c).map(|j| g[off + j] * y[off + j]).sum();
                    for j in 0..c {
                        da[off + j] = y[off + j] * (g[off + j] - dot);
                    }
                }
                send(*a, da);
            }
            Node::MeanLast { a } => {
                let (r, c) = self.tensors[*a].dims();
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    let gi = g[row] / c as f64;
                    for j in 0..c {
                        da[row * c + j] = gi;
                    }
                }
                send(*a, da);
            }
            Node::VarLast { a } => {
                let (r, c) = self.tensors[*a].dims();
                let x = &self.tensors[*a].data;
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    let slice = &x[row * c..(row + 1) * c];
                    let mu = slice.iter().sum::<f64>() / c as f64;
                    let gi = g[row] * 2.0 / c as f64;
                    for j in 0..c {
                        da[row * c + j] = gi * (slice[j] - mu);
                    }
                }
                send(*a, da);
            }
            Node::SumAll { a } => {
                send(*a, vec![g[0]; self.tensors[*a].numel()]);
            }
            Node::MeanAll { a } => {
                let n = self.tensors[*a].numel();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Node::GatherRows { a, idx } => {
                let (r, c) = self.tensors[*a].dims();
                let mut da = vec![0.0; r * c];
                for (row, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[src * c + j] += g[row * c + j];
                    }
                }
                send(*a, da);
            }
            Node::ScatterRows { parts } => {
                let c = self.tensors[i].dims().1;
                for (idx, src) in parts {
                    if !self.needs[*src] {
                        continue;
                    }
                    let mut ds = vec![0.0; idx.len() * c];
                    for (row, &dst) in idx.iter().enumerate() {
                        ds[row * c..(row + 1) * c].copy_from_slice(&g[dst * c..(dst + 1) * c]);
                    }
                    send(*src, ds);
                }
            }
            Node::Concat { a, b, axis } => {
                let (ra, ca) = self.tensors[*a].dims();
                let (rb, cb) = self.tensors[*b].dims();
                if *axis == 0 {
                    send(*a, g[..ra * ca].to_vec());
                    send(*b, g[ra * ca..].to_vec());
                } else {
                    let mut da = vec![0.0; ra * ca];
                    let mut db = vec![0.0; rb * cb];
                    let total = ca + cb;
                    for row in 0..ra {
                        da[row * ca..(row + 1) * ca]
                            .copy_from_slice(&g[row * total..row * total + ca]);
                        db[row * cb..(row + 1) * cb]
                            .copy_from_slice(&g[row * total + ca..(row + 1) * total]);
                    }
                    send(*a, da);
                    send(*b, db);
                }
            }
            Node::Slice {
                a,
                axis,
                start,
                end,
            } => {
                let (r, c) = self.tensors[*a].dims();
                let mut da = vec![0.0; r * c];
                if *axis == 0 {
                    da[start * c..end * c].copy_from_slice(g);
                } else {
                    let w = end - start;
                    for row in 0..r {
                        da[row * c + start..row * c + end]
                            .copy_from_slice(&g[row * w..(row + 1) * w]);
                    }
                }
                send(*a, da);
            }
        }
    }
}

fn bcast_index(bcast: Bcast, i: usize, cols: usize) -> (usize, usize) {
    match bcast {
        Bcast::Same => (i, i),
        Bcast::RowRhs => (i, i % cols),
        Bcast::ColRhs => (i, i / cols),
        Bcast::ScalarRhs => (i, 0),
        Bcast::ScalarLhs => (0, i),
    }
}

fn bin_name(kind: BinKind) -> &'static str {
    match kind {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
        BinKind::Div => "div",
    }
}

fn op_name(node: &Node) -> &'static str {
    match node {
        Node::Leaf => "leaf",
        Node::MatMul { .. } => "matmul",
        Node::Binary { kind, .. } => bin_name(*kind),
        Node::Unary { kind, .. } => match kind {
            UnKind::Exp => "exp",
            UnKind::Log => "log",
            UnKind::Tanh => "tanh",
            UnKind::Sigmoid => "sigmoid",
        },
        Node::SoftmaxLast { .. } => "softmax-last-axis",
        Node::MeanLast { .. } => "mean-last-axis",
        Node::VarLast { .. } => "var-last-axis",
        Node::SumAll { .. } => "sum",
        Node::MeanAll { .. } => "mean",
        Node::GatherRows { .. } => "gather-rows",
        Node::ScatterRows { .. } => "scatter-rows",
        Node::Concat { .. } => "concat-axis",
        Node::Slice { .. } => "slice",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff_grad, max_grad_mismatch};
    use crate::rng::{seed_rng, SeedRng};
    use rand::Rng;

    fn randn_vec(rng: &mut SeedRng, n: usize, offset: f64) -> Vec<f64> {
        (0..n)
            .map(|_| crate::rng::standard_normal(rng) + offset)
            .collect()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new(Checks::On);
        let a = tape
            .constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2])
            .unwrap();
        let eye = tape
            .constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2])
            .unwrap();
        let c = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.data(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn exp_of_zeros_is_ones() {
        let mut tape = Tape::new(Checks::On);
        let a = tape.constant(vec![0.0; 3], vec![3]).unwrap();
        let e = tape.exp(a).unwrap();
        assert_eq!(tape.data(e), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_rows() {
        let mut tape = Tape::new(Checks::On);
        let a = tape.constant(vec![1.0; 4], vec![1, 4]).unwrap();
        let s = tape.softmax_last(a).unwrap();
        for &v in tape.data(s) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = seed_rng(11);
        for _ in 0..50 {
            let mut tape = Tape::new(Checks::On);
            let data = randn_vec(&mut rng, 4 * 7, 0.0);
            let scaled: Vec<f64> = data.iter().map(|x| x * 10.0).collect();
            let a = tape.constant(scaled, vec![4, 7]).unwrap();
            let s = tape.softmax_last(a).unwrap();
            for row in 0..4 {
                let sum: f64 = tape.data(s)[row * 7..(row + 1) * 7].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            }
        }
    }

    #[test]
    fn backward_square() {
        // loss = x·x at x=3 → dx = 6
        let mut tape = Tape::new(Checks::On);
        let x = tape
            .leaf(&Tensor::scalar(3.0).with_grad())
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_sum_exp() {
        // loss = sum(exp(x)) at x=[0, ln 2] → grad [1, 2]
        let mut tape = Tape::new(Checks::On);
        let x = tape
            .leaf(
                &Tensor::new(vec![0.0, 2.0_f64.ln()], vec![2])
                    .unwrap()
                    .with_grad(),
            )
            .unwrap();
        let e = tape.exp(x).unwrap();
        let s = tape.sum_all(e).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!((g[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut tape = Tape::new(Checks::On);
        let x = tape
            .leaf(&Tensor::new(vec![1.0, 2.0], vec![2]).unwrap().with_grad())
            .unwrap();
        let err = tape.backward(x).unwrap_err();
        assert_eq!(err.category(), "contract");
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new(Checks::On);
        let a = tape.constant(vec![0.0; 6], vec![2, 3]).unwrap();
        let b = tape.constant(vec![0.0; 4], vec![2, 2]).unwrap();
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn nonfinite_input_rejected() {
        let mut tape = Tape::new(Checks::On);
        let err = tape
            .constant(vec![f64::NAN], vec![1])
            .unwrap_err();
        assert_eq!(err.category(), "numeric");
        // Division producing Inf is caught at the op boundary.
        let a = tape.constant(vec![1.0], vec![1]).unwrap();
        let z = tape.constant(vec![0.0], vec![1]).unwrap();
        let err = tape.div(a, z).unwrap_err();
        assert_eq!(err.category(), "numeric");
        // And sails through with checks off.
        let mut off = Tape::new(Checks::Off);
        let a = off.constant(vec![1.0], vec![1]).unwrap();
        let z = off.constant(vec![0.0], vec![1]).unwrap();
        let d = off.div(a, z).unwrap();
        assert!(off.data(d)[0].is_infinite());
    }

    #[test]
    fn gather_then_scatter_partition_is_identity() {
        let mut rng = seed_rng(3);
        for _ in 0..50 {
            let rows = rng.gen_range(2..9usize);
            let cols = rng.gen_range(1..6usize);
            let data = randn_vec(&mut rng, rows * cols, 0.0);
            // Random disjoint full-cover partition.
            let mut idx: Vec<usize> = (0..rows).collect();
            for i in (1..rows).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
            let cut = rng.gen_range(1..rows);
            let (left, right) = idx.split_at(cut);

            let mut tape = Tape::new(Checks::On);
            let x = tape.constant(data.clone(), vec![rows, cols]).unwrap();
            let ga = tape.gather_rows(x, left).unwrap();
            let gb = tape.gather_rows(x, right).unwrap();
            let y = tape
                .scatter_rows(&[(left, ga), (right, gb)], rows)
                .unwrap();
            // Bitwise identity: pure row moves, no arithmetic.
            assert_eq!(tape.data(y), &data[..]);
        }
    }

    #[test]
    fn scatter_rejects_overlap() {
        let mut tape = Tape::new(Checks::On);
        let a = tape.constant(vec![0.0; 2], vec![1, 2]).unwrap();
        let b = tape.constant(vec![0.0; 2], vec![1, 2]).unwrap();
        let err = tape.scatter_rows(&[(&[0], a), (&[0], b)], 2).unwrap_err();
        assert_eq!(err.category(), "contract");
    }

    // ── Finite-difference gradient checks, one per op ───────────────────
    //
    // Each check builds `loss = Σ w ⊙ op(inputs)` with fixed random weights,
    // backprops, and compares every input gradient against central
    // differences (h = 1e-5). The acceptance suite runs the same sweep at
    // 100 probes per op; these are quick smoke versions.

    struct OpCase {
        name: &'static str,
        shapes: Vec<Vec<usize>>,
        offset: f64, // shift inputs away from zero for log/div/sqrt
        build: fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    }

    fn run_case(case: &OpCase, probes: usize) {
        let mut rng = seed_rng(0xC0FFEE ^ case.name.len() as u64);
        for probe in 0..probes {
            let inputs: Vec<Vec<f64>> = case
                .shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    randn_vec(&mut rng, n, case.offset)
                })
                .collect();
            let out_len = {
                let mut tape = Tape::new(Checks::Off);
                let ids: Vec<TensorId> = case
                    .shapes
                    .iter()
                    .zip(&inputs)
                    .map(|(s, d)| tape.constant(d.clone(), s.clone()).unwrap())
                    .collect();
                let out = (case.build)(&mut tape, &ids).unwrap();
                tape.data(out).len()
            };
            let w = randn_vec(&mut rng, out_len, 0.0);

            let eval = |datas: &[Vec<f64>]| -> f64 {
                let mut tape = Tape::new(Checks::Off);
                let ids: Vec<TensorId> = case
                    .shapes
                    .iter()
                    .zip(datas)
                    .map(|(s, d)| tape.constant(d.clone(), s.clone()).unwrap())
                    .collect();
                let out = (case.build)(&mut tape, &ids).unwrap();
                tape.data(out)
                    .iter()
                    .zip(&w)
                    .map(|(o, wi)| o * wi)
                    .sum()
            };

            // Analytic grads.
            let mut tape = Tape::new(Checks::Off);
            let ids: Vec<TensorId> = case
                .shapes
                .iter()
                .zip(&inputs)
                .map(|(s, d)| {
                    let t = Tensor::new(d.clone(), s.clone()).unwrap().with_grad();
                    tape.leaf(&t).unwrap()
                })
                .collect();
            let out = (case.build)(&mut tape, &ids).unwrap();
            let wt = tape.constant(w.clone(), tape.shape(out).to_vec()).unwrap();
            let prod = tape.mul(out, wt).unwrap();
            let loss = tape.sum_all(prod).unwrap();
            tape.backward(loss).unwrap();

            for (k, id) in ids.iter().enumerate() {
                let analytic = tape.grad(*id).expect("grad populated").to_vec();
                let mut f = |x: &[f64]| {
                    let mut datas = inputs.clone();
                    datas[k] = x.to_vec();
                    eval(&datas)
                };
                let numeric = central_diff_grad(&mut f, &inputs[k], 1e-5);
                let err = max_grad_mismatch(&analytic, &numeric);
                assert!(
                    err < 1e-4,
                    "{} probe {probe} input {k}: mismatch {err}",
                    case.name
                );
            }
        }
    }

    fn op_cases() -> Vec<OpCase> {
        vec![
            OpCase { name: "matmul", shapes: vec![vec![3, 4], vec![4, 2]], offset: 0.0, build: |t, i| t.matmul(i[0], i[1]) },
            OpCase { name: "matmul_tb", shapes: vec![vec![3, 4], vec![2, 4]], offset: 0.0, build: |t, i| t.matmul_tb(i[0], i[1]) },
            OpCase { name: "add", shapes: vec![vec![3, 4], vec![3, 4]], offset: 0.0, build: |t, i| t.add(i[0], i[1]) },
            OpCase { name: "sub", shapes: vec![vec![3, 4], vec![3, 4]], offset: 0.0, build: |t, i| t.sub(i[0], i[1]) },
            OpCase { name: "mul", shapes: vec![vec![3, 4], vec![3, 4]], offset: 0.0, build: |t, i| t.mul(i[0], i[1]) },
            OpCase { name: "div", shapes: vec![vec![3, 4], vec![3, 4]], offset: 3.0, build: |t, i| t.div(i[0], i[1]) },
            OpCase { name: "add_row", shapes: vec![vec![3, 4], vec![4]], offset: 0.0, build: |t, i| t.add(i[0], i[1]) },
            OpCase { name: "mul_col", shapes: vec![vec![3, 4], vec![3, 1]], offset: 0.0, build: |t, i| t.mul(i[0], i[1]) },
            OpCase { name: "div_col", shapes: vec![vec![3, 4], vec![3, 1]], offset: 3.0, build: |t, i| t.div(i[0], i[1]) },
            OpCase { name: "mul_scalar", shapes: vec![vec![3, 4], vec![]], offset: 0.0, build: |t, i| t.mul(i[0], i[1]) },
            OpCase { name: "sub_scalar_lhs", shapes: vec![vec![], vec![3, 4]], offset: 0.0, build: |t, i| t.sub(i[0], i[1]) },
            OpCase { name: "exp", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.exp(i[0]) },
            OpCase { name: "log", shapes: vec![vec![3, 4]], offset: 4.0, build: |t, i| t.log(i[0]) },
            OpCase { name: "tanh", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.tanh(i[0]) },
            OpCase { name: "sigmoid", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.sigmoid(i[0]) },
            OpCase { name: "softmax_last", shapes: vec![vec![3, 5]], offset: 0.0, build: |t, i| t.softmax_last(i[0]) },
            OpCase { name: "mean_last", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.mean_last(i[0]) },
            OpCase { name: "var_last", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.var_last(i[0]) },
            OpCase { name: "sum_all", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.sum_all(i[0]) },
            OpCase { name: "mean_all", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.mean_all(i[0]) },
            OpCase { name: "gather_rows", shapes: vec![vec![5, 3]], offset: 0.0, build: |t, i| t.gather_rows(i[0], &[0, 2, 2, 4]) },
            OpCase { name: "scatter_rows", shapes: vec![vec![3, 2], vec![2, 2]], offset: 0.0, build: |t, i| t.scatter_rows(&[(&[4, 0, 2], i[0]), (&[1, 3], i[1])], 5) },
            OpCase { name: "concat_rows", shapes: vec![vec![2, 3], vec![4, 3]], offset: 0.0, build: |t, i| t.concat(i[0], i[1], 0) },
            OpCase { name: "concat_cols", shapes: vec![vec![3, 2], vec![3, 4]], offset: 0.0, build: |t, i| t.concat(i[0], i[1], 1) },
            OpCase { name: "slice_rows", shapes: vec![vec![5, 3]], offset: 0.0, build: |t, i| t.slice_rows(i[0], 1, 4) },
            OpCase { name: "slice_cols", shapes: vec![vec![3, 5]], offset: 0.0, build: |t, i| t.slice_cols(i[0], 2, 5) },
            OpCase { name: "soft_clamp", shapes: vec![vec![3, 4]], offset: 0.0, build: |t, i| t.soft_clamp(i[0], 5.0) },
            OpCase { name: "sqrt", shapes: vec![vec![3, 4]], offset: 4.0, build: |t, i| t.sqrt(i[0]) },
        ]
    }

    #[test]
    fn per_op_gradient_checks() {
        for case in op_cases() {
            run_case(&case, 5);
        }
    }

    #[test]
    fn random_composite_matches_finite_differences() {
        // Three stacked layers: tanh(W1·x), sigmoid(W2·h), mean. Grads of
        // x, W1, W2 against central differences across many seeds.
        for seed in 0..100u64 {
            let mut rng = seed_rng(seed);
            let (d_in, d_h, d_out) = (3, 4, 2);
            let x = randn_vec(&mut rng, d_in * 1, 0.0);
            let w1 = randn_vec(&mut rng, d_in * d_h, 0.0);
            let w2 = randn_vec(&mut rng, d_h * d_out, 0.0);

            let eval = |x: &[f64], w1: &[f64], w2: &[f64]| -> f64 {
                let mut t = Tape::new(Checks::Off);
                let xi = t.constant(x.to_vec(), vec![1, d_in]).unwrap();
                let w1i = t.constant(w1.to_vec(), vec![d_in, d_h]).unwrap();
                let w2i = t.constant(w2.to_vec(), vec![d_h, d_out]).unwrap();
                let h = t.matmul(xi, w1i).unwrap();
                let h = t.tanh(h).unwrap();
                let o = t.matmul(h, w2i).unwrap();
                let o = t.sigmoid(o).unwrap();
                let m = t.mean_all(o).unwrap();
                t.data(m)[0]
            };

            let mut t = Tape::new(Checks::Off);
            let xi = t
                .leaf(&Tensor::new(x.clone(), vec![1, d_in]).unwrap().with_grad())
                .unwrap();
            let w1i = t
                .leaf(&Tensor::new(w1.clone(), vec![d_in, d_h]).unwrap().with_grad())
                .unwrap();
            let w2i = t
                .leaf(&Tensor::new(w2.clone(), vec![d_h, d_out]).unwrap().with_grad())
                .unwrap();
            let h = t.matmul(xi, w1i).unwrap();
            let h = t.tanh(h).unwrap();
            let o = t.matmul(h, w2i).unwrap();
            let o = t.sigmoid(o).unwrap();
            let m = t.mean_all(o).unwrap();
            t.backward(m).unwrap();

            for (data, id, pick) in [
                (&x, xi, 0usize),
                (&w1, w1i, 1),
                (&w2, w2i, 2),
            ] {
                let mut f = |v: &[f64]| match pick {
                    0 => eval(v, &w1, &w2),
                    1 => eval(&x, v, &w2),
                    _ => eval(&x, &w1, v),
                };
                let numeric = central_diff_grad(&mut f, data, 1e-5);
                let err = max_grad_mismatch(t.grad(id).unwrap(), &numeric);
                assert!(err < 1e-4, "seed {seed} input {pick}: {err}");
            }
        }
    }

    #[test]
    fn shared_input_grads_accumulate() {
        // y = x ⊙ x + x: dy/dx = 2x + 1.
        let mut tape = Tape::new(Checks::On);
        let x = tape
            .leaf(&Tensor::new(vec![2.0], vec![]).unwrap().with_grad())
            .unwrap();
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0]);
    }
}
