//! Define-by-run reverse-mode differentiation tape.
//!
//! Every operation validates shapes, computes its output eagerly, and records
//! a node. Node ids are tape indices, so insertion order is a topological
//! order and one reverse sweep suffices. A graph is built per forward pass and
//! thrown away after `backward`.

use crate::autodiff::tensor::{matmul, transpose, Tensor};
use crate::error::{Error, Result};

/// Additive bias marking attention positions that must receive exactly zero
/// weight. Finite (not -inf) so intermediate arithmetic stays clean; after
/// max-subtraction the exponential underflows to exactly 0.0.
pub const NEG_LARGE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// a [r x c] + row b [1 x c] broadcast over rows.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    ConcatCols(Vec<NodeId>),
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Mean(NodeId),
    SumSq(NodeId),
    /// Value passes through, gradient stops; the child link is kept only so
    /// debug dumps show the full graph.
    StopGrad(#[allow(dead_code)] NodeId),
    /// ln(m + eps) on allowed entries, NEG_LARGE elsewhere.
    MaskToBias {
        m: NodeId,
        allowed: Vec<bool>,
        eps: f64,
    },
    /// Dense grid from a column of values placed at `positions`; everything
    /// else is exactly 0. The grid shape lives in the node's value.
    ScatterPairs {
        vals: NodeId,
        positions: Vec<(usize, usize)>,
    },
    /// Elementwise binary cross-entropy of probabilities against a constant
    /// label, with arguments clamped at 1e-12 before ln.
    Bce {
        p: NodeId,
        label: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

const BCE_FLOOR: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, if any
    /// flowed there.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, true)
    }

    /// Non-trainable leaf (inputs, templates, fixed tables).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), v, ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = transpose(self.value(a));
        let ng = self.needs(a);
        self.push(Op::Transpose(a), v, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut v = ta.clone();
        v.add_assign(tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), v, ng))
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                detail: format!("{:?} + row {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut v = ta.clone();
        for r in 0..v.rows() {
            for c in 0..v.cols() {
                let x = v.get(r, c) + tb.get(0, c);
                v.set(r, c, x);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::AddRow(a, b), v, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(ta.rows(), ta.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), v, ng))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        let ng = self.needs(a);
        self.push(Op::Scale(a, k), v, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.needs(a);
        self.push(Op::Relu(a), v, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid_scalar);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(Op::Clamp(a, lo, hi), v, ng)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.cols() == 0 {
            return Err(Error::Dimension { op: "softmax_rows", detail: "empty row".into() });
        }
        let mut v = Tensor::zeros(ta.rows(), ta.cols());
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let mut exps = vec![0.0; row.len()];
            for (e, &x) in exps.iter_mut().zip(row) {
                *e = (x - max).exp(); // underflows to exactly 0.0 for NEG_LARGE entries
                sum += *e;
            }
            for (c, e) in exps.into_iter().enumerate() {
                v.set(r, c, e / sum);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::SoftmaxRows(a), v, ng))
    }

    /// Row-wise normalization over the last axis with affine gain/bias
    /// (both [1 x d]). Width-1 rows normalize to 0, so the output is the bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.shape() != (1, d) || tb.shape() != (1, d) {
            return Err(Error::Dimension {
                op: "layer_norm",
                detail: format!("x {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let mut v = Tensor::zeros(tx.rows(), d);
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let (mu, inv) = row_moments(row, eps);
            for c in 0..d {
                v.set(r, c, tg.get(0, c) * ((row[c] - mu) * inv) + tb.get(0, c));
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, v, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "concat_cols", detail: "no inputs".into() });
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension {
                op: "concat_cols",
                detail: "row counts differ".into(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                for c in 0..t.cols() {
                    v.set(r, off + c, t.get(r, c));
                }
            }
            off += t.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, ng))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let tx = self.value(x);
        if idx.is_empty() {
            return Err(Error::Dimension { op: "gather_rows", detail: "no indices".into() });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= tx.rows()) {
            return Err(Error::Dimension {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {} rows", tx.rows()),
            });
        }
        let mut v = Tensor::zeros(idx.len(), tx.cols());
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..tx.cols() {
                v.set(r, c, tx.get(i, c));
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Op::GatherRows { x, idx: idx.to_vec() }, v, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if len == 0 || start + len > tx.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                detail: format!("[{start}, {}) out of {} cols", start + len, tx.cols()),
            });
        }
        let mut v = Tensor::zeros(tx.rows(), len);
        for r in 0..tx.rows() {
            for c in 0..len {
                v.set(r, c, tx.get(r, start + c));
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, len }, v, ng))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let v = Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64);
        let ng = self.needs(a);
        self.push(Op::Mean(a), v, ng)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let v = Tensor::scalar(ta.data().iter().map(|x| x * x).sum());
        let ng = self.needs(a);
        self.push(Op::SumSq(a), v, ng)
    }

    /// Identity forward, gradient barrier backward.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(Op::StopGrad(a), v, false)
    }

    /// ln(m + eps) where `allowed` (row-major over m's shape) is true,
    /// NEG_LARGE where false. Gradient flows only through allowed entries.
    pub fn mask_to_bias(&mut self, m: NodeId, allowed: &[bool], eps: f64) -> Result<NodeId> {
        let tm = self.value(m);
        if allowed.len() != tm.len() {
            return Err(Error::Dimension {
                op: "mask_to_bias",
                detail: format!("{} flags for {} entries", allowed.len(), tm.len()),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("mask_to_bias eps must be positive, got {eps}")));
        }
        let data = tm
            .data()
            .iter()
            .zip(allowed)
            .map(|(&x, &ok)| if ok { (x + eps).ln() } else { NEG_LARGE })
            .collect();
        let v = Tensor::new(tm.rows(), tm.cols(), data)?;
        let ng = self.needs(m);
        Ok(self.push(Op::MaskToBias { m, allowed: allowed.to_vec(), eps }, v, ng))
    }

    pub fn scatter_pairs(
        &mut self,
        vals: NodeId,
        positions: &[(usize, usize)],
        rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        let tv = self.value(vals);
        if tv.cols() != 1 || tv.rows() != positions.len() {
            return Err(Error::Dimension {
                op: "scatter_pairs",
                detail: format!("values {:?} vs {} positions", tv.shape(), positions.len()),
            });
        }
        if let Some(&(r, c)) = positions.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::Dimension {
                op: "scatter_pairs",
                detail: format!("position ({r},{c}) outside {rows}x{cols}"),
            });
        }
        let mut v = Tensor::zeros(rows, cols);
        for (p, &(r, c)) in positions.iter().enumerate() {
            v.set(r, c, tv.get(p, 0));
        }
        let ng = self.needs(vals);
        Ok(self.push(Op::ScatterPairs { vals, positions: positions.to_vec() }, v, ng))
    }

    /// Elementwise -[y ln p + (1-y) ln(1-p)] with both ln arguments floored at
    /// 1e-12.
    pub fn bce(&mut self, p: NodeId, label: f64) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::Contract(format!("bce label must be in [0,1], got {label}")));
        }
        let tp = self.value(p);
        let v = tp.map(|x| {
            -(label * x.max(BCE_FLOOR).ln() + (1.0 - label) * (1.0 - x).max(BCE_FLOOR).ln())
        });
        let ng = self.needs(p);
        Ok(self.push(Op::Bce { p, label }, v, ng))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate at every node
    /// on a path to a trainable leaf and stay readable until the next sweep.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad && i != loss.0 {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let bt = transpose(self.value(b));
                    acc(&mut grads[a.0], matmul(g, &bt)?);
                }
                if self.needs(b) {
                    let at = transpose(self.value(a));
                    acc(&mut grads[b.0], matmul(&at, g)?);
                }
            }
            Op::Transpose(a) => {
                if self.needs(a) {
                    acc(&mut grads[a.0], transpose(g));
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    acc(&mut grads[a.0], g.clone());
                }
                if self.needs(b) {
                    acc(&mut grads[b.0], g.clone());
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(a) {
                    acc(&mut grads[a.0], g.clone());
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db.set(0, c, db.get(0, c) + g.get(r, c));
                        }
                    }
                    acc(&mut grads[b.0], db);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let tb = self.value(b);
                    let da = elementwise_mul(g, tb);
                    acc(&mut grads[a.0], da);
                }
                if self.needs(b) {
                    let ta = self.value(a);
                    let db = elementwise_mul(g, ta);
                    acc(&mut grads[b.0], db);
                }
            }
            Op::Scale(a, k) => {
                if self.needs(a) {
                    acc(&mut grads[a.0], g.map(|x| k * x));
                }
            }
            Op::Relu(a) => {
                if self.needs(a) {
                    let tx = self.value(a);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    acc(&mut grads[a.0], Tensor::new(g.rows(), g.cols(), data)?);
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(a) {
                    let s = self.value(NodeId(i));
                    let data = g
                        .data()
                        .iter()
                        .zip(s.data())
                        .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                        .collect();
                    acc(&mut grads[a.0], Tensor::new(g.rows(), g.cols(), data)?);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.needs(a) {
                    let tx = self.value(a);
                    let data = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&gv, &xv)| if (lo..=hi).contains(&xv) { gv } else { 0.0 })
                        .collect();
                    acc(&mut grads[a.0], Tensor::new(g.rows(), g.cols(), data)?);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(a) {
                    let w = self.value(NodeId(i));
                    let mut dx = Tensor::zeros(w.rows(), w.cols());
                    for r in 0..w.rows() {
                        let dot: f64 =
                            (0..w.cols()).map(|c| g.get(r, c) * w.get(r, c)).sum();
                        for c in 0..w.cols() {
                            dx.set(r, c, w.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads[a.0], dx);
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = self.value(x);
                let tg = self.value(gain);
                let d = tx.cols();
                let mut dx = Tensor::zeros(tx.rows(), d);
                let mut dgain = Tensor::zeros(1, d);
                let mut dbias = Tensor::zeros(1, d);
                for r in 0..tx.rows() {
                    let row = tx.row(r);
                    let (mu, inv) = row_moments(row, eps);
                    let xh: Vec<f64> = row.iter().map(|&v| (v - mu) * inv).collect();
                    let dxh: Vec<f64> = (0..d).map(|c| g.get(r, c) * tg.get(0, c)).collect();
                    let m1 = dxh.iter().sum::<f64>() / d as f64;
                    let m2 = dxh.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        dx.set(r, c, inv * (dxh[c] - m1 - xh[c] * m2));
                        dgain.set(0, c, dgain.get(0, c) + g.get(r, c) * xh[c]);
                        dbias.set(0, c, dbias.get(0, c) + g.get(r, c));
                    }
                }
                if self.needs(x) {
                    acc(&mut grads[x.0], dx);
                }
                if self.needs(gain) {
                    acc(&mut grads[gain.0], dgain);
                }
                if self.needs(bias) {
                    acc(&mut grads[bias.0], dbias);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in &parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            for c in 0..w {
                                dp.set(r, c, g.get(r, off + c));
                            }
                        }
                        acc(&mut grads[p.0], dp);
                    }
                    off += w;
                }
            }
            Op::GatherRows { x, idx } => {
                if self.needs(x) {
                    let tx = self.value(x);
                    let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..tx.cols() {
                            dx.set(src, c, dx.get(src, c) + g.get(r, c));
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs(x) {
                    let tx = self.value(x);
                    let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                    for r in 0..g.rows() {
                        for c in 0..len {
                            dx.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
            }
            Op::Mean(a) => {
                if self.needs(a) {
                    let ta = self.value(a);
                    let gv = g.as_scalar()? / ta.len() as f64;
                    acc(&mut grads[a.0], Tensor::filled(ta.rows(), ta.cols(), gv));
                }
            }
            Op::SumSq(a) => {
                if self.needs(a) {
                    let ta = self.value(a);
                    let gv = g.as_scalar()?;
                    acc(&mut grads[a.0], ta.map(|x| 2.0 * x * gv));
                }
            }
            Op::MaskToBias { m, allowed, eps } => {
                if self.needs(m) {
                    let tm = self.value(m);
                    let data = g
                        .data()
                        .iter()
                        .zip(tm.data())
                        .zip(&allowed)
                        .map(|((&gv, &mv), &ok)| if ok { gv / (mv + eps) } else { 0.0 })
                        .collect();
                    acc(&mut grads[m.0], Tensor::new(tm.rows(), tm.cols(), data)?);
                }
            }
            Op::ScatterPairs { vals, positions, .. } => {
                if self.needs(vals) {
                    let mut dv = Tensor::zeros(positions.len(), 1);
                    for (p, &(r, c)) in positions.iter().enumerate() {
                        dv.set(p, 0, dv.get(p, 0) + g.get(r, c));
                    }
                    acc(&mut grads[vals.0], dv);
                }
            }
            Op::Bce { p, label } => {
                if self.needs(p) {
                    let tp = self.value(p);
                    let data = g
                        .data()
                        .iter()
                        .zip(tp.data())
                        .map(|(&gv, &pv)| {
                            let mut d = 0.0;
                            if pv > BCE_FLOOR {
                                d -= label / pv;
                            }
                            if 1.0 - pv > BCE_FLOOR {
                                d += (1.0 - label) / (1.0 - pv);
                            }
                            gv * d
                        })
                        .collect();
                    acc(&mut grads[p.0], Tensor::new(tp.rows(), tp.cols(), data)?);
                }
            }
        }
        Ok(())
    }
}

fn acc(slot: &mut Option<Tensor>, add: Tensor) {
    match slot {
        Some(t) => t.add_assign(&add),
        None => *slot = Some(add),
    }
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes already checked")
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
    (mu, 1.0 / (var + eps).sqrt())
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
