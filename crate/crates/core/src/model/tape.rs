//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] records a computation graph eagerly: each operation computes
//! its value when created and remembers its inputs, and [`Tape::backward`]
//! walks the nodes in reverse creation order accumulating exact gradients.
//! Parameter leaves reference matrices owned by the caller instead of
//! cloning them into the graph.

use ndarray::{s, Array2, ArrayView2, Axis};

pub type NodeId = usize;

enum Value {
    Owned(Array2<f64>),
    /// Index into the parameter store passed to [`Tape::new`].
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Row-broadcast bias add; second input is 1 x n.
    AddBias(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    /// x, gain (1 x d), bias (1 x d)
    LayerNorm(NodeId, NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    /// input, first column, width
    SliceCols(NodeId, usize, usize),
    /// logits (t x v), one target id per row; value is 1 x 1.
    CrossEntropyMean(NodeId, Vec<u32>),
}

struct Node {
    op: Op,
    value: Value,
}

const LN_EPS: f64 = 1e-6;

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        match &self.nodes[id].value {
            Value::Owned(a) => a.view(),
            Value::Param(i) => self.params[*i].view(),
        }
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Leaf backed by parameter matrix `index`; one node per parameter.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Param(index),
        });
        let id = self.nodes.len() - 1;
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(bias).row(0);
        self.push(Op::AddBias(a, bias), v)
    }

    /// Adds a constant matrix (no gradient flows into it).
    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        let v = &self.value(a) + c;
        self.push(Op::AddConst(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).to_owned() * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let g = self.value(gain).row(0).to_owned();
        let b = self.value(bias).row(0).to_owned();
        let mut v = xv.to_owned();
        for mut row in v.rows_mut() {
            let d = row.len() as f64;
            let mean = row.sum() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let s = (var + LN_EPS).sqrt();
            for (j, val) in row.iter_mut().enumerate() {
                *val = (*val - mean) / s * g[j] + b[j];
            }
        }
        self.push(Op::LayerNorm(x, gain, bias), v)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat shape mismatch");
        self.push(Op::ConcatCols(parts), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(Op::SliceCols(a, start, width), v)
    }

    /// Token-mean cross entropy of `logits` against one target id per row.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Vec<u32>) -> NodeId {
        let lv = self.value(logits);
        debug_assert_eq!(lv.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in lv.rows().into_iter().zip(&targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t as usize];
        }
        let loss = total / targets.len() as f64;
        self.push(
            Op::CrossEntropyMean(logits, targets),
            Array2::from_elem((1, 1), loss),
        )
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[(0, 0)]
    }

    /// Runs backpropagation from `root` (seeded with gradient 1) and returns
    /// per-node gradients. Nodes unreachable from `root` have `None`.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::from_elem(self.value(root).dim(), 1.0));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddBias(a, bias) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *bias, db);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Tanh(a) => {
                    let y = match &self.nodes[id].value {
                        Value::Owned(v) => v,
                        Value::Param(_) => unreachable!(),
                    };
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(id).to_owned();
                    let inner = (&g * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let da = &y * &(&g - &inner);
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm(x, gain, bias) => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain).row(0).to_owned();
                    let (rows, d) = xv.dim();
                    let mut dx = Array2::zeros((rows, d));
                    let mut dgain = Array2::zeros((1, d));
                    let mut dbias = Array2::zeros((1, d));
                    for r in 0..rows {
                        let row = xv.row(r);
                        let dy = g.row(r);
                        let df = d as f64;
                        let mean = row.sum() / df;
                        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / df;
                        let s = (var + LN_EPS).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) / s).collect();
                        let dxhat: Vec<f64> =
                            dy.iter().zip(gv.iter()).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / df;
                        let m2 = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / df;
                        for j in 0..d {
                            dx[(r, j)] = (dxhat[j] - m1 - xhat[j] * m2) / s;
                            dgain[(0, j)] += dy[j] * xhat[j];
                            dbias[(0, j)] += dy[j];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let slice = g.slice(s![.., offset..offset + w]).to_owned();
                        acc(&mut grads, p, slice);
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, width) => {
                    let dim = self.value(*a).dim();
                    let mut da = Array2::zeros(dim);
                    da.slice_mut(s![.., *start..*start + *width]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::CrossEntropyMean(logits, targets) => {
                    let lv = self.value(*logits);
                    let scale = g[(0, 0)] / targets.len() as f64;
                    let mut dl = Array2::zeros(lv.dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for (c, e) in exps.iter().enumerate() {
                            let p = e / sum;
                            dl[(r, c)] = scale * (p - f64::from(c as u32 == t));
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        grads
    }

    /// Gradient accumulated on the node backing parameter `index`, if any.
    pub fn param_grad<'g>(
        &self,
        grads: &'g [Option<Array2<f64>>],
        index: usize,
    ) -> Option<&'g Array2<f64>> {
        self.param_nodes[index].and_then(|id| grads[id].as_ref())
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}
