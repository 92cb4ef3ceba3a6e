//! Vector-valued Wengert tape.
//!
//! Every node holds a dense `f64` vector (scalars are length-1 vectors) and the
//! operation that produced it. Operands always precede the node that uses them,
//! so a single reverse sweep over the node list propagates adjoints.

use super::kernels::{axpy, dot};
use super::params::{GradientTable, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Fixed linear operator registered on the tape as a constant (no gradient for
/// its entries, only for its input).
pub trait LinearMap: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = M x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `dx += Mᵀ dy`
    fn apply_transpose_add(&self, dy: &[f64], dx: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Input,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: ParamId,
        x: NodeId,
    },
    MatVec {
        map: &'a dyn LinearMap,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    ScaleShift {
        x: NodeId,
        scale: f64,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    BoundedSigmoid {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Log(NodeId),
    Square(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Standardize {
        x: NodeId,
        inv_std: f64,
        centered: bool,
    },
    Mean(NodeId),
    SumSquares(NodeId),
    Dot(NodeId, NodeId),
    Pick {
        x: NodeId,
        index: usize,
    },
    LinComb(Vec<(NodeId, f64)>),
}

struct Node<'a> {
    op: Op<'a>,
    value: Vec<f64>,
}

/// Records a forward computation over parameters borrowed from a [`ParamStore`].
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn push(&mut self, op: Op<'a>, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn map(&mut self, x: NodeId, op: Op<'a>, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        self.push(op, value)
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::Dimension {
                op,
                expected: la,
                got: lb,
            });
        }
        Ok(())
    }

    /// Constant vector; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Copy of `x`'s value with the gradient path cut.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.clone();
        self.push(Op::Input, value)
    }

    /// Trainable parameter viewed as a flat vector.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.get(id).data().to_vec();
        self.push(Op::Param(id), value)
    }

    /// `W x + b` with `W`, `b` trainable.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wt = self.params.get(w);
        let bt = self.params.get(b);
        let xv = &self.nodes[x.0].value;
        if wt.cols() != xv.len() {
            return Err(Error::Dimension {
                op: "affine",
                expected: wt.cols(),
                got: xv.len(),
            });
        }
        if bt.len() != wt.rows() {
            return Err(Error::Dimension {
                op: "affine bias",
                expected: wt.rows(),
                got: bt.len(),
            });
        }
        let value = (0..wt.rows())
            .map(|i| dot(wt.row(i), xv) + bt.data()[i])
            .collect();
        Ok(self.push(Op::Affine { w, b, x }, value))
    }

    /// `M x` for a constant operator `M`.
    pub fn matvec(&mut self, map: &'a dyn LinearMap, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        if map.cols() != xv.len() {
            return Err(Error::Dimension {
                op: "matvec",
                expected: map.cols(),
                got: xv.len(),
            });
        }
        let mut value = vec![0.0; map.rows()];
        map.apply(xv, &mut value);
        Ok(self.push(Op::MatVec { map, x }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("hadamard", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Elementwise `scale * x + shift` with constant `scale`, `shift`.
    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.map(x, Op::ScaleShift { x, scale }, |v| scale * v + shift)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    /// `lo + (hi - lo) σ(x)`, kept strictly inside `(lo, hi)` even when σ saturates.
    pub fn bounded_sigmoid(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        debug_assert!(lo < hi);
        self.map(x, Op::BoundedSigmoid { x, lo, hi }, |v| {
            let m = lo + (hi - lo) * sigmoid(v);
            m.clamp(lo.next_up(), hi.next_down())
        })
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Square(x), |v| v * v)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = softmax_values(&self.nodes[x.0].value);
        self.push(Op::Softmax(x), value)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let max = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = xv.iter().map(|v| v - lse).collect();
        self.push(Op::LogSoftmax(x), value)
    }

    /// `(x - mean(x)) / sqrt(var(x) + eps)` (population variance). With `centered`
    /// off the numerator is `x` itself.
    pub fn standardize(&mut self, x: NodeId, eps: f64, centered: bool) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        let value = if centered {
            xv.iter().map(|v| (v - mean) * inv_std).collect()
        } else {
            xv.iter().map(|v| v * inv_std).collect()
        };
        self.push(
            Op::Standardize {
                x,
                inv_std,
                centered,
            },
            value,
        )
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let value = vec![xv.iter().sum::<f64>() / xv.len() as f64];
        self.push(Op::Mean(x), value)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let value = vec![dot(xv, xv)];
        self.push(Op::SumSquares(x), value)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("dot", a, b)?;
        let value = vec![dot(&self.nodes[a.0].value, &self.nodes[b.0].value)];
        Ok(self.push(Op::Dot(a, b), value))
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        if index >= xv.len() {
            return Err(Error::Dimension {
                op: "pick",
                expected: xv.len(),
                got: index,
            });
        }
        let value = vec![xv[index]];
        Ok(self.push(Op::Pick { x, index }, value))
    }

    /// `Σ cᵢ xᵢ` over equal-length nodes with constant coefficients.
    pub fn lin_comb(&mut self, terms: Vec<(NodeId, f64)>) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::usage("lin_comb needs at least one term"));
        };
        let len = self.nodes[first.0].value.len();
        let mut value = vec![0.0; len];
        for &(id, c) in &terms {
            self.same_len("lin_comb", first, id)?;
            axpy(c, &self.nodes[id.0].value, &mut value);
        }
        Ok(self.push(Op::LinComb(terms), value))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<GradientTable> {
        let mut grads = GradientTable::zeros_like(self.params);
        self.backward_into(root, &mut grads)?;
        Ok(grads)
    }

    /// Reverse sweep accumulating into an existing table.
    pub fn backward_into(&self, root: NodeId, grads: &mut GradientTable) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::usage("backward root is not on this tape"));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward root must be scalar, got length {}",
                self.nodes[root.0].value.len()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    axpy(1.0, &g, grads.get_mut(*id).data_mut());
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    let dx = slot(&mut adj, *x, xv.len());
                    let n = wt.cols();
                    let gw = grads.get_mut(*w).data_mut();
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        axpy(gr, xv, &mut gw[r * n..(r + 1) * n]);
                        axpy(gr, wt.row(r), dx);
                    }
                    axpy(1.0, &g, grads.get_mut(*b).data_mut());
                }
                Op::MatVec { map, x } => {
                    let dx = slot(&mut adj, *x, map.cols());
                    map.apply_transpose_add(&g, dx);
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, slot(&mut adj, *a, g.len()));
                    axpy(1.0, &g, slot(&mut adj, *b, g.len()));
                }
                Op::Hadamard(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    {
                        let da = slot(&mut adj, *a, g.len());
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    let db = slot(&mut adj, *b, g.len());
                    for ((d, gi), ai) in db.iter_mut().zip(&g).zip(av) {
                        *d += gi * ai;
                    }
                }
                Op::ScaleShift { x, scale } => {
                    axpy(*scale, &g, slot(&mut adj, *x, g.len()));
                }
                Op::Tanh(x) => {
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::BoundedSigmoid { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    let span = hi - lo;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        let s = sigmoid(*xi);
                        *d += gi * span * s * (1.0 - s);
                    }
                }
                Op::Log(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += gi / xi;
                    }
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += 2.0 * gi * xi;
                    }
                }
                Op::Softmax(x) => {
                    let gp = dot(&g, y);
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), pi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += pi * (gi - gp);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), li) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi - li.exp() * total;
                    }
                }
                Op::Standardize {
                    x,
                    inv_std,
                    centered,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let n = g.len() as f64;
                    let dx = slot(&mut adj, *x, g.len());
                    if *centered {
                        let g_mean = g.iter().sum::<f64>() / n;
                        let gy_mean = dot(&g, y) / n;
                        for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                            *d += inv_std * (gi - g_mean - yi * gy_mean);
                        }
                    } else {
                        let mean = xv.iter().sum::<f64>() / n;
                        let gx = dot(&g, xv);
                        let s3 = inv_std * inv_std * inv_std;
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += inv_std * gi - s3 * (xi - mean) * gx / n;
                        }
                    }
                }
                Op::Mean(x) => {
                    let len = self.nodes[x.0].value.len();
                    let dx = slot(&mut adj, *x, len);
                    let c = g[0] / len as f64;
                    dx.iter_mut().for_each(|d| *d += c);
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[x.0].value;
                    axpy(2.0 * g[0], xv, slot(&mut adj, *x, xv.len()));
                }
                Op::Dot(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    axpy(g[0], bv, slot(&mut adj, *a, av.len()));
                    axpy(g[0], av, slot(&mut adj, *b, bv.len()));
                }
                Op::Pick { x, index } => {
                    let len = self.nodes[x.0].value.len();
                    slot(&mut adj, *x, len)[*index] += g[0];
                }
                Op::LinComb(terms) => {
                    for &(id, c) in terms {
                        axpy(c, &g, slot(&mut adj, id, g.len()));
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}
